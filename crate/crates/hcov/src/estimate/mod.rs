//! Parameter estimation: derivative-free maximization of the H-likelihood
//! over (nu, ell, sigma^2), synthetic-field simulation through the factored
//! covariance, subsampling, replicate studies, and likelihood profiles.

mod brent;
mod nelder_mead;

pub use brent::brent_minimize_1d;
pub use nelder_mead::{nelder_mead_minimize, NmResult, NmTraceRow};

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::geometry::{build_block_cluster_tree, build_cluster_tree, ClusterTree, PermDirection, PointSet};
use crate::hmatrix::{build_hmatrix, factorize, FactorForm, HFactor};
use crate::kernel::{KernelEvaluator, MaternParams};
use crate::likelihood::{Dataset, HSettings, LikelihoodEvaluator};
use crate::{Error, Result};

/// Configuration of a maximum-likelihood fit. The optimization variable is
/// ordered (nu, ell, sigma^2); the defaults mirror the reference setup:
/// initial steps 0.02 / 0.04 / 0.01, simplex tolerance 1e-5, at most 200
/// iterations.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// starting point (nu0, ell0, sigma2_0)
    pub initial: [f64; 3],
    /// initial simplex steps for (nu, ell, sigma2)
    pub steps: [f64; 3],
    /// simplex-size tolerance
    pub tol: f64,
    pub max_iter: usize,
    pub settings: HSettings,
    /// nugget held fixed during the fit
    pub nugget: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            initial: [0.5, 1.0, 1.0],
            steps: [0.02, 0.04, 0.01],
            tol: 1e-5,
            max_iter: 200,
            settings: HSettings::default(),
            nugget: crate::kernel::DEFAULT_NUGGET,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps.iter().any(|&s| !(s > 0.0)) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain("invalid fit configuration".into()));
        }
        Ok(())
    }
}

/// One row of the optimizer trace: iteration index, best vertex, objective
/// (the negative log-likelihood being minimized), and simplex size.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub index: usize,
    pub nu: f64,
    pub ell: f64,
    pub sigma2: f64,
    pub negloglik: f64,
    pub size: f64,
}

/// Outcome of a fit: the estimate, the final objective, and the trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub ell: f64,
    pub nu: f64,
    pub sigma2: f64,
    pub negloglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// One replicate of a recovery study. `estimate` is None when the fit failed;
/// the reason is then recorded.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub estimate: Option<(f64, f64, f64)>, // (ell, nu, sigma2)
    pub error: Option<String>,
}

/// Maximizes the H-approximated log-likelihood over (nu, ell, sigma^2) by
/// Nelder-Mead. Nonpositive parameters and failed factorizations score +inf,
/// so the simplex walks around rejected points instead of aborting.
pub fn fit_parameters(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let evaluator = LikelihoodEvaluator::new(ds, cfg.settings)?;
    let nugget = cfg.nugget;
    let objective = |x: &[f64]| -> f64 {
        let (nu, ell, sigma2) = (x[0], x[1], x[2]);
        let Ok(p) = MaternParams::with_nugget(sigma2, ell, nu, nugget) else {
            return f64::INFINITY;
        };
        match evaluator.eval(&p) {
            Ok(r) => -r.loglik,
            Err(_) => f64::INFINITY, // rejected point
        }
    };
    let nm = nelder_mead_minimize(objective, &cfg.initial, &cfg.steps, cfg.tol, cfg.max_iter)?;
    let trace = nm
        .trace
        .iter()
        .map(|row| TraceRow {
            index: row.index,
            nu: row.x[0],
            ell: row.x[1],
            sigma2: row.x[2],
            negloglik: row.value,
            size: row.size,
        })
        .collect();
    Ok(FitResult {
        ell: nm.x[1],
        nu: nm.x[0],
        sigma2: nm.x[2],
        negloglik: nm.value,
        converged: nm.converged,
        iterations: nm.iterations,
        trace,
    })
}

/// Reusable Gaussian-field sampler: the covariance at `p` is factored once
/// and every draw applies Z = L D^{1/2} xi with a seeded white-noise vector,
/// mapped back to external order.
pub struct FieldSimulator {
    points: Arc<PointSet>,
    ct: Arc<ClusterTree>,
    factor: HFactor,
}

impl FieldSimulator {
    pub fn new(ps: &Arc<PointSet>, p: &MaternParams, settings: &HSettings) -> Result<Self> {
        let ct = Arc::new(build_cluster_tree(ps, settings.n_min)?);
        let bct = Arc::new(build_block_cluster_tree(&ct, settings.eta));
        let ev = KernelEvaluator::new(*p, Arc::clone(ps), &ct)?;
        let h = build_hmatrix(&bct, &ev, &settings.ctl)?.symmetrize(&settings.ctl);
        let factor = factorize(&h, &settings.ctl, FactorForm::Ldl)?;
        Ok(Self {
            points: Arc::clone(ps),
            ct,
            factor,
        })
    }

    /// Deterministic draw: the same seed yields the same field bit for bit.
    pub fn draw(&self, seed: u64) -> Dataset {
        let n = self.points.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z_internal = self.factor.apply_scaled_lower(&xi);
        let z = self
            .ct
            .apply_permutation(&z_internal, PermDirection::I2E)
            .expect("length");
        Dataset {
            points: Arc::clone(&self.points),
            z,
        }
    }
}

/// One-shot simulation of a zero-mean Gaussian field with covariance `p`.
pub fn simulate_field(
    ps: &Arc<PointSet>,
    p: &MaternParams,
    settings: &HSettings,
    seed: u64,
) -> Result<Dataset> {
    Ok(FieldSimulator::new(ps, p, settings)?.draw(seed))
}

/// Uniform subsample without replacement. With `min_sep > 0`, candidates
/// closer than `min_sep` to an already selected point are rejected; running
/// out of candidates before reaching `n` is an error.
pub fn subsample(ds: &Dataset, n: usize, seed: u64, min_sep: f64) -> Result<Dataset> {
    let total = ds.len();
    if n > total {
        return Err(Error::DimensionMismatch {
            expected: total,
            found: n,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for &cand in &order {
        if chosen.len() == n {
            break;
        }
        if min_sep > 0.0 {
            let too_close = chosen.iter().any(|&s| {
                let a = ds.points.point(cand);
                let b = ds.points.point(s);
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                d2 < min_sep * min_sep
            });
            if too_close {
                continue;
            }
        }
        chosen.push(cand);
    }
    if chosen.len() < n {
        return Err(Error::SubsampleExhausted {
            target: n,
            min_sep,
        });
    }
    let pts: Vec<Vec<f64>> = chosen.iter().map(|&i| ds.points.point(i).to_vec()).collect();
    let z: Vec<f64> = chosen.iter().map(|&i| ds.z[i]).collect();
    Dataset::new(Arc::new(PointSet::new(&pts)?), z)
}

/// Deterministic sub-seed for replicate (n, index) of a master seed.
pub fn derive_seed(master: u64, n: usize, replicate: usize) -> u64 {
    // splitmix64 over the packed inputs
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(n as u64 + 1))
        .wrapping_add(0x2545_F491_4F6C_DD1Du64.wrapping_mul(replicate as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Recovery study: for each size in `n_list` and each of `m` replicates,
/// subsample the master vector and fit. All replicates come from the one
/// master dataset; sub-seeds derive deterministically from (seed, n, index),
/// so results do not depend on scheduling. Individual failures are recorded,
/// not fatal.
pub fn replicate_study(
    master: &Dataset,
    n_list: &[usize],
    m: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<Vec<ReplicateRecord>> {
    cfg.validate()?;
    if let Some(&max_n) = n_list.iter().max() {
        if max_n > master.len() {
            return Err(Error::DimensionMismatch {
                expected: master.len(),
                found: max_n,
            });
        }
    }
    let tasks: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..m).map(move |rep| (n, rep)))
        .collect();
    let mut records: Vec<ReplicateRecord> = tasks
        .par_iter()
        .map(|&(n, rep)| {
            let sub_seed = derive_seed(seed, n, rep);
            let outcome = subsample(master, n, sub_seed, 0.0)
                .and_then(|sub| fit_parameters(&sub, cfg));
            match outcome {
                Ok(fit) => ReplicateRecord {
                    n,
                    replicate: rep,
                    seed: sub_seed,
                    estimate: Some((fit.ell, fit.nu, fit.sigma2)),
                    error: None,
                },
                Err(e) => ReplicateRecord {
                    n,
                    replicate: rep,
                    seed: sub_seed,
                    estimate: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    // merge in replicate order regardless of completion order
    records.sort_by_key(|r| {
        let pos = n_list.iter().position(|&n| n == r.n).unwrap_or(usize::MAX);
        (pos, r.replicate)
    });
    Ok(records)
}

/// Which Matern parameter a likelihood profile varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileParam {
    Ell,
    Nu,
    Sigma2,
}

/// One grid point of a likelihood profile; the negative log-likelihood and
/// its ingredients, or the failure reason.
#[derive(Debug, Clone)]
pub struct ProfileRow {
    pub value: f64,
    pub negloglik: Option<f64>,
    pub logdet: Option<f64>,
    pub quadform: Option<f64>,
    pub error: Option<String>,
}

/// Evaluates the negative H-log-likelihood over a grid of one parameter with
/// the others held at `fixed`. Per-point failures are recorded in the row.
pub fn profile_likelihood(
    ds: &Dataset,
    vary: ProfileParam,
    grid: &[f64],
    fixed: &MaternParams,
    settings: &HSettings,
) -> Result<Vec<ProfileRow>> {
    if grid.is_empty() || grid.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("profile grid must be positive and nonempty".into()));
    }
    let evaluator = LikelihoodEvaluator::new(ds, *settings)?;
    let rows = grid
        .iter()
        .map(|&value| {
            let mut p = *fixed;
            match vary {
                ProfileParam::Ell => p.ell = value,
                ProfileParam::Nu => p.nu = value,
                ProfileParam::Sigma2 => p.sigma2 = value,
            }
            match p.validate().and_then(|()| evaluator.eval(&p)) {
                Ok(r) => ProfileRow {
                    value,
                    negloglik: Some(-r.loglik),
                    logdet: Some(r.logdet),
                    quadform: Some(r.quadform),
                    error: None,
                },
                Err(e) => ProfileRow {
                    value,
                    negloglik: None,
                    logdet: None,
                    quadform: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}
