//! Exact and H-approximated joint Gaussian log-likelihood:
//!
//!   L(theta) = -(n/2) log(2 pi) - (1/2) log det C(theta)
//!              - (1/2) Z^T C(theta)^{-1} Z.
//!
//! The dense path factors the covariance directly; the H path builds,
//! symmetrizes and factorizes the compressed operator and evaluates the
//! quadratic form through triangular solves, with a factor-preconditioned
//! conjugate-gradient route kept as a cross-check.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::geometry::{
    build_block_cluster_tree, build_cluster_tree, BlockClusterTree, ClusterTree, PermDirection,
    PointSet,
};
use crate::hmatrix::{build_hmatrix, factorize, FactorForm, HFactor, HMatrix};
use crate::kernel::{dense_covariance_with_guard, KernelEvaluator, MaternParams};
use crate::lowrank::TruncationControl;
use crate::{Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Observations at scattered locations, in external (file) order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub points: Arc<PointSet>,
    pub z: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Arc<PointSet>, z: Vec<f64>) -> Result<Self> {
        if z.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite observation".into()));
        }
        Ok(Self { points, z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Log-likelihood value with its components and factor diagnostics.
#[derive(Debug, Clone)]
pub struct LoglikResult {
    pub loglik: f64,
    pub logdet: f64,
    pub quadform: f64,
    pub min_pivot: f64,
    pub max_rank: usize,
    pub wall_time: std::time::Duration,
}

impl LoglikResult {
    fn assemble(
        n: usize,
        logdet: f64,
        quadform: f64,
        min_pivot: f64,
        max_rank: usize,
        started: Instant,
    ) -> Self {
        let loglik = -0.5 * n as f64 * LOG_2PI - 0.5 * logdet - 0.5 * quadform;
        Self {
            loglik,
            logdet,
            quadform,
            min_pivot,
            max_rank,
            wall_time: started.elapsed(),
        }
    }
}

/// Geometry and truncation settings of the H pipeline.
#[derive(Debug, Clone, Copy)]
pub struct HSettings {
    pub ctl: TruncationControl,
    /// Truncation control of the factorization; defaults to `ctl`.
    pub factor_ctl: Option<TruncationControl>,
    pub n_min: usize,
    pub eta: f64,
}

impl Default for HSettings {
    fn default() -> Self {
        Self {
            ctl: TruncationControl::adaptive(1e-5),
            factor_ctl: None,
            n_min: 32,
            eta: 2.0,
        }
    }
}

impl HSettings {
    pub fn with_ctl(ctl: TruncationControl) -> Self {
        Self {
            ctl,
            ..Self::default()
        }
    }
}

/// Exact dense log-likelihood via a point-wise Cholesky factorization.
/// Practical for a few thousand points; guarded at `guard`.
pub fn loglik_dense(ds: &Dataset, p: &MaternParams) -> Result<LoglikResult> {
    loglik_dense_with_guard(ds, p, crate::kernel::DENSE_GUARD)
}

pub fn loglik_dense_with_guard(
    ds: &Dataset,
    p: &MaternParams,
    guard: usize,
) -> Result<LoglikResult> {
    let started = Instant::now();
    let n = ds.len();
    let c = dense_covariance_with_guard(&ds.points, p, guard)?;
    let (l, logdet) = dense_cholesky_logdet(c)?;
    // quadform = || L^{-1} Z ||^2
    let mut v = ds.z.clone();
    for i in 0..n {
        let mut acc = v[i];
        for j in 0..i {
            acc -= l[(i, j)] * v[j];
        }
        v[i] = acc / l[(i, i)];
    }
    let quadform: f64 = v.iter().map(|x| x * x).sum();
    let min_pivot = (0..n).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    Ok(LoglikResult::assemble(
        n, logdet, quadform, min_pivot, 0, started,
    ))
}

/// Dense Cholesky with point-wise pivots; reports the failing pivot index.
fn dense_cholesky_logdet(mut c: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = c.nrows();
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = c[(j, j)];
        for k in 0..j {
            let l = c[(j, k)];
            d -= l * l;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let l = d.sqrt();
        logdet += 2.0 * l.ln();
        c[(j, j)] = l;
        for i in (j + 1)..n {
            let mut v = c[(i, j)];
            for k in 0..j {
                v -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = v / l;
        }
    }
    Ok((c, logdet))
}

/// Reusable H-likelihood evaluator: the cluster tree, block partition, and
/// permuted observations are built once per dataset and shared across
/// parameter trials.
pub struct LikelihoodEvaluator {
    points: Arc<PointSet>,
    ct: Arc<ClusterTree>,
    bct: Arc<BlockClusterTree>,
    z_internal: Vec<f64>,
    settings: HSettings,
}

impl LikelihoodEvaluator {
    pub fn new(ds: &Dataset, settings: HSettings) -> Result<Self> {
        let ct = Arc::new(build_cluster_tree(&ds.points, settings.n_min)?);
        let bct = Arc::new(build_block_cluster_tree(&ct, settings.eta));
        let z_internal = ct.apply_permutation(&ds.z, PermDirection::E2I)?;
        Ok(Self {
            points: Arc::clone(&ds.points),
            ct,
            bct,
            z_internal,
            settings,
        })
    }

    pub fn n(&self) -> usize {
        self.z_internal.len()
    }

    pub fn cluster_tree(&self) -> &Arc<ClusterTree> {
        &self.ct
    }

    pub fn block_cluster_tree(&self) -> &Arc<BlockClusterTree> {
        &self.bct
    }

    pub fn settings(&self) -> &HSettings {
        &self.settings
    }

    /// Builds, symmetrizes, and factorizes the covariance at `p`.
    pub fn factor_at(&self, p: &MaternParams) -> Result<(HMatrix, HFactor)> {
        let ev = KernelEvaluator::new(*p, Arc::clone(&self.points), &self.ct)?;
        let h = build_hmatrix(&self.bct, &ev, &self.settings.ctl)?;
        let sym = h.symmetrize(&self.settings.ctl);
        let fctl = self.settings.factor_ctl.unwrap_or(self.settings.ctl);
        let f = factorize(&sym, &fctl, FactorForm::Ldl)?;
        Ok((sym, f))
    }

    /// H-approximated log-likelihood at `p`: log det from the factor
    /// diagonal, quadratic form from triangular solves.
    pub fn eval(&self, p: &MaternParams) -> Result<LoglikResult> {
        let started = Instant::now();
        let (_, f) = self.factor_at(p)?;
        let logdet = f.log_determinant();
        let quadform = quadform_triangular(&f, &self.z_internal);
        Ok(LoglikResult::assemble(
            self.n(),
            logdet,
            quadform,
            f.min_pivot(),
            f.max_rank(),
            started,
        ))
    }

    /// Like `eval`, but also cross-checks the quadratic form with the
    /// factor-preconditioned CG route and returns (result, cg_quadform,
    /// cg_iterations).
    pub fn eval_with_cg(&self, p: &MaternParams) -> Result<(LoglikResult, f64, usize)> {
        let started = Instant::now();
        let (h, f) = self.factor_at(p)?;
        let logdet = f.log_determinant();
        let quadform = quadform_triangular(&f, &self.z_internal);
        let (cg_value, iters) = quadform_cg(&h, &f, &self.z_internal, 150, 1e-6)?;
        let result = LoglikResult::assemble(
            self.n(),
            logdet,
            quadform,
            f.min_pivot(),
            f.max_rank(),
            started,
        );
        Ok((result, cg_value, iters))
    }
}

/// Quadratic form through the factor: v = L^{-1} Z, then v^T D^{-1} v (LDL)
/// or v^T v (Cholesky).
pub fn quadform_triangular(f: &HFactor, z_internal: &[f64]) -> f64 {
    let mut v = z_internal.to_vec();
    f.solve_lower(&mut v);
    match f.form() {
        FactorForm::Ldl => v.iter().zip(f.diag()).map(|(x, d)| x * x / d).sum(),
        FactorForm::Cholesky => v.iter().map(|x| x * x).sum(),
    }
}

/// Z^T u where C~ u = Z is solved by conjugate gradients preconditioned with
/// the triangular factorization. Stops when the residual drops below
/// `tol * ||Z||`; failing to converge within `max_iter` iterations is an
/// error carrying the final relative residual.
pub fn quadform_cg(
    h: &HMatrix,
    f: &HFactor,
    z_internal: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<(f64, usize)> {
    let n = h.n();
    if z_internal.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z_internal.len(),
        });
    }
    let z_norm = z_internal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if z_norm == 0.0 {
        return Ok((0.0, 0));
    }
    let mut u = vec![0.0; n];
    let mut r = z_internal.to_vec();
    let mut s = f.solve_full(&r);
    let mut p = s.clone();
    let mut rs: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let ap = h.matvec(&p)?;
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Domain(format!(
                "cg encountered nonpositive curvature at iteration {it}"
            )));
        }
        let alpha = rs / pap;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res <= tol * z_norm {
            let dot = z_internal.iter().zip(&u).map(|(a, b)| a * b).sum();
            return Ok((dot, it + 1));
        }
        s = f.solve_full(&r);
        let rs_new: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = s[i] + beta * p[i];
        }
    }
    let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::CgDidNotConverge {
        max_iter,
        residual: res / z_norm,
    })
}

/// One-shot H log-likelihood (builds the trees internally; use
/// [`LikelihoodEvaluator`] to amortize geometry across parameter trials).
pub fn loglik_h(ds: &Dataset, p: &MaternParams, ctl: &TruncationControl) -> Result<LoglikResult> {
    LikelihoodEvaluator::new(ds, HSettings::with_ctl(*ctl))?.eval(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, scale: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen::<f64>() * scale, rng.gen::<f64>() * scale])
            .collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        Dataset::new(Arc::new(PointSet::new(&pts).unwrap()), z).unwrap()
    }

    #[test]
    fn dense_loglik_reference_values() {
        // n = 1, C = [1], Z = [0]: -(1/2) log(2 pi)
        let ps = Arc::new(PointSet::new(&[vec![0.0, 0.0]]).unwrap());
        let ds = Dataset::new(ps, vec![0.0]).unwrap();
        let p = MaternParams::with_nugget(1.0, 1.0, 0.5, 0.0).unwrap();
        let r = loglik_dense(&ds, &p).unwrap();
        assert!((r.loglik + 0.918_938_533_204_672_7).abs() < 1e-12);

        // n = 2, C = I (two far-apart points), Z = (1, 1): -log(2 pi) - 1
        let ps = Arc::new(PointSet::new(&[vec![0.0, 0.0], vec![1e8, 0.0]]).unwrap());
        let ds = Dataset::new(ps, vec![1.0, 1.0]).unwrap();
        let r = loglik_dense(&ds, &p).unwrap();
        assert!((r.loglik - (-LOG_2PI - 1.0)).abs() < 1e-12);
        assert!((-LOG_2PI - 1.0 + 2.837_877_066_409_345).abs() < 1e-9);
    }

    #[test]
    fn dense_loglik_matches_independent_eigen_route() {
        let ds = random_dataset(500, 1.0, 1);
        let p = MaternParams::with_nugget(1.3, 0.3, 0.5, 1e-4).unwrap();
        let r = loglik_dense(&ds, &p).unwrap();

        // independent oracle: eigendecomposition instead of Cholesky
        let c = crate::kernel::dense_covariance(&ds.points, &p).unwrap();
        let eig = nalgebra::SymmetricEigen::new(c);
        let logdet: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        let zt = eig.eigenvectors.transpose() * nalgebra::DVector::from_column_slice(&ds.z);
        let quad: f64 = zt
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(v, l)| v * v / l)
            .sum();
        let oracle = -0.5 * 500.0 * LOG_2PI - 0.5 * logdet - 0.5 * quad;
        assert!(
            ((r.loglik - oracle) / oracle).abs() < 1e-10,
            "{} vs {}",
            r.loglik,
            oracle
        );
    }

    #[test]
    fn component_identity_holds() {
        let ds = random_dataset(300, 1.0, 2);
        let p = MaternParams::with_nugget(1.0, 0.25, 0.5, 1e-4).unwrap();
        for r in [
            loglik_dense(&ds, &p).unwrap(),
            loglik_h(&ds, &p, &TruncationControl::adaptive(1e-6)).unwrap(),
        ] {
            let recomposed = -0.5 * 300.0 * LOG_2PI - 0.5 * r.logdet - 0.5 * r.quadform;
            assert!((r.loglik - recomposed).abs() <= 1e-12 * r.loglik.abs());
        }
    }

    #[test]
    fn small_problem_h_equals_dense() {
        let ds = random_dataset(25, 1.0, 3);
        let p = MaternParams::with_nugget(1.0, 0.4, 1.5, 1e-4).unwrap();
        let dense = loglik_dense(&ds, &p).unwrap();
        let h = loglik_h(&ds, &p, &TruncationControl::adaptive(1e-6)).unwrap();
        assert!(
            (dense.loglik - h.loglik).abs() <= 1e-12 * dense.loglik.abs(),
            "{} vs {}",
            dense.loglik,
            h.loglik
        );
    }

    #[test]
    fn h_loglik_tracks_dense_at_moderate_accuracy() {
        let ds = random_dataset(1000, 1.0, 4);
        // range parameter from the likelihood-profile experiments
        let p = MaternParams::with_nugget(1.0, 0.2337, 0.5, 1e-4).unwrap();
        let dense = loglik_dense(&ds, &p).unwrap();
        let h = loglik_h(&ds, &p, &TruncationControl::adaptive(1e-6)).unwrap();
        let rel = ((h.loglik - dense.loglik) / dense.loglik).abs();
        assert!(rel <= 1e-3, "relative likelihood error {rel:.3e}");
    }

    #[test]
    fn accuracy_sweep_is_mutually_consistent() {
        let ds = random_dataset(600, 1.0, 5);
        let p = MaternParams::with_nugget(1.0, 0.3, 0.5, 1e-4).unwrap();
        let values: Vec<f64> = [1e-7, 1e-9, 1e-11]
            .iter()
            .map(|&eps| {
                loglik_h(&ds, &p, &TruncationControl::adaptive(eps).with_k_max(600))
                    .unwrap()
                    .loglik
            })
            .collect();
        for w in values.windows(2) {
            assert!(
                ((w[0] - w[1]) / w[0]).abs() <= 5e-3,
                "accuracy sweep spread too wide: {values:?}"
            );
        }
    }

    #[test]
    fn monotone_fidelity_in_accuracy() {
        // the nugget keeps even the eps = 1e-3 build positive definite for
        // the smoother smoothness values
        let ds = random_dataset(500, 1.0, 6);
        let evaluator_params: Vec<MaternParams> = [0.45, 0.5, 0.8, 1.2, 1.5]
            .iter()
            .map(|&nu| MaternParams::with_nugget(1.0, 0.3, nu, 1e-2).unwrap())
            .collect();
        for p in &evaluator_params {
            let dense = loglik_dense(&ds, p).unwrap().loglik;
            let mut prev = f64::INFINITY;
            for eps in [1e-3, 1e-5, 1e-7] {
                let h = loglik_h(&ds, p, &TruncationControl::adaptive(eps)).unwrap();
                let err = (h.loglik - dense).abs();
                assert!(
                    err <= prev * 1.05,
                    "nu={}: err {err:.3e} after {prev:.3e}",
                    p.nu
                );
                prev = err;
            }
        }
    }

    #[test]
    fn cg_on_identity_converges_immediately() {
        let ds = random_dataset(64, 1.0, 7);
        let ev = LikelihoodEvaluator::new(&ds, HSettings::default()).unwrap();
        let eye = crate::hmatrix::HMatrix::identity(ev.block_cluster_tree());
        let f = factorize(&eye, &TruncationControl::adaptive(1e-10), FactorForm::Ldl).unwrap();
        let z: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let (value, iters) = quadform_cg(&eye, &f, &z, 150, 1e-6).unwrap();
        let ztz: f64 = z.iter().map(|v| v * v).sum();
        assert_eq!(iters, 1);
        assert!((value - ztz).abs() < 1e-12 * ztz);
    }

    #[test]
    fn cg_quadform_matches_dense_and_triangular() {
        let ds = random_dataset(500, 1.0, 8);
        let p = MaternParams::with_nugget(1.0, 0.3, 0.5, 1e-4).unwrap();
        let ev = LikelihoodEvaluator::new(
            &ds,
            HSettings::with_ctl(TruncationControl::adaptive(1e-5)),
        )
        .unwrap();
        let (result, cg_value, iters) = ev.eval_with_cg(&p).unwrap();
        assert!(iters <= 25, "cg took {iters} iterations");
        let rel = ((result.quadform - cg_value) / result.quadform).abs();
        assert!(rel <= 1e-4, "triangular vs cg quadform differ by {rel:.3e}");

        // dense oracle for the quadratic form
        let c = crate::kernel::dense_covariance(&ds.points, &p).unwrap();
        let chol = nalgebra::Cholesky::new(c).unwrap();
        let sol = chol.solve(&nalgebra::DVector::from_column_slice(&ds.z));
        let oracle: f64 = ds.z.iter().zip(sol.iter()).map(|(a, b)| a * b).sum();
        let rel = ((cg_value - oracle) / oracle).abs();
        assert!(rel <= 1e-4, "cg vs dense quadform differ by {rel:.3e}");
    }

    #[test]
    fn cg_non_convergence_carries_the_residual() {
        let ds = random_dataset(300, 1.0, 9);
        let p = MaternParams::with_nugget(1.0, 0.3, 0.5, 1e-4).unwrap();
        let ev = LikelihoodEvaluator::new(
            &ds,
            HSettings::with_ctl(TruncationControl::adaptive(1e-5)),
        )
        .unwrap();
        let (h, f) = ev.factor_at(&p).unwrap();
        let z: Vec<f64> = (0..300).map(|i| (i as f64 * 0.7).sin()).collect();
        // an unreachable tolerance forces the iteration cap
        match quadform_cg(&h, &f, &z, 1, 1e-30) {
            Err(Error::CgDidNotConverge { max_iter, residual }) => {
                assert_eq!(max_iter, 1);
                assert!(residual.is_finite() && residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn dense_rejects_non_spd() {
        // two coincident points without nugget: exactly singular
        let ps = Arc::new(PointSet::new(&[vec![0.1, 0.1], vec![0.1, 0.1]]).unwrap());
        let ds = Dataset::new(ps, vec![1.0, 2.0]).unwrap();
        let p = MaternParams::with_nugget(1.0, 1.0, 0.5, 0.0).unwrap();
        assert!(matches!(
            loglik_dense(&ds, &p),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
