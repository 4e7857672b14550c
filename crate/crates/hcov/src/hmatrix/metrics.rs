//! Spectral and Frobenius error diagnostics for H-approximations, and the
//! Kullback-Leibler divergence between the exact and approximated zero-mean
//! Gaussians.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::{HFactor, HMatrix, Leaf};

/// Reference operator for error metrics, given in the internal (cluster tree)
/// index ordering.
pub enum Oracle<'a> {
    Dense(&'a DMatrix<f64>),
    H(&'a HMatrix),
}

/// Results of `spectral_error_metrics`; inverse metrics are present only when
/// a factor was supplied, the Frobenius norm only for dense oracles.
#[derive(Debug, Clone)]
pub struct ErrorMetrics {
    /// ||C - C~||_2
    pub diff_norm2: f64,
    /// ||C - C~||_F (dense oracle only)
    pub diff_fro: Option<f64>,
    /// ||C||_2 of the oracle, for relative errors
    pub oracle_norm2: f64,
    /// ||C (C~)^{-1} - I||_2
    pub inverse_identity_norm2: Option<f64>,
    /// ||I - (L L^T)^{-1} C~||_2
    pub factor_residual_norm2: Option<f64>,
}

/// Spectral norm of an implicitly defined operator by power iteration on
/// M^T M: at most `max_iter` iterations (50 by default) with a fixed seeded
/// start vector, stopping early when the estimate moves by less than 1e-6
/// relatively.
pub fn power_iteration_norm2<F, G>(n: usize, apply: F, apply_t: G, max_iter: usize) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0xA17E);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nrm = (x.iter().map(|v| v * v).sum::<f64>()).sqrt();
    x.iter_mut().for_each(|v| *v /= nrm);

    let mut sigma2 = 0.0f64;
    for it in 0..max_iter {
        let y = apply(&x);
        let z = apply_t(&y);
        let prev = sigma2;
        sigma2 = x.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let znorm = (z.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if znorm == 0.0 {
            return 0.0;
        }
        x = z.into_iter().map(|v| v / znorm).collect();
        if it > 2 && (sigma2 - prev).abs() <= 1e-6 * sigma2.abs() {
            break;
        }
    }
    sigma2.max(0.0).sqrt()
}

fn oracle_apply(oracle: &Oracle, x: &[f64]) -> Vec<f64> {
    match oracle {
        Oracle::Dense(m) => {
            let xv = nalgebra::DVector::from_column_slice(x);
            (*m * xv).as_slice().to_vec()
        }
        Oracle::H(h) => h.matvec(x).expect("dimension checked"),
    }
}

/// Frobenius norm of (oracle - H) accumulated leaf by leaf against a dense
/// oracle in internal ordering.
fn frobenius_diff(oracle: &DMatrix<f64>, h: &HMatrix) -> f64 {
    let bct = h.bct();
    let mut acc = 0.0;
    for id in bct.leaves() {
        let rows = bct.row_range(id);
        let cols = bct.col_range(id);
        let sub = oracle.view((rows.start, cols.start), (rows.len(), cols.len()));
        match h.leaf(id).expect("payload at leaf") {
            Leaf::Dense(m) => {
                acc += (sub.into_owned() - m).norm_squared();
            }
            Leaf::LowRank(l) => {
                acc += (sub.into_owned() - l.to_dense()).norm_squared();
            }
        }
    }
    acc.sqrt()
}

/// Build/inverse error diagnostics with norms estimated by power iteration
/// (50 iterations, fixed seed). Both operands must be symmetric; the oracle is
/// given in internal ordering.
pub fn spectral_error_metrics(
    h: &HMatrix,
    oracle: &Oracle,
    factor: Option<&HFactor>,
) -> Result<ErrorMetrics> {
    let n = h.n();
    let oracle_n = match oracle {
        Oracle::Dense(m) => m.nrows(),
        Oracle::H(o) => o.n(),
    };
    if oracle_n != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: oracle_n,
        });
    }

    // C - C~ is symmetric, so M and M^T coincide
    let diff = |x: &[f64]| -> Vec<f64> {
        let mut y = oracle_apply(oracle, x);
        let hy = h.matvec(x).expect("dimension checked");
        y.iter_mut().zip(&hy).for_each(|(a, b)| *a -= b);
        y
    };
    let diff_norm2 = power_iteration_norm2(n, diff, |x| diff(x), 50);
    let oracle_norm2 = power_iteration_norm2(
        n,
        |x| oracle_apply(oracle, x),
        |x| oracle_apply(oracle, x),
        50,
    );
    let diff_fro = match oracle {
        Oracle::Dense(m) => Some(frobenius_diff(m, h)),
        Oracle::H(_) => None,
    };

    let mut inverse_identity_norm2 = None;
    let mut factor_residual_norm2 = None;
    if let Some(f) = factor {
        // M = C (C~)^{-1} - I, M^T = (C~)^{-1} C - I (symmetric solve)
        let inv_err = power_iteration_norm2(
            n,
            |x| {
                let u = f.solve_full(x);
                let mut y = oracle_apply(oracle, &u);
                y.iter_mut().zip(x).for_each(|(a, b)| *a -= b);
                y
            },
            |x| {
                let cx = oracle_apply(oracle, x);
                let mut y = f.solve_full(&cx);
                y.iter_mut().zip(x).for_each(|(a, b)| *a -= b);
                y
            },
            50,
        );
        inverse_identity_norm2 = Some(inv_err);

        // M = I - (L L^T)^{-1} C~, M^T = I - C~ (L L^T)^{-1}
        let residual = power_iteration_norm2(
            n,
            |x| {
                let hx = h.matvec(x).expect("dimension checked");
                let u = f.solve_full(&hx);
                x.iter().zip(&u).map(|(a, b)| a - b).collect()
            },
            |x| {
                let u = f.solve_full(x);
                let hu = h.matvec(&u).expect("dimension checked");
                x.iter().zip(&hu).map(|(a, b)| a - b).collect()
            },
            50,
        );
        factor_residual_norm2 = Some(residual);
    }

    Ok(ErrorMetrics {
        diff_norm2,
        diff_fro,
        oracle_norm2,
        inverse_identity_norm2,
        factor_residual_norm2,
    })
}

/// x - ln(1 + x), nonnegative for x > -1; each eigenvalue contributes this
/// amount to twice the divergence.
fn kld_term(mu: f64) -> f64 {
    (mu - mu.ln_1p()).max(0.0)
}

/// Kullback-Leibler divergence D(N(0, C) || N(0, C~)) for a dense oracle C in
/// internal ordering:
///
///   D = 1/2 (tr(C~^{-1} C) - n - ln det C + ln det C~)
///     = 1/2 sum_i (mu_i - ln(1 + mu_i)),
///
/// where mu_i are the eigenvalues of the C~-whitened difference
/// L^{-1}(C - C~)L^{-T}, C~ = L L^T. The eigenvalue form evaluates the same
/// formula without cancellation, so divergences near machine precision stay
/// positive and monotone under rank refinement.
pub fn kld(oracle: &DMatrix<f64>, h: &HMatrix) -> Result<f64> {
    let n = h.n();
    if oracle.nrows() != n || oracle.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: oracle.nrows(),
        });
    }
    let hd = h.to_dense();
    let chol = nalgebra::Cholesky::new(hd.clone())
        .ok_or(Error::Domain("approximate covariance is not positive definite".into()))?;
    let l = chol.l();
    let delta = oracle - &hd;
    // W = L^{-1} delta L^{-T}
    let half = l
        .solve_lower_triangular(&delta)
        .ok_or(Error::Domain("singular factor".into()))?;
    let w = l
        .solve_lower_triangular(&half.transpose())
        .ok_or(Error::Domain("singular factor".into()))?;
    let w = (&w + w.transpose()) * 0.5;
    let eig = w.symmetric_eigenvalues();
    let mut acc = 0.0;
    for &mu in eig.iter() {
        if mu <= -1.0 {
            return Err(Error::Domain(
                "exact covariance is not positive definite against the factor".into(),
            ));
        }
        acc += kld_term(mu);
    }
    Ok(0.5 * acc)
}

/// Stochastic KLD for large problems where no dense oracle exists: the trace
/// is estimated with Rademacher probes against the factored approximation and
/// both log-determinants come from the factors.
pub fn kld_stochastic(
    c: &HMatrix,
    f_c: &HFactor,
    approx: &HMatrix,
    f_approx: &HFactor,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let n = c.n();
    if approx.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: approx.n(),
        });
    }
    assert!(probes >= 100, "at least 100 Rademacher probes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = 0.0;
    for _ in 0..probes {
        let z: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let cz = c.matvec(&z)?;
        let u = f_approx.solve_full(&cz);
        trace += z.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    }
    trace /= probes as f64;
    let logdet_c = f_c.log_determinant();
    let logdet_a = f_approx.log_determinant();
    Ok(0.5 * (trace - n as f64 - logdet_c + logdet_a))
}
