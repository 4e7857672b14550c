//! Low-rank blocks, adaptive cross approximation, and truncated-SVD
//! recompression. The ACA builds a factorization R ~ A B^T from O(k) matrix
//! rows and columns of an entrywise-available block; recompression reduces an
//! overstated rank with a small-core SVD.

use nalgebra::{DMatrix, DVector};

/// Factored block R ~ A * B^T with A (p x k) and B (q x k).
#[derive(Debug, Clone)]
pub struct LowRankBlock {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LowRankBlock {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), b.ncols(), "factor ranks must agree");
        Self { a, b }
    }

    /// Rank-0 block of the given shape.
    pub fn zero(p: usize, q: usize) -> Self {
        Self {
            a: DMatrix::zeros(p, 0),
            b: DMatrix::zeros(q, 0),
        }
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.b.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn factor_a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn factor_b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.a * self.b.transpose()
    }

    /// y = (A B^T) x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let t = self.b.transpose() * xv;
        (&self.a * t).as_slice().to_vec()
    }

    /// y = (A B^T)^T x = B (A^T x).
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let t = self.a.transpose() * xv;
        (&self.b * t).as_slice().to_vec()
    }

    /// Swapped factors: (A B^T)^T = B A^T.
    pub fn transpose(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }

    /// In-place scaling by `alpha` (applied to the A factor).
    pub fn scale(&mut self, alpha: f64) {
        self.a *= alpha;
    }

    /// Column-concatenation of factor pairs: self + alpha * other, without
    /// truncation. The result has rank(self) + rank(other).
    pub fn stacked_with(&self, other: &Self, alpha: f64) -> Self {
        assert_eq!(self.nrows(), other.nrows());
        assert_eq!(self.ncols(), other.ncols());
        let k1 = self.rank();
        let k2 = other.rank();
        let mut a = DMatrix::zeros(self.nrows(), k1 + k2);
        let mut b = DMatrix::zeros(self.ncols(), k1 + k2);
        a.view_mut((0, 0), (self.nrows(), k1)).copy_from(&self.a);
        b.view_mut((0, 0), (self.ncols(), k1)).copy_from(&self.b);
        let mut a2 = other.a.clone();
        a2 *= alpha;
        a.view_mut((0, k1), (self.nrows(), k2)).copy_from(&a2);
        b.view_mut((0, k1), (self.ncols(), k2)).copy_from(&other.b);
        Self { a, b }
    }
}

/// Rank truncation policy: a hard rank, or a per-block spectral accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationMode {
    FixedRank(usize),
    Adaptive(f64),
}

/// Truncation control shared by ACA, recompression, and H-arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationControl {
    pub mode: TruncationMode,
    pub k_max: usize,
}

pub const DEFAULT_K_MAX: usize = 100;

impl TruncationControl {
    pub fn fixed_rank(k: usize) -> Self {
        Self {
            mode: TruncationMode::FixedRank(k),
            k_max: DEFAULT_K_MAX.max(k),
        }
    }

    pub fn adaptive(eps: f64) -> Self {
        assert!(eps > 0.0, "adaptive accuracy must be positive");
        Self {
            mode: TruncationMode::Adaptive(eps),
            k_max: DEFAULT_K_MAX,
        }
    }

    pub fn with_k_max(mut self, k_max: usize) -> Self {
        assert!(k_max >= 1);
        self.k_max = k_max;
        self
    }

    /// Number of leading singular values to keep from a descending spectrum.
    fn keep_count(&self, singular: &[f64]) -> usize {
        let cap = self.k_max.min(singular.len());
        match self.mode {
            TruncationMode::FixedRank(k) => k.min(cap),
            TruncationMode::Adaptive(eps) => {
                let s1 = singular.first().copied().unwrap_or(0.0);
                if s1 <= 0.0 {
                    return 0;
                }
                singular[..cap]
                    .iter()
                    .take_while(|&&s| s > eps * s1)
                    .count()
            }
        }
    }
}

/// Adaptive cross approximation with partial pivoting.
///
/// Crosses are accumulated exactly as written in the classical algorithm:
/// pick a row, subtract the current approximation, pivot on the largest
/// residual entry, compute the corresponding residual column, and scale the
/// column by the inverse pivot so the cross interpolates. The first row is
/// row 0; subsequent rows maximize the magnitude of the previous residual
/// column over unused rows. In adaptive mode the loop stops when the rank-1
/// update norm |a| |b| drops below eps times the first update's norm; fixed
/// mode runs to the requested rank. A numerically zero residual row advances
/// to the next unused row, so an exactly representable block terminates with
/// its true rank.
pub fn aca_approximate<F>(entry: F, p: usize, q: usize, ctl: &TruncationControl) -> LowRankBlock
where
    F: Fn(usize, usize) -> f64,
{
    assert!(p >= 1 && q >= 1);
    let target = match ctl.mode {
        TruncationMode::FixedRank(k) => k.min(ctl.k_max),
        TruncationMode::Adaptive(_) => ctl.k_max,
    }
    .min(p.min(q));

    let mut a_cols: Vec<Vec<f64>> = Vec::new();
    let mut b_cols: Vec<Vec<f64>> = Vec::new();
    let mut used_row = vec![false; p];
    let mut used_col = vec![false; q];
    let mut first_cross_norm = 0.0f64;
    let mut max_abs_seen = 0.0f64;
    let mut next_row: Option<usize> = Some(0);

    while a_cols.len() < target {
        let i_star = match next_row.filter(|&i| !used_row[i]) {
            Some(i) => i,
            None => match used_row.iter().position(|&u| !u) {
                Some(i) => i,
                None => break,
            },
        };
        next_row = None;
        used_row[i_star] = true;

        // residual row: R[i*, .] minus the current approximation
        let mut row = vec![0.0; q];
        for (j, r) in row.iter_mut().enumerate() {
            let mut v = entry(i_star, j);
            max_abs_seen = max_abs_seen.max(v.abs());
            for (ac, bc) in a_cols.iter().zip(&b_cols) {
                v -= ac[i_star] * bc[j];
            }
            *r = v;
        }
        let j_star = match (0..q)
            .filter(|&j| !used_col[j])
            .max_by(|&x, &y| row[x].abs().total_cmp(&row[y].abs()))
        {
            Some(j) => j,
            None => break,
        };
        let pivot = row[j_star];
        if pivot.abs() <= 4.0 * f64::EPSILON * max_abs_seen {
            // numerically zero residual row; try the next one
            continue;
        }
        used_col[j_star] = true;

        // residual column at the pivot, scaled by the inverse pivot
        let mut col = vec![0.0; p];
        for (i, c) in col.iter_mut().enumerate() {
            let mut v = entry(i, j_star);
            max_abs_seen = max_abs_seen.max(v.abs());
            for (ac, bc) in a_cols.iter().zip(&b_cols) {
                v -= ac[i] * bc[j_star];
            }
            *c = v / pivot;
        }

        let norm_a = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_b = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cross_norm = norm_a * norm_b;

        next_row = (0..p)
            .filter(|&i| !used_row[i])
            .max_by(|&x, &y| col[x].abs().total_cmp(&col[y].abs()));

        a_cols.push(col);
        b_cols.push(row);
        if a_cols.len() == 1 {
            first_cross_norm = cross_norm;
        }
        if let TruncationMode::Adaptive(eps) = ctl.mode {
            if cross_norm <= eps * first_cross_norm {
                break;
            }
        }
    }

    let k = a_cols.len();
    let a = DMatrix::from_fn(p, k, |i, l| a_cols[l][i]);
    let b = DMatrix::from_fn(q, k, |j, l| b_cols[l][j]);
    LowRankBlock { a, b }
}

/// Reduces the stored rank with two thin QR factorizations and an SVD of the
/// small core, keeping singular values per the truncation control. Costs
/// O((p+q)K^2 + K^3) for input rank K.
pub fn recompress_svd(lr: &LowRankBlock, ctl: &TruncationControl) -> LowRankBlock {
    let k = lr.rank();
    if k == 0 {
        return lr.clone();
    }
    let qr_a = lr.a.clone().qr();
    let qr_b = lr.b.clone().qr();
    let core = qr_a.r() * qr_b.r().transpose();
    let svd = core.svd(true, true);
    let singular = svd.singular_values.as_slice();
    let keep = ctl.keep_count(singular);
    if keep == 0 {
        return LowRankBlock::zero(lr.nrows(), lr.ncols());
    }
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");

    let mut u_scaled = u.columns(0, keep).into_owned();
    for (c, &s) in singular.iter().take(keep).enumerate() {
        u_scaled.column_mut(c).scale_mut(s);
    }
    let a = qr_a.q() * u_scaled;
    let b = qr_b.q() * vt.rows(0, keep).transpose();
    LowRankBlock { a, b }
}

/// Spectral norm of a factored block. Rank one is exact (|a| |b|); higher
/// ranks run at least 20 power iterations on (A B^T)(A B^T)^T applied in
/// factored form with a fixed, seeded start vector.
pub fn lowrank_norm2(lr: &LowRankBlock) -> f64 {
    match lr.rank() {
        0 => 0.0,
        1 => lr.a.column(0).norm() * lr.b.column(0).norm(),
        _ => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9E37_79B9);
            let p = lr.nrows();
            let mut x = DVector::from_fn(p, |_, _| rng.gen::<f64>() - 0.5);
            x /= x.norm();
            let mut sigma2 = 0.0f64;
            for it in 0..100 {
                // z = (A B^T)(B A^T) x in factored form
                let u = lr.a.transpose() * &x;
                let v = &lr.b * u;
                let w = lr.b.transpose() * v;
                let z = &lr.a * w;
                let norm = z.norm();
                if norm == 0.0 {
                    return 0.0;
                }
                let prev = sigma2;
                sigma2 = x.dot(&z);
                x = z / norm;
                if it >= 20 && (sigma2 - prev).abs() <= 1e-9 * sigma2.abs() {
                    break;
                }
            }
            sigma2.max(0.0).sqrt()
        }
    }
}

/// Best low-rank approximation of a dense block by truncated SVD under the
/// given control; the spectral error equals the first discarded singular
/// value.
pub fn dense_to_lowrank(m: &DMatrix<f64>, ctl: &TruncationControl) -> LowRankBlock {
    let svd = m.clone().svd(true, true);
    let singular = svd.singular_values.as_slice();
    let keep = ctl.keep_count(singular);
    if keep == 0 {
        return LowRankBlock::zero(m.nrows(), m.ncols());
    }
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut a = u.columns(0, keep).into_owned();
    for (c, &s) in singular.iter().take(keep).enumerate() {
        a.column_mut(c).scale_mut(s);
    }
    let b = vt.rows(0, keep).transpose();
    LowRankBlock { a, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn dense_norm2(m: &DMatrix<f64>) -> f64 {
        m.clone()
            .svd(false, false)
            .singular_values
            .as_slice()
            .first()
            .copied()
            .unwrap_or(0.0)
    }

    #[test]
    fn exact_rank_one_terminates_after_one_cross() {
        let a = DVector::from_fn(30, |i, _| (i as f64 * 0.7).sin() + 2.0);
        let b = DVector::from_fn(25, |j, _| (j as f64 * 1.3).cos() - 0.4);
        let m = &a * b.transpose();
        let lr = aca_approximate(
            |i, j| m[(i, j)],
            30,
            25,
            &TruncationControl::adaptive(1e-8),
        );
        assert_eq!(lr.rank(), 1);
        let err = dense_norm2(&(lr.to_dense() - &m));
        assert!(err <= 1e-12 * dense_norm2(&m));
    }

    #[test]
    fn zero_matrix_gives_rank_zero() {
        let lr = aca_approximate(|_, _| 0.0, 12, 9, &TruncationControl::adaptive(1e-8));
        assert_eq!(lr.rank(), 0);
        assert_eq!(lr.to_dense(), DMatrix::zeros(12, 9));
    }

    fn matern_block(
        rows: usize,
        cols: usize,
        ell: f64,
        nu: f64,
        gap: f64,
        seed: u64,
    ) -> DMatrix<f64> {
        use crate::kernel::{matern_cov, MaternParams};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = MaternParams::with_nugget(1.0, ell, nu, 0.0).unwrap();
        let xs: Vec<[f64; 2]> = (0..rows)
            .map(|_| [rng.gen::<f64>() * 0.4, rng.gen::<f64>() * 0.4])
            .collect();
        let ys: Vec<[f64; 2]> = (0..cols)
            .map(|_| [gap + rng.gen::<f64>() * 0.4, rng.gen::<f64>() * 0.4])
            .collect();
        DMatrix::from_fn(rows, cols, |i, j| {
            let dx = xs[i][0] - ys[j][0];
            let dy = xs[i][1] - ys[j][1];
            matern_cov((dx * dx + dy * dy).sqrt(), &p)
        })
    }

    #[test]
    fn matern_block_meets_adaptive_tolerance() {
        let m = matern_block(64, 64, 0.25, 0.5, 1.0, 17);
        let ctl = TruncationControl::adaptive(1e-6);
        let lr = aca_approximate(|i, j| m[(i, j)], 64, 64, &ctl);
        let err = dense_norm2(&(lr.to_dense() - &m));
        assert!(err <= 1e-5 * dense_norm2(&m), "err = {err:.3e}");
    }

    #[test]
    fn aca_error_and_evaluation_budget_on_random_matern_blocks() {
        let ctl = TruncationControl::adaptive(1e-6);
        for trial in 0..100 {
            let rows = 24 + (trial * 7) % 233;
            let cols = 24 + (trial * 11) % 233;
            let ell = if trial % 2 == 0 { 0.25 } else { 0.75 };
            let nu = if trial % 3 == 0 { 1.5 } else { 0.5 };
            let m = matern_block(rows, cols, ell, nu, 0.9 + 0.1 * (trial % 5) as f64, trial as u64);
            let evals = Cell::new(0usize);
            let raw = aca_approximate(
                |i, j| {
                    evals.set(evals.get() + 1);
                    m[(i, j)]
                },
                rows,
                cols,
                &ctl,
            );
            // kernel evaluations are bounded by the ACA output rank; the
            // recompression that follows touches no kernel entries
            assert!(
                evals.get() <= raw.rank() * (rows + cols),
                "trial {trial}: {} evals for rank {}",
                evals.get(),
                raw.rank()
            );
            let lr = recompress_svd(&raw, &ctl);
            let err = dense_norm2(&(lr.to_dense() - &m));
            let bound = 10.0 * 1e-6 * dense_norm2(&m);
            assert!(err <= bound, "trial {trial}: err {err:.3e} > {bound:.3e}");
        }
    }

    #[test]
    fn recompress_collapses_duplicated_columns() {
        let base = matern_block(40, 30, 0.25, 0.5, 1.2, 3);
        let lr = dense_to_lowrank(&base, &TruncationControl::adaptive(1e-8));
        let overstated = lr.stacked_with(&LowRankBlock::new(lr.a.clone() * 0.5, lr.b.clone() * 2.0), 1.0);
        assert_eq!(overstated.rank(), 2 * lr.rank());
        let re = recompress_svd(&overstated, &TruncationControl::adaptive(1e-8));
        // duplicated pairs collapse back towards the true numerical rank
        let true_rank = dense_to_lowrank(
            &overstated.to_dense(),
            &TruncationControl::adaptive(1e-8),
        )
        .rank();
        assert_eq!(re.rank(), true_rank);
    }

    #[test]
    fn recompress_fixed_rank_is_lossless_on_rank_k_input() {
        let m = matern_block(25, 20, 0.75, 1.5, 1.5, 8);
        let lr = dense_to_lowrank(&m, &TruncationControl::fixed_rank(6));
        let re = recompress_svd(&lr, &TruncationControl::fixed_rank(6));
        let diff = dense_norm2(&(re.to_dense() - lr.to_dense()));
        assert!(diff <= 1e-12 * dense_norm2(&lr.to_dense()).max(1.0));
    }

    #[test]
    fn recompress_adaptive_recovers_known_rank() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        // random rank-10 block plus 1e-12 noise, stored at overstated rank
        let u = DMatrix::from_fn(100, 10, |_, _| rng.gen::<f64>() - 0.5);
        let v = DMatrix::from_fn(80, 10, |_, _| rng.gen::<f64>() - 0.5);
        let noise_u = DMatrix::from_fn(100, 5, |_, _| (rng.gen::<f64>() - 0.5) * 1e-12);
        let noise_v = DMatrix::from_fn(80, 5, |_, _| rng.gen::<f64>() - 0.5);
        let lr = LowRankBlock::new(u, v).stacked_with(&LowRankBlock::new(noise_u, noise_v), 1.0);
        let re = recompress_svd(&lr, &TruncationControl::adaptive(1e-8));
        assert_eq!(re.rank(), 10);
    }

    #[test]
    fn recompress_is_idempotent() {
        let m = matern_block(50, 45, 0.25, 1.5, 1.0, 31);
        let ctl = TruncationControl::adaptive(1e-7);
        let once = recompress_svd(&dense_to_lowrank(&m, &ctl), &ctl);
        let twice = recompress_svd(&once, &ctl);
        assert_eq!(once.rank(), twice.rank());
        let diff = dense_norm2(&(once.to_dense() - twice.to_dense()));
        assert!(diff <= 1e-12 * dense_norm2(&once.to_dense()));
    }

    #[test]
    fn norm_of_rank_one_is_product_of_factor_norms() {
        let a = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(lowrank_norm2(&LowRankBlock::new(a, b)), 5.0);
        assert_eq!(lowrank_norm2(&LowRankBlock::zero(4, 7)), 0.0);
    }

    #[test]
    fn power_iteration_norm_matches_svd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let u = DMatrix::from_fn(50, 5, |_, _| rng.gen::<f64>() - 0.5);
        let v = DMatrix::from_fn(40, 5, |_, _| rng.gen::<f64>() - 0.5);
        let lr = LowRankBlock::new(u, v);
        let reference = dense_norm2(&lr.to_dense());
        let got = lowrank_norm2(&lr);
        assert!(((got - reference) / reference).abs() < 1e-6);
    }

    #[test]
    fn dense_to_lowrank_known_spectra() {
        let id = DMatrix::<f64>::identity(3, 3);
        let lr = dense_to_lowrank(&id, &TruncationControl::fixed_rank(3));
        assert_eq!(lr.rank(), 3);
        assert!(dense_norm2(&(lr.to_dense() - id)) < 1e-14);

        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1e-3, 1e-9]));
        let lr = dense_to_lowrank(&d, &TruncationControl::adaptive(1e-6));
        assert_eq!(lr.rank(), 2);
        let err = dense_norm2(&(lr.to_dense() - d));
        assert!((err - 1e-9).abs() < 1e-12);
    }

    #[test]
    fn svd_truncation_never_loses_to_aca() {
        let ctl = TruncationControl::adaptive(1e-5);
        for seed in 0..10u64 {
            let m = matern_block(48, 40, 0.25, 0.5, 1.0, 100 + seed);
            let aca = aca_approximate(|i, j| m[(i, j)], 48, 40, &ctl);
            let svd = dense_to_lowrank(&m, &TruncationControl::fixed_rank(aca.rank()));
            let err_aca = dense_norm2(&(aca.to_dense() - &m));
            let err_svd = dense_norm2(&(svd.to_dense() - &m));
            assert!(err_svd <= err_aca * (1.0 + 1e-12), "seed {seed}");
        }
    }
}
