//! Symmetric block-recursive factorization of an H-matrix (LDL with unit
//! lower factor, or Cholesky), its triangular solves, and the
//! log-determinant read off the factor diagonal.
//!
//! The factor lives on the same block cluster tree as the input: diagonal
//! dense leaves are factored in place with point-wise pivots, off-diagonal
//! blocks of the lower triangle are overwritten by the solved factor blocks,
//! and Schur complements are applied through the truncated multiply-add.

use std::sync::Arc;

use crate::geometry::BlockClusterTree;
use crate::lowrank::{LowRankBlock, TruncationControl};
use crate::{Error, Result};

use super::arith::{
    clone_fragment, col_scale_fragment, matvec_into, matvec_transpose_into, mul_into,
    row_scale_fragment, transpose_fragment,
};
use super::{storage_of, HMatrix, Leaf, StorageReport, Store};

/// Factorization form: C = L D L^T with unit lower L, or C = L L^T.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorForm {
    Ldl,
    Cholesky,
}

/// Triangular H-factor. `diag` holds D (LDL) or the Cholesky pivots L_ii in
/// internal order; dense diagonal leaves store the pivots on their diagonal
/// and the factor entries strictly below it.
#[derive(Debug, Clone)]
pub struct HFactor {
    bct: Arc<BlockClusterTree>,
    store: Store,
    diag: Vec<f64>,
    form: FactorForm,
}

/// Block-recursive symmetric factorization. The input must be symmetric
/// (symmetrize first) and is expected to be positive definite after the
/// nugget; a nonpositive pivot aborts with its internal index.
pub fn factorize(h: &HMatrix, ctl: &TruncationControl, form: FactorForm) -> Result<HFactor> {
    debug_assert!(
        h.is_symmetric(),
        "factorize expects a symmetrized H-matrix"
    );
    let bct = Arc::clone(h.bct());
    let mut work = h.store().clone();
    let mut diag = vec![0.0; h.n()];
    factor_block(&bct, &mut work, bct.root(), &mut diag, ctl, form)?;

    // retain the diagonal dense leaves and the strictly lower blocks
    let mut store: Store = vec![None; bct.num_nodes()];
    for id in 0..bct.num_nodes() {
        let node = bct.node(id);
        if !node.is_leaf() {
            continue;
        }
        let keep = node.row == node.col
            || bct.row_range(id).start > bct.col_range(id).start;
        if keep {
            store[id] = work[id].take();
        }
    }
    Ok(HFactor {
        bct,
        store,
        diag,
        form,
    })
}

fn factor_block(
    bct: &BlockClusterTree,
    work: &mut Store,
    b_id: usize,
    diag: &mut [f64],
    ctl: &TruncationControl,
    form: FactorForm,
) -> Result<()> {
    let node = bct.node(b_id);
    debug_assert_eq!(node.row, node.col, "factorization walks diagonal blocks");
    if node.is_leaf() {
        let start = bct.row_range(b_id).start;
        match work[b_id].as_mut() {
            Some(Leaf::Dense(m)) => dense_factor_in_place(m, start, diag, form),
            _ => unreachable!("diagonal leaves are dense"),
        }
    } else {
        let ct = bct.cluster_tree();
        let [t1, t2] = ct.node(node.row).children.expect("internal cluster");
        let b11 = find_child(bct, b_id, t1, t1);
        let b21 = find_child(bct, b_id, t2, t1);
        let b22 = find_child(bct, b_id, t2, t2);

        factor_block(bct, work, b11, diag, ctl, form)?;

        // off-diagonal column: L21 = C21 L11^{-T} (D1^{-1} for LDL)
        solve_upper_right(bct, work, b21, b11, ctl, form);
        if form == FactorForm::Ldl {
            col_scale_fragment(bct, work, b21, diag, true);
        }

        // Schur complement: C22 -= L21 * (D1) * L21^T, lower part only
        let a_frag = clone_fragment(bct, work, b21);
        let b21_t = bct.transpose_of(b21);
        let mut b_frag = transpose_fragment(bct, work, b21);
        if form == FactorForm::Ldl {
            row_scale_fragment(bct, &mut b_frag, b21_t, diag);
        }
        mul_into(bct, work, b22, &a_frag, b21, &b_frag, b21_t, -1.0, ctl, true);

        factor_block(bct, work, b22, diag, ctl, form)
    }
}

fn find_child(bct: &BlockClusterTree, parent: usize, row: usize, col: usize) -> usize {
    *bct.node(parent)
        .children
        .iter()
        .find(|&&c| bct.node(c).row == row && bct.node(c).col == col)
        .expect("diagonal blocks refine over both sides")
}

/// Point-wise dense factorization. Strict lower entries become the factor,
/// the diagonal holds D (LDL) or L_ii (Cholesky); the strict upper part is
/// zeroed.
fn dense_factor_in_place(
    m: &mut nalgebra::DMatrix<f64>,
    global_start: usize,
    diag: &mut [f64],
    form: FactorForm,
) -> Result<()> {
    let n = m.nrows();
    match form {
        FactorForm::Ldl => {
            for j in 0..n {
                let mut d = m[(j, j)];
                for k in 0..j {
                    let l = m[(j, k)];
                    d -= l * l * m[(k, k)];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        pivot: global_start + j,
                    });
                }
                m[(j, j)] = d;
                diag[global_start + j] = d;
                for i in (j + 1)..n {
                    let mut v = m[(i, j)];
                    for k in 0..j {
                        v -= m[(i, k)] * m[(j, k)] * m[(k, k)];
                    }
                    m[(i, j)] = v / d;
                }
            }
        }
        FactorForm::Cholesky => {
            for j in 0..n {
                let mut d = m[(j, j)];
                for k in 0..j {
                    let l = m[(j, k)];
                    d -= l * l;
                }
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        pivot: global_start + j,
                    });
                }
                let l = d.sqrt();
                m[(j, j)] = l;
                diag[global_start + j] = l;
                for i in (j + 1)..n {
                    let mut v = m[(i, j)];
                    for k in 0..j {
                        v -= m[(i, k)] * m[(j, k)];
                    }
                    m[(i, j)] = v / l;
                }
            }
        }
    }
    for j in 0..n {
        for i in 0..j {
            m[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// X := X * L(gamma, gamma)^{-T} for a block column X over the already
/// factored diagonal subtree at `d_id`.
fn solve_upper_right(
    bct: &BlockClusterTree,
    work: &mut Store,
    x_id: usize,
    d_id: usize,
    ctl: &TruncationControl,
    form: FactorForm,
) {
    let x_node = bct.node(x_id);
    if x_node.is_leaf() {
        let gamma_range = bct.col_range(x_id);
        let payload = work[x_id].take().expect("payload at leaf");
        let solved = match payload {
            Leaf::Dense(mut m) => {
                // dense leaf implies gamma is a cluster leaf
                let pivot = match work[d_id].as_ref() {
                    Some(Leaf::Dense(l)) => l.clone(),
                    _ => unreachable!("factored diagonal leaf"),
                };
                let q = m.ncols();
                for j in 0..q {
                    for k in 0..j {
                        let ljk = pivot[(j, k)];
                        if ljk != 0.0 {
                            let col_k = m.column(k).into_owned();
                            let mut col_j = m.column_mut(j);
                            col_j.axpy(-ljk, &col_k, 1.0);
                        }
                    }
                    if form == FactorForm::Cholesky {
                        let l = pivot[(j, j)];
                        m.column_mut(j).scale_mut(1.0 / l);
                    }
                }
                Leaf::Dense(m)
            }
            Leaf::LowRank(l) => {
                // X L^{-T} = U (L^{-1} V)^T: forward-solve each column of V
                let mut v = l.factor_b().clone();
                for c in 0..v.ncols() {
                    let mut col: Vec<f64> = v.column(c).iter().copied().collect();
                    solve_lower_local(bct, work, d_id, form, &mut col, gamma_range.start);
                    v.column_mut(c).copy_from_slice(&col);
                }
                Leaf::LowRank(LowRankBlock::new(l.factor_a().clone(), v))
            }
        };
        work[x_id] = Some(solved);
        return;
    }

    let ct = bct.cluster_tree();
    let gamma = bct.node(d_id).row;
    let rho = x_node.row;
    match ct.node(gamma).children {
        Some([ga, gb]) => {
            let d_aa = find_child(bct, d_id, ga, ga);
            let d_ba = find_child(bct, d_id, gb, ga);
            let d_bb = find_child(bct, d_id, gb, gb);
            let rho_sons = match ct.node(rho).children {
                Some([a, b]) => vec![a, b],
                None => vec![rho],
            };
            for rp in rho_sons {
                let xa = find_child(bct, x_id, rp, ga);
                let xb = find_child(bct, x_id, rp, gb);
                solve_upper_right(bct, work, xa, d_aa, ctl, form);
                // Xb -= Xa * L(gb, ga)^T
                let a_frag = clone_fragment(bct, work, xa);
                let b_frag = transpose_fragment(bct, work, d_ba);
                mul_into(
                    bct,
                    work,
                    xb,
                    &a_frag,
                    xa,
                    &b_frag,
                    bct.transpose_of(d_ba),
                    -1.0,
                    ctl,
                    false,
                );
                solve_upper_right(bct, work, xb, d_bb, ctl, form);
            }
        }
        None => {
            // gamma is a leaf; only the row side refines
            for &child in &bct.node(x_id).children.clone() {
                solve_upper_right(bct, work, child, d_id, ctl, form);
            }
        }
    }
}

/// Forward substitution with the factored diagonal subtree at `d_id`;
/// `x` is local to the subtree's range starting at `base`.
fn solve_lower_local(
    bct: &BlockClusterTree,
    store: &Store,
    d_id: usize,
    form: FactorForm,
    x: &mut [f64],
    base: usize,
) {
    let node = bct.node(d_id);
    if node.is_leaf() {
        let m = match store[d_id].as_ref() {
            Some(Leaf::Dense(m)) => m,
            _ => unreachable!("factored diagonal leaf"),
        };
        let n = m.nrows();
        for i in 0..n {
            let mut v = x[i];
            for j in 0..i {
                v -= m[(i, j)] * x[j];
            }
            x[i] = match form {
                FactorForm::Ldl => v,
                FactorForm::Cholesky => v / m[(i, i)],
            };
        }
        return;
    }
    let ct = bct.cluster_tree();
    let [ga, gb] = ct.node(node.row).children.expect("internal cluster");
    let d_aa = find_child(bct, d_id, ga, ga);
    let d_ba = find_child(bct, d_id, gb, ga);
    let d_bb = find_child(bct, d_id, gb, gb);
    let na = ct.node(ga).len();
    let (xa, xb) = x.split_at_mut(na);
    solve_lower_local(bct, store, d_aa, form, xa, base);
    matvec_neg_into(bct, store, d_ba, xa, xb, base + na, base);
    solve_lower_local(bct, store, d_bb, form, xb, base + na);
}

/// y -= M x over the subtree (used by the forward solve).
fn matvec_neg_into(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &[f64],
    y: &mut [f64],
    row_base: usize,
    col_base: usize,
) {
    let mut tmp = vec![0.0; y.len()];
    matvec_into(bct, store, id, x, &mut tmp, row_base, col_base);
    for (yv, t) in y.iter_mut().zip(&tmp) {
        *yv -= t;
    }
}

/// Backward substitution with the transposed factor.
fn solve_upper_local(
    bct: &BlockClusterTree,
    store: &Store,
    d_id: usize,
    form: FactorForm,
    x: &mut [f64],
    base: usize,
) {
    let node = bct.node(d_id);
    if node.is_leaf() {
        let m = match store[d_id].as_ref() {
            Some(Leaf::Dense(m)) => m,
            _ => unreachable!("factored diagonal leaf"),
        };
        let n = m.nrows();
        for i in (0..n).rev() {
            let mut v = x[i];
            for j in (i + 1)..n {
                v -= m[(j, i)] * x[j];
            }
            x[i] = match form {
                FactorForm::Ldl => v,
                FactorForm::Cholesky => v / m[(i, i)],
            };
        }
        return;
    }
    let ct = bct.cluster_tree();
    let [ga, gb] = ct.node(node.row).children.expect("internal cluster");
    let d_aa = find_child(bct, d_id, ga, ga);
    let d_ba = find_child(bct, d_id, gb, ga);
    let d_bb = find_child(bct, d_id, gb, gb);
    let na = ct.node(ga).len();
    let (xa, xb) = x.split_at_mut(na);
    solve_upper_local(bct, store, d_bb, form, xb, base + na);
    // xa -= L(gb, ga)^T xb
    let mut tmp = vec![0.0; xa.len()];
    matvec_transpose_into(bct, store, d_ba, xb, &mut tmp, base + na, base);
    for (v, t) in xa.iter_mut().zip(&tmp) {
        *v -= t;
    }
    solve_upper_local(bct, store, d_aa, form, xa, base);
}

impl HFactor {
    pub fn bct(&self) -> &Arc<BlockClusterTree> {
        &self.bct
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn form(&self) -> FactorForm {
        self.form
    }

    /// Factor diagonal in internal order: D for LDL, L_ii for Cholesky.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn min_pivot(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rank(&self) -> usize {
        self.store
            .iter()
            .flatten()
            .filter_map(|l| l.rank())
            .max()
            .unwrap_or(0)
    }

    pub fn storage_report(&self) -> StorageReport {
        storage_of(&self.bct, &self.store)
    }

    /// In-place solve L y = x.
    pub fn solve_lower(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n());
        solve_lower_local(&self.bct, &self.store, self.bct.root(), self.form, x, 0);
    }

    /// In-place solve L^T y = x.
    pub fn solve_upper(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n());
        solve_upper_local(&self.bct, &self.store, self.bct.root(), self.form, x, 0);
    }

    /// Full solve y ~ C^{-1} x through the factorization.
    pub fn solve_full(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.solve_lower(&mut y);
        if self.form == FactorForm::Ldl {
            for (v, d) in y.iter_mut().zip(&self.diag) {
                *v /= d;
            }
        }
        self.solve_upper(&mut y);
        y
    }

    /// y = L D^{1/2} x (LDL) or y = L x (Cholesky), so that cov(y) equals the
    /// factored operator when x is white noise.
    pub fn apply_scaled_lower(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n());
        let w: Vec<f64> = match self.form {
            FactorForm::Ldl => x
                .iter()
                .zip(&self.diag)
                .map(|(v, d)| v * d.sqrt())
                .collect(),
            FactorForm::Cholesky => x.to_vec(),
        };
        let mut y = vec![0.0; self.n()];
        for id in 0..self.bct.num_nodes() {
            let Some(leaf) = self.store[id].as_ref() else {
                continue;
            };
            let rows = self.bct.row_range(id);
            let cols = self.bct.col_range(id);
            let node = self.bct.node(id);
            if node.row == node.col {
                let m = match leaf {
                    Leaf::Dense(m) => m,
                    _ => unreachable!("diagonal leaves are dense"),
                };
                for i in 0..m.nrows() {
                    let mut acc = match self.form {
                        FactorForm::Ldl => w[rows.start + i], // unit diagonal
                        FactorForm::Cholesky => m[(i, i)] * w[rows.start + i],
                    };
                    for j in 0..i {
                        acc += m[(i, j)] * w[cols.start + j];
                    }
                    y[rows.start + i] += acc;
                }
            } else {
                matvec_into(
                    &self.bct,
                    &self.store,
                    id,
                    &w[cols.start..cols.end],
                    &mut y[rows.start..rows.end],
                    rows.start,
                    cols.start,
                );
            }
        }
        y
    }

    /// log det C from the factor diagonal: sum(log D_ii) for LDL,
    /// 2 sum(log L_ii) for Cholesky.
    pub fn log_determinant(&self) -> f64 {
        match self.form {
            FactorForm::Ldl => self.diag.iter().map(|d| d.ln()).sum(),
            FactorForm::Cholesky => 2.0 * self.diag.iter().map(|l| l.ln()).sum::<f64>(),
        }
    }
}
