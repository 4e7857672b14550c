//! Structured arithmetic on block subtrees: matrix-vector products, fragment
//! transposes and scalings, and the truncated multiply-add that powers the
//! Schur updates of the factorization.
//!
//! All structural recursion follows the block cluster tree; payloads live at
//! its leaves. "Fragments" are plain payload stores covering one subtree, so
//! operands of a product may come from different stores over the same tree.

use nalgebra::DMatrix;

use crate::geometry::{BlockClusterTree, ClusterTree};
use crate::lowrank::{dense_to_lowrank, recompress_svd, LowRankBlock, TruncationControl};
use crate::{Error, Result};

use super::{HMatrix, Leaf, Store};

/// Standalone representation of a product restricted to one block, in local
/// (block-relative) coordinates.
pub(crate) enum Update {
    Dense(DMatrix<f64>),
    Low(LowRankBlock),
}

impl Update {
    fn into_low(self, ctl: &TruncationControl) -> LowRankBlock {
        match self {
            Update::Dense(m) => dense_to_lowrank(&m, ctl),
            Update::Low(l) => l,
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Update::Dense(m) => m.clone(),
            Update::Low(l) => l.to_dense(),
        }
    }
}

/// sons(t) if t has sons, otherwise {t}; mirrors the block tree's son rule.
fn sons_or_self(ct: &ClusterTree, cluster: usize) -> Vec<usize> {
    match ct.node(cluster).children {
        Some([a, b]) => vec![a, b],
        None => vec![cluster],
    }
}

/// Child block of `parent` with the given (row, col) cluster pair.
fn child_block(bct: &BlockClusterTree, parent: usize, row: usize, col: usize) -> usize {
    *bct.node(parent)
        .children
        .iter()
        .find(|&&c| bct.node(c).row == row && bct.node(c).col == col)
        .expect("son rule produces every cluster pair")
}

fn leaf_at(store: &Store, id: usize) -> &Leaf {
    store[id].as_ref().expect("payload at leaf block")
}

/// y[rows] += M x[cols] over all leaves below `id`. `x` and `y` are slices
/// local to the block: global index g maps to x[g - col_base] / y[g - row_base].
pub(crate) fn matvec_into(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &[f64],
    y: &mut [f64],
    row_base: usize,
    col_base: usize,
) {
    let node = bct.node(id);
    if !node.is_leaf() {
        for &c in &node.children {
            matvec_into(bct, store, c, x, y, row_base, col_base);
        }
        return;
    }
    let rows = bct.row_range(id);
    let cols = bct.col_range(id);
    let xs = &x[cols.start - col_base..cols.end - col_base];
    let ys = &mut y[rows.start - row_base..rows.end - row_base];
    match leaf_at(store, id) {
        Leaf::Dense(m) => {
            for (j, &xv) in xs.iter().enumerate() {
                if xv != 0.0 {
                    let col = m.column(j);
                    for (i, yv) in ys.iter_mut().enumerate() {
                        *yv += col[i] * xv;
                    }
                }
            }
        }
        Leaf::LowRank(l) => {
            let k = l.rank();
            if k == 0 {
                return;
            }
            let b = l.factor_b();
            let a = l.factor_a();
            for c in 0..k {
                let bc = b.column(c);
                let mut t = 0.0;
                for (j, &xv) in xs.iter().enumerate() {
                    t += bc[j] * xv;
                }
                if t != 0.0 {
                    let ac = a.column(c);
                    for (i, yv) in ys.iter_mut().enumerate() {
                        *yv += ac[i] * t;
                    }
                }
            }
        }
    }
}

/// y[cols] += M^T x[rows] over all leaves below `id`.
pub(crate) fn matvec_transpose_into(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &[f64],
    y: &mut [f64],
    row_base: usize,
    col_base: usize,
) {
    let node = bct.node(id);
    if !node.is_leaf() {
        for &c in &node.children {
            matvec_transpose_into(bct, store, c, x, y, row_base, col_base);
        }
        return;
    }
    let rows = bct.row_range(id);
    let cols = bct.col_range(id);
    let xs = &x[rows.start - row_base..rows.end - row_base];
    let ys = &mut y[cols.start - col_base..cols.end - col_base];
    match leaf_at(store, id) {
        Leaf::Dense(m) => {
            for (j, yv) in ys.iter_mut().enumerate() {
                let col = m.column(j);
                let mut acc = 0.0;
                for (i, &xv) in xs.iter().enumerate() {
                    acc += col[i] * xv;
                }
                *yv += acc;
            }
        }
        Leaf::LowRank(l) => {
            let k = l.rank();
            let a = l.factor_a();
            let b = l.factor_b();
            for c in 0..k {
                let ac = a.column(c);
                let mut t = 0.0;
                for (i, &xv) in xs.iter().enumerate() {
                    t += ac[i] * xv;
                }
                if t != 0.0 {
                    let bc = b.column(c);
                    for (j, yv) in ys.iter_mut().enumerate() {
                        *yv += bc[j] * t;
                    }
                }
            }
        }
    }
}

/// Y = M X for the subtree at `id`; X is local to the block's columns.
pub(crate) fn apply_cols(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let rows = bct.row_range(id);
    let cols = bct.col_range(id);
    debug_assert_eq!(x.nrows(), cols.len());
    let mut out = DMatrix::zeros(rows.len(), x.ncols());
    apply_cols_rec(bct, store, id, x, &mut out, rows.start, cols.start);
    out
}

fn apply_cols_rec(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &DMatrix<f64>,
    out: &mut DMatrix<f64>,
    row_base: usize,
    col_base: usize,
) {
    let node = bct.node(id);
    if !node.is_leaf() {
        for &c in &node.children {
            apply_cols_rec(bct, store, c, x, out, row_base, col_base);
        }
        return;
    }
    let rows = bct.row_range(id);
    let cols = bct.col_range(id);
    let xs = x.rows(cols.start - col_base, cols.len());
    let contribution = match leaf_at(store, id) {
        Leaf::Dense(m) => m * xs,
        Leaf::LowRank(l) => l.factor_a() * (l.factor_b().transpose() * xs),
    };
    let mut target = out.rows_mut(rows.start - row_base, rows.len());
    target += contribution;
}

/// Y = M^T X for the subtree at `id`; X is local to the block's rows.
pub(crate) fn apply_cols_transpose(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let rows = bct.row_range(id);
    let cols = bct.col_range(id);
    debug_assert_eq!(x.nrows(), rows.len());
    let mut out = DMatrix::zeros(cols.len(), x.ncols());
    apply_cols_transpose_rec(bct, store, id, x, &mut out, rows.start, cols.start);
    out
}

fn apply_cols_transpose_rec(
    bct: &BlockClusterTree,
    store: &Store,
    id: usize,
    x: &DMatrix<f64>,
    out: &mut DMatrix<f64>,
    row_base: usize,
    col_base: usize,
) {
    let node = bct.node(id);
    if !node.is_leaf() {
        for &c in &node.children {
            apply_cols_transpose_rec(bct, store, c, x, out, row_base, col_base);
        }
        return;
    }
    let rows = bct.row_range(id);
    let cols = bct.col_range(id);
    let xs = x.rows(rows.start - row_base, rows.len());
    let contribution = match leaf_at(store, id) {
        Leaf::Dense(m) => m.transpose() * xs,
        Leaf::LowRank(l) => l.factor_b() * (l.factor_a().transpose() * xs),
    };
    let mut target = out.rows_mut(cols.start - col_base, cols.len());
    target += contribution;
}

/// Copies the payloads of one subtree into a fresh store.
pub(crate) fn clone_fragment(bct: &BlockClusterTree, store: &Store, id: usize) -> Store {
    let mut out: Store = vec![None; bct.num_nodes()];
    for leaf in bct.leaves_under(id) {
        out[leaf] = store[leaf].clone();
    }
    out
}

/// Payloads of the mirrored subtree: leaf (r, c) lands transposed at (c, r).
pub(crate) fn transpose_fragment(bct: &BlockClusterTree, store: &Store, id: usize) -> Store {
    let mut out: Store = vec![None; bct.num_nodes()];
    for leaf in bct.leaves_under(id) {
        let mirrored = match leaf_at(store, leaf) {
            Leaf::Dense(m) => Leaf::Dense(m.transpose()),
            Leaf::LowRank(l) => Leaf::LowRank(l.transpose()),
        };
        out[bct.transpose_of(leaf)] = Some(mirrored);
    }
    out
}

/// In-place scalar multiply of one subtree.
pub(crate) fn scale_fragment(bct: &BlockClusterTree, store: &mut Store, id: usize, beta: f64) {
    for leaf in bct.leaves_under(id) {
        match store[leaf].as_mut().expect("payload at leaf") {
            Leaf::Dense(m) => *m *= beta,
            Leaf::LowRank(l) => l.scale(beta),
        }
    }
}

/// Column scaling X := X * diag(values over the block columns)^sign, with
/// `values` indexed globally.
pub(crate) fn col_scale_fragment(
    bct: &BlockClusterTree,
    store: &mut Store,
    id: usize,
    values: &[f64],
    invert: bool,
) {
    for leaf in bct.leaves_under(id) {
        let cols = bct.col_range(leaf);
        match store[leaf].as_mut().expect("payload at leaf") {
            Leaf::Dense(m) => {
                for j in 0..m.ncols() {
                    let v = values[cols.start + j];
                    let s = if invert { 1.0 / v } else { v };
                    m.column_mut(j).scale_mut(s);
                }
            }
            Leaf::LowRank(l) => {
                // columns of the block are rows of the B factor
                let mut b = l.factor_b().clone();
                for j in 0..b.nrows() {
                    let v = values[cols.start + j];
                    let s = if invert { 1.0 / v } else { v };
                    b.row_mut(j).scale_mut(s);
                }
                *l = LowRankBlock::new(l.factor_a().clone(), b);
            }
        }
    }
}

/// Row scaling X := diag(values over the block rows) * X.
pub(crate) fn row_scale_fragment(
    bct: &BlockClusterTree,
    store: &mut Store,
    id: usize,
    values: &[f64],
) {
    for leaf in bct.leaves_under(id) {
        let rows = bct.row_range(leaf);
        match store[leaf].as_mut().expect("payload at leaf") {
            Leaf::Dense(m) => {
                for i in 0..m.nrows() {
                    m.row_mut(i).scale_mut(values[rows.start + i]);
                }
            }
            Leaf::LowRank(l) => {
                let mut a = l.factor_a().clone();
                for i in 0..a.nrows() {
                    a.row_mut(i).scale_mut(values[rows.start + i]);
                }
                *l = LowRankBlock::new(a, l.factor_b().clone());
            }
        }
    }
}

fn merge_updates(acc: Option<Update>, new: Update, ctl: &TruncationControl) -> Update {
    match acc {
        None => new,
        Some(Update::Dense(mut d)) => {
            d += new.to_dense();
            Update::Dense(d)
        }
        Some(Update::Low(l)) => match new {
            // dense updates only arise on small blocks; densify the sum there
            Update::Dense(mut d) => {
                d += l.to_dense();
                Update::Dense(d)
            }
            Update::Low(l2) => Update::Low(recompress_svd(&l.stacked_with(&l2, 1.0), ctl)),
        },
    }
}

/// Product A(tau, rho) * B(rho, sigma) of two subtrees as one standalone
/// update in coordinates local to (tau, sigma).
pub(crate) fn multiply_subtrees(
    bct: &BlockClusterTree,
    sa: &Store,
    a_id: usize,
    sb: &Store,
    b_id: usize,
    ctl: &TruncationControl,
) -> Update {
    let a_node = bct.node(a_id);
    let b_node = bct.node(b_id);
    debug_assert_eq!(a_node.col, b_node.row, "middle clusters must agree");

    if a_node.is_leaf() {
        return match leaf_at(sa, a_id) {
            Leaf::LowRank(la) => {
                // (Ua Va^T) B = Ua (B^T Va)^T
                let w = apply_cols_transpose(bct, sb, b_id, la.factor_b());
                Update::Low(LowRankBlock::new(la.factor_a().clone(), w))
            }
            Leaf::Dense(da) => {
                if b_node.is_leaf() {
                    match leaf_at(sb, b_id) {
                        Leaf::Dense(db) => Update::Dense(da * db),
                        Leaf::LowRank(lb) => {
                            Update::Low(LowRankBlock::new(da * lb.factor_a(), lb.factor_b().clone()))
                        }
                    }
                } else {
                    // dense leaf times a subtree: rank is bounded by |rho|
                    let eye = DMatrix::identity(da.ncols(), da.ncols());
                    let v = apply_cols_transpose(bct, sb, b_id, &eye);
                    Update::Low(LowRankBlock::new(da.clone(), v))
                }
            }
        };
    }
    if b_node.is_leaf() {
        return match leaf_at(sb, b_id) {
            Leaf::LowRank(lb) => {
                let u = apply_cols(bct, sa, a_id, lb.factor_a());
                Update::Low(LowRankBlock::new(u, lb.factor_b().clone()))
            }
            Leaf::Dense(db) => {
                let u = apply_cols(bct, sa, a_id, db);
                let eye = DMatrix::identity(db.ncols(), db.ncols());
                Update::Low(LowRankBlock::new(u, eye))
            }
        };
    }

    // both internal: recurse over the common middle cluster
    let ct = bct.cluster_tree();
    let tau = a_node.row;
    let rho = a_node.col;
    let sigma = b_node.col;
    let tau_sons = sons_or_self(ct, tau);
    let rho_sons = sons_or_self(ct, rho);
    let sigma_sons = sons_or_self(ct, sigma);

    if tau_sons.len() == 1 && sigma_sons.len() == 1 {
        // only the middle refines; the target stays one small block
        let mut acc: Option<Update> = None;
        for &rp in &rho_sons {
            let ac = child_block(bct, a_id, tau, rp);
            let bc = child_block(bct, b_id, rp, sigma);
            let u = multiply_subtrees(bct, sa, ac, sb, bc, ctl);
            acc = Some(merge_updates(acc, u, ctl));
        }
        return acc.expect("at least one middle son");
    }

    // assemble per-child products into one low-rank block over (tau, sigma)
    let tau_range = ct.node(tau).start..ct.node(tau).end;
    let sigma_range = ct.node(sigma).start..ct.node(sigma).end;
    let mut parts: Vec<(usize, usize, LowRankBlock)> = Vec::new();
    for &tp in &tau_sons {
        for &sp in &sigma_sons {
            let mut acc: Option<Update> = None;
            for &rp in &rho_sons {
                let ac = child_block(bct, a_id, tp, rp);
                let bc = child_block(bct, b_id, rp, sp);
                let u = multiply_subtrees(bct, sa, ac, sb, bc, ctl);
                acc = Some(merge_updates(acc, u, ctl));
            }
            let low = acc.expect("middle sons").into_low(ctl);
            parts.push((
                ct.node(tp).start - tau_range.start,
                ct.node(sp).start - sigma_range.start,
                low,
            ));
        }
    }
    let total_rank: usize = parts.iter().map(|p| p.2.rank()).sum();
    let mut a_fac = DMatrix::zeros(tau_range.len(), total_rank);
    let mut b_fac = DMatrix::zeros(sigma_range.len(), total_rank);
    let mut off = 0;
    for (ro, co, low) in &parts {
        let k = low.rank();
        a_fac
            .view_mut((*ro, off), (low.nrows(), k))
            .copy_from(low.factor_a());
        b_fac
            .view_mut((*co, off), (low.ncols(), k))
            .copy_from(low.factor_b());
        off += k;
    }
    Update::Low(recompress_svd(&LowRankBlock::new(a_fac, b_fac), ctl))
}

/// C(subtree) += alpha * update, re-truncating low-rank leaves under `ctl`.
/// With `lower_only`, sub-blocks strictly above the diagonal are skipped
/// (used by the symmetric factorization, which never reads them).
pub(crate) fn add_update(
    bct: &BlockClusterTree,
    sc: &mut Store,
    c_id: usize,
    upd: &Update,
    alpha: f64,
    ctl: &TruncationControl,
    lower_only: bool,
) {
    let node = bct.node(c_id);
    if node.is_leaf() {
        match sc[c_id].as_mut().expect("payload at leaf") {
            Leaf::Dense(m) => {
                let mut add = upd.to_dense();
                add *= alpha;
                *m += add;
            }
            Leaf::LowRank(l) => {
                let low = match upd {
                    Update::Dense(d) => dense_to_lowrank(d, ctl),
                    Update::Low(lo) => lo.clone(),
                };
                *l = recompress_svd(&l.stacked_with(&low, alpha), ctl);
            }
        }
        return;
    }
    let row_start = bct.row_range(c_id).start;
    let col_start = bct.col_range(c_id).start;
    for &child in &node.children {
        let rows = bct.row_range(child);
        let cols = bct.col_range(child);
        if lower_only && rows.start < cols.start {
            continue;
        }
        let child_lower_only = lower_only && rows.start == cols.start;
        let sub = match upd {
            Update::Dense(d) => Update::Dense(
                d.view((rows.start - row_start, cols.start - col_start), (rows.len(), cols.len()))
                    .into_owned(),
            ),
            Update::Low(l) => Update::Low(LowRankBlock::new(
                l.factor_a().rows(rows.start - row_start, rows.len()).into_owned(),
                l.factor_b().rows(cols.start - col_start, cols.len()).into_owned(),
            )),
        };
        add_update(bct, sc, child, &sub, alpha, ctl, child_lower_only);
    }
}

/// C(c_id) += alpha * A(a_id) * B(b_id), recursing structurally where all
/// three blocks refine and falling back to standalone updates elsewhere.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mul_into(
    bct: &BlockClusterTree,
    sc: &mut Store,
    c_id: usize,
    sa: &Store,
    a_id: usize,
    sb: &Store,
    b_id: usize,
    alpha: f64,
    ctl: &TruncationControl,
    lower_only: bool,
) {
    let a_leaf = bct.node(a_id).is_leaf();
    let b_leaf = bct.node(b_id).is_leaf();
    let c_leaf = bct.node(c_id).is_leaf();
    if !a_leaf && !b_leaf && !c_leaf {
        let ct = bct.cluster_tree();
        let tau = bct.node(a_id).row;
        let rho = bct.node(a_id).col;
        let sigma = bct.node(b_id).col;
        debug_assert_eq!(bct.node(c_id).row, tau);
        debug_assert_eq!(bct.node(c_id).col, sigma);
        let tau_sons = sons_or_self(ct, tau);
        let rho_sons = sons_or_self(ct, rho);
        let sigma_sons = sons_or_self(ct, sigma);
        for &tp in &tau_sons {
            for &sp in &sigma_sons {
                let c_child = child_block(bct, c_id, tp, sp);
                let rows = bct.row_range(c_child);
                let cols = bct.col_range(c_child);
                if lower_only && rows.start < cols.start {
                    continue;
                }
                let child_lower_only = lower_only && rows.start == cols.start;
                for &rp in &rho_sons {
                    let a_child = child_block(bct, a_id, tp, rp);
                    let b_child = child_block(bct, b_id, rp, sp);
                    mul_into(
                        bct,
                        sc,
                        c_child,
                        sa,
                        a_child,
                        sb,
                        b_child,
                        alpha,
                        ctl,
                        child_lower_only,
                    );
                }
            }
        }
        return;
    }
    let upd = multiply_subtrees(bct, sa, a_id, sb, b_id, ctl);
    add_update(bct, sc, c_id, &upd, alpha, ctl, lower_only);
}

/// C <- beta * C + alpha * (A * B), all three on the same block cluster tree,
/// with every touched leaf re-truncated under `ctl`.
pub fn truncated_multiply_add(
    c: &mut HMatrix,
    alpha: f64,
    a: &HMatrix,
    b: &HMatrix,
    beta: f64,
    ctl: &TruncationControl,
) -> Result<()> {
    if !std::sync::Arc::ptr_eq(c.bct(), a.bct()) || !std::sync::Arc::ptr_eq(c.bct(), b.bct()) {
        return Err(Error::TreeMismatch);
    }
    let bct = std::sync::Arc::clone(c.bct());
    let root = bct.root();
    if beta != 1.0 {
        scale_fragment(&bct, c.store_mut(), root, beta);
    }
    if alpha != 0.0 {
        let sa = a.store().clone();
        let sb = b.store().clone();
        mul_into(&bct, c.store_mut(), root, &sa, root, &sb, root, alpha, ctl, false);
    }
    Ok(())
}
