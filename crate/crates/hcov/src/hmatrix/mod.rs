//! H-matrix container over a block cluster tree and its arithmetic: assembly,
//! matrix-vector products, truncated addition/multiplication, symmetric
//! factorization, log-determinants, and error diagnostics.

mod arith;
mod factor;
mod metrics;

pub use arith::truncated_multiply_add;
pub use factor::{factorize, FactorForm, HFactor};
pub use metrics::{
    kld, kld_stochastic, power_iteration_norm2, spectral_error_metrics, ErrorMetrics, Oracle,
};

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::geometry::{BlockClusterTree, BlockKind};
use crate::kernel::KernelEvaluator;
use crate::lowrank::{aca_approximate, recompress_svd, LowRankBlock, TruncationControl};
use crate::{Error, Result};

/// Per-leaf payload: dense matrix on inadmissible leaves, factor pair on
/// admissible ones.
#[derive(Debug, Clone)]
pub enum Leaf {
    Dense(DMatrix<f64>),
    LowRank(LowRankBlock),
}

impl Leaf {
    pub fn nrows(&self) -> usize {
        match self {
            Leaf::Dense(m) => m.nrows(),
            Leaf::LowRank(l) => l.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Leaf::Dense(m) => m.ncols(),
            Leaf::LowRank(l) => l.ncols(),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            Leaf::Dense(_) => None,
            Leaf::LowRank(l) => Some(l.rank()),
        }
    }
}

/// Payloads keyed by block id; `None` off the represented subtree.
pub(crate) type Store = Vec<Option<Leaf>>;

/// Fixed per-leaf bookkeeping charged by the storage report (variant tag,
/// dimensions, heap pointer).
pub const LEAF_OVERHEAD_BYTES: usize = 48;

/// Hierarchical matrix: a block cluster tree plus per-leaf payloads.
#[derive(Debug, Clone)]
pub struct HMatrix {
    bct: Arc<BlockClusterTree>,
    store: Store,
    symmetric: bool,
}

/// Byte-exact storage accounting of an H-matrix or factor.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageReport {
    pub bytes: usize,
    pub kb_per_dof: f64,
    pub dense_leaves: usize,
    pub lowrank_leaves: usize,
    pub max_rank: usize,
}

pub(crate) fn storage_of(bct: &BlockClusterTree, store: &Store) -> StorageReport {
    let n = bct.cluster_tree().len();
    let mut bytes = 0usize;
    let mut dense_leaves = 0usize;
    let mut lowrank_leaves = 0usize;
    let mut max_rank = 0usize;
    for leaf in store.iter().flatten() {
        bytes += LEAF_OVERHEAD_BYTES;
        match leaf {
            Leaf::Dense(m) => {
                dense_leaves += 1;
                bytes += 8 * m.nrows() * m.ncols();
            }
            Leaf::LowRank(l) => {
                lowrank_leaves += 1;
                bytes += 8 * (l.nrows() + l.ncols()) * l.rank();
                max_rank = max_rank.max(l.rank());
            }
        }
    }
    StorageReport {
        bytes,
        kb_per_dof: bytes as f64 / 1024.0 / n as f64,
        dense_leaves,
        lowrank_leaves,
        max_rank,
    }
}

/// Builds the H-matrix approximation of the covariance operator described by
/// `ev`: dense leaves are filled entrywise, admissible leaves run ACA followed
/// by SVD recompression under the same control. Leaves are assembled in
/// parallel.
pub fn build_hmatrix(
    bct: &Arc<BlockClusterTree>,
    ev: &KernelEvaluator,
    ctl: &TruncationControl,
) -> Result<HMatrix> {
    let n = bct.cluster_tree().len();
    if ev.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: ev.len(),
        });
    }
    let leaf_ids = bct.leaves();
    let built: Vec<(usize, Leaf)> = leaf_ids
        .par_iter()
        .map(|&id| {
            let rows = bct.row_range(id);
            let cols = bct.col_range(id);
            let leaf = match bct.node(id).kind.expect("leaf") {
                BlockKind::Dense => {
                    let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
                        ev.entry(rows.start + i, cols.start + j)
                    });
                    Leaf::Dense(m)
                }
                BlockKind::Admissible => {
                    let raw = aca_approximate(
                        |i, j| ev.entry(rows.start + i, cols.start + j),
                        rows.len(),
                        cols.len(),
                        ctl,
                    );
                    Leaf::LowRank(recompress_svd(&raw, ctl))
                }
            };
            (id, leaf)
        })
        .collect();

    let mut store: Store = vec![None; bct.num_nodes()];
    for (id, leaf) in built {
        store[id] = Some(leaf);
    }
    Ok(HMatrix {
        bct: Arc::clone(bct),
        store,
        symmetric: false,
    })
}

impl HMatrix {
    #[cfg(test)]
    pub(crate) fn from_parts(bct: Arc<BlockClusterTree>, store: Store, symmetric: bool) -> Self {
        Self {
            bct,
            store,
            symmetric,
        }
    }

    /// Identity operator on the same block structure: diagonal dense leaves
    /// hold identity blocks, everything else is zero.
    pub fn identity(bct: &Arc<BlockClusterTree>) -> Self {
        let mut store: Store = vec![None; bct.num_nodes()];
        for id in bct.leaves() {
            let node = bct.node(id);
            let rows = bct.row_range(id);
            let cols = bct.col_range(id);
            let leaf = match node.kind.expect("leaf") {
                BlockKind::Dense => {
                    if node.row == node.col {
                        Leaf::Dense(DMatrix::identity(rows.len(), cols.len()))
                    } else {
                        Leaf::Dense(DMatrix::zeros(rows.len(), cols.len()))
                    }
                }
                // admissible blocks never touch the diagonal
                BlockKind::Admissible => Leaf::LowRank(LowRankBlock::zero(rows.len(), cols.len())),
            };
            store[id] = Some(leaf);
        }
        Self {
            bct: Arc::clone(bct),
            store,
            symmetric: true,
        }
    }

    pub fn bct(&self) -> &Arc<BlockClusterTree> {
        &self.bct
    }

    pub fn n(&self) -> usize {
        self.bct.cluster_tree().len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub(crate) fn store(&self) -> &Store {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn leaf(&self, id: usize) -> Option<&Leaf> {
        self.store[id].as_ref()
    }

    /// y = H x, with x in internal ordering.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; n];
        arith::matvec_into(&self.bct, &self.store, self.bct.root(), x, &mut y, 0, 0);
        Ok(y)
    }

    /// y = H^T x.
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; n];
        arith::matvec_transpose_into(&self.bct, &self.store, self.bct.root(), x, &mut y, 0, 0);
        Ok(y)
    }

    /// (1/2)(H + H^T) with per-leaf recompression under `ctl`. The mirrored
    /// block of every leaf has the same kind, so the average is formed leaf by
    /// leaf.
    pub fn symmetrize(&self, ctl: &TruncationControl) -> HMatrix {
        let mut store: Store = vec![None; self.bct.num_nodes()];
        for id in self.bct.leaves() {
            let mirror = self.bct.transpose_of(id);
            let here = self.store[id].as_ref().expect("payload at leaf");
            let there = self.store[mirror].as_ref().expect("payload at mirror leaf");
            let leaf = match (here, there) {
                (Leaf::Dense(m), Leaf::Dense(mt)) => Leaf::Dense((m + mt.transpose()) * 0.5),
                (Leaf::LowRank(l), Leaf::LowRank(lt)) => {
                    let mut half = l.clone();
                    half.scale(0.5);
                    let sum = half.stacked_with(&lt.transpose(), 0.5);
                    Leaf::LowRank(recompress_svd(&sum, ctl))
                }
                _ => unreachable!("mirrored leaves share their kind"),
            };
            store[id] = Some(leaf);
        }
        HMatrix {
            bct: Arc::clone(&self.bct),
            store,
            symmetric: true,
        }
    }

    /// Densifies the whole operator (tests and small oracles only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        for id in self.bct.leaves() {
            let rows = self.bct.row_range(id);
            let cols = self.bct.col_range(id);
            if let Some(leaf) = self.store[id].as_ref() {
                let block = match leaf {
                    Leaf::Dense(m) => m.clone(),
                    Leaf::LowRank(l) => l.to_dense(),
                };
                out.view_mut((rows.start, cols.start), (rows.len(), cols.len()))
                    .copy_from(&block);
            }
        }
        out
    }

    /// Exact byte accounting of the stored payloads.
    pub fn storage_report(&self) -> StorageReport {
        storage_of(&self.bct, &self.store)
    }

    /// Symmetry probe: x^T (H y) == y^T (H x) on seeded random pairs.
    pub fn passes_symmetry_probe(&self, pairs: usize, rel_tol: f64) -> bool {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
        let n = self.n();
        for _ in 0..pairs {
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let hx = self.matvec(&x).expect("length");
            let hy = self.matvec(&y).expect("length");
            let a: f64 = y.iter().zip(&hx).map(|(u, v)| u * v).sum();
            let b: f64 = x.iter().zip(&hy).map(|(u, v)| u * v).sum();
            let scale = a.abs().max(b.abs()).max(1e-300);
            if (a - b).abs() > rel_tol * scale {
                return false;
            }
        }
        true
    }
}
