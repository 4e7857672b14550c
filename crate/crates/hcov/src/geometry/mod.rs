//! Geometric preprocessing: scattered points, binary space partitioning into
//! cluster trees, and the admissibility-partitioned block cluster tree that
//! fixes the H-matrix block structure.

mod block;
mod cluster;

pub use block::{build_block_cluster_tree, is_admissible, BlockClusterTree, BlockKind, BlockNode};
pub use cluster::{build_cluster_tree, ClusterNode, ClusterTree, PermDirection};

use crate::{Error, Result};

/// Scattered locations in R^d, d in {2, 3}.
#[derive(Debug, Clone)]
pub struct PointSet {
    coords: Vec<f64>, // row-major, n * dim
    dim: usize,
}

impl PointSet {
    /// Builds a point set from per-point coordinate slices. All points must
    /// share the same dimension and every coordinate must be finite.
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dim = points[0].len();
        if !(2..=3).contains(&dim) {
            return Err(Error::Domain(format!("unsupported dimension {dim}")));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain("non-finite coordinate".into()));
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { coords, dim })
    }

    /// Builds a point set from a flat row-major coordinate buffer.
    pub fn from_flat(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(2..=3).contains(&dim) || !coords.len().is_multiple_of(dim) {
            return Err(Error::Domain(format!(
                "coordinate buffer of length {} is not a multiple of dim {}",
                coords.len(),
                dim
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        Ok(Self { coords, dim })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Euclidean distance between points `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.point(i);
        let b = self.point(j);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Axis-aligned bounding box with per-axis min/max.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::Domain("bounding box with lo > hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Tight box around a subset of points given by external indices.
    pub fn around(ps: &PointSet, indices: &[usize]) -> Self {
        let d = ps.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in indices {
            for (a, &c) in ps.point(i).iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        Self { lo, hi }
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean gap between two boxes; 0 when they overlap or touch.
    pub fn distance(&self, other: &Self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .map(|((al, ah), (bl, bh))| {
                let gap = (bl - ah).max(al - bh).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }
}
