use super::{BoundingBox, PointSet};
use crate::{Error, Result};

/// Node of a geometric cluster tree. Covers a contiguous index range in the
/// internal (permuted) ordering and carries the bounding box of its points.
#[derive(Debug, Clone)]
pub struct ClusterNode {
    pub start: usize,
    pub end: usize, // exclusive
    pub bbox: BoundingBox,
    pub children: Option<[usize; 2]>,
}

impl ClusterNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Direction of an index permutation between external (file) order and
/// internal (tree) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermDirection {
    E2I,
    I2E,
}

/// Binary space partitioning tree over a point set. Nodes live in an arena;
/// node 0 is the root. The tree also stores the two mutually inverse index
/// permutations between external and internal order.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    nodes: Vec<ClusterNode>,
    perm_e2i: Vec<usize>, // external index -> internal position
    perm_i2e: Vec<usize>, // internal position -> external index
    n_min: usize,
}

impl ClusterTree {
    pub fn node(&self, id: usize) -> &ClusterNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.perm_e2i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm_e2i.is_empty()
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn perm_e2i(&self) -> &[usize] {
        &self.perm_e2i
    }

    pub fn perm_i2e(&self) -> &[usize] {
        &self.perm_i2e
    }

    /// External index of the point stored at internal position `i`.
    pub fn external_index(&self, i: usize) -> usize {
        self.perm_i2e[i]
    }

    /// Reorders a vector between external and internal index order.
    pub fn apply_permutation(&self, v: &[f64], direction: PermDirection) -> Result<Vec<f64>> {
        let n = self.len();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; n];
        match direction {
            PermDirection::E2I => {
                for i in 0..n {
                    out[i] = v[self.perm_i2e[i]];
                }
            }
            PermDirection::I2E => {
                for i in 0..n {
                    out[self.perm_i2e[i]] = v[i];
                }
            }
        }
        Ok(out)
    }

    /// Leaf node ids in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            match self.nodes[id].children {
                None => out.push(id),
                Some([l, r]) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        out
    }
}

/// Builds a cluster tree by recursive median splits along the axis of largest
/// bounding-box extent. Recursion stops when a node holds at most `n_min`
/// points; for odd sizes the left child receives the extra point. Ties on the
/// split axis are broken by the lowest axis index, and equal coordinates keep
/// their current relative order, so the tree is deterministic.
pub fn build_cluster_tree(ps: &PointSet, n_min: usize) -> Result<ClusterTree> {
    if ps.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_min == 0 {
        return Err(Error::Domain("n_min must be at least 1".into()));
    }
    let n = ps.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut nodes = Vec::new();
    split(ps, &mut idx, 0, n, n_min, &mut nodes);

    let perm_i2e = idx;
    let mut perm_e2i = vec![0usize; n];
    for (i, &e) in perm_i2e.iter().enumerate() {
        perm_e2i[e] = i;
    }
    Ok(ClusterTree {
        nodes,
        perm_e2i,
        perm_i2e,
        n_min,
    })
}

fn split(
    ps: &PointSet,
    idx: &mut [usize],
    start: usize,
    end: usize,
    n_min: usize,
    nodes: &mut Vec<ClusterNode>,
) -> usize {
    let bbox = BoundingBox::around(ps, &idx[start..end]);
    let id = nodes.len();
    nodes.push(ClusterNode {
        start,
        end,
        bbox,
        children: None,
    });
    let len = end - start;
    if len <= n_min {
        return id;
    }

    // Largest extent wins; ties go to the lowest axis index.
    let bbox = nodes[id].bbox.clone();
    let mut axis = 0;
    for a in 1..ps.dim() {
        if bbox.extent(a) > bbox.extent(axis) {
            axis = a;
        }
    }
    // Stable sort keeps equal coordinates in internal index order.
    idx[start..end].sort_by(|&a, &b| {
        ps.point(a)[axis]
            .partial_cmp(&ps.point(b)[axis])
            .expect("finite coordinates")
    });
    let mid = start + len.div_ceil(2); // left gets the extra point

    let left = split(ps, idx, start, mid, n_min, nodes);
    let right = split(ps, idx, mid, end, n_min, nodes);
    nodes[id].children = Some([left, right]);
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_points(n: usize, seed: u64) -> PointSet {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        PointSet::new(&pts).unwrap()
    }

    #[test]
    fn collinear_points_split_evenly() {
        let ps = PointSet::new(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![3.0, 0.0],
        ])
        .unwrap();
        let ct = build_cluster_tree(&ps, 1).unwrap();
        let root = ct.node(ct.root());
        let [l, r] = root.children.expect("root splits");
        assert_eq!(ct.node(l).len(), 2);
        assert_eq!(ct.node(r).len(), 2);
        // depth 2: each size-2 child splits once more into singletons
        assert!(ct.node(l).children.is_some());
        assert!(ct.node(ct.node(l).children.unwrap()[0]).is_leaf());
    }

    #[test]
    fn single_point_tree_is_identity() {
        let ps = PointSet::new(&[vec![0.5, 0.5]]).unwrap();
        let ct = build_cluster_tree(&ps, 32).unwrap();
        assert_eq!(ct.num_nodes(), 1);
        assert_eq!(ct.perm_e2i(), &[0]);
        assert_eq!(ct.perm_i2e(), &[0]);
        let v = ct.apply_permutation(&[7.0], PermDirection::E2I).unwrap();
        assert_eq!(v, vec![7.0]);
    }

    #[test]
    fn random_points_satisfy_tree_invariants() {
        let ps = unit_square_points(1000, 42);
        let ct = build_cluster_tree(&ps, 32).unwrap();
        let leaves = ct.leaves();
        assert!(leaves.len() >= 1000usize.div_ceil(32));
        let mut covered = 0;
        for &id in &leaves {
            let node = ct.node(id);
            assert!(node.len() <= 32, "leaf of size {}", node.len());
            covered += node.len();
        }
        assert_eq!(covered, 1000);
        // children partition their parent disjointly
        for id in 0..ct.num_nodes() {
            if let Some([l, r]) = ct.node(id).children {
                assert_eq!(ct.node(l).start, ct.node(id).start);
                assert_eq!(ct.node(l).end, ct.node(r).start);
                assert_eq!(ct.node(r).end, ct.node(id).end);
                // median split balance
                assert!(ct.node(l).len().abs_diff(ct.node(r).len()) <= 1);
            }
        }
        // permutations are mutually inverse bijections
        let mut seen = vec![false; 1000];
        for e in 0..1000 {
            let i = ct.perm_e2i()[e];
            assert!(!seen[i]);
            seen[i] = true;
            assert_eq!(ct.perm_i2e()[i], e);
        }
    }

    #[test]
    fn permutation_round_trip() {
        let ps = unit_square_points(137, 7);
        let ct = build_cluster_tree(&ps, 16).unwrap();
        let v: Vec<f64> = (0..137).map(|i| i as f64 * 0.37).collect();
        let w = ct.apply_permutation(&v, PermDirection::E2I).unwrap();
        let u = ct.apply_permutation(&w, PermDirection::I2E).unwrap();
        assert_eq!(u, v);
        // e2i of external-order data places entry perm_i2e[i] at slot i
        for i in 0..137 {
            assert_eq!(w[i], v[ct.perm_i2e()[i]]);
        }
    }

    #[test]
    fn permutation_rejects_length_mismatch() {
        let ps = unit_square_points(10, 1);
        let ct = build_cluster_tree(&ps, 4).unwrap();
        assert!(ct.apply_permutation(&[0.0; 9], PermDirection::E2I).is_err());
    }

    #[test]
    fn coincident_points_are_accepted() {
        let pts: Vec<Vec<f64>> = (0..20).map(|_| vec![0.5, 0.5]).collect();
        let ps = PointSet::new(&pts).unwrap();
        let ct = build_cluster_tree(&ps, 4).unwrap();
        assert_eq!(ct.leaves().iter().map(|&l| ct.node(l).len()).sum::<usize>(), 20);
    }
}
