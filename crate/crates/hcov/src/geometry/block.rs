use std::collections::HashMap;
use std::sync::Arc;

use super::{BoundingBox, ClusterTree};

/// Leaf classification of a block cluster tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Well-separated block, stored in low-rank form.
    Admissible,
    /// Small or inadmissible block, stored densely.
    Dense,
}

/// Node of the block cluster tree: a pair of clusters (rows, columns).
#[derive(Debug, Clone)]
pub struct BlockNode {
    pub row: usize, // cluster node id
    pub col: usize,
    pub children: Vec<usize>,
    pub kind: Option<BlockKind>, // Some for leaves
}

impl BlockNode {
    pub fn is_leaf(&self) -> bool {
        self.kind.is_some()
    }
}

/// Block cluster tree over `I x I`, built from one cluster tree. The leaves
/// partition the full index product; each leaf is either admissible or dense.
#[derive(Debug, Clone)]
pub struct BlockClusterTree {
    cluster_tree: Arc<ClusterTree>,
    nodes: Vec<BlockNode>,
    transpose_of: Vec<usize>, // block id of the mirrored (col, row) pair
    eta: f64,
}

impl BlockClusterTree {
    pub fn cluster_tree(&self) -> &Arc<ClusterTree> {
        &self.cluster_tree
    }

    pub fn node(&self, id: usize) -> &BlockNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Id of the block (sigma, tau) mirroring block `id` = (tau, sigma).
    pub fn transpose_of(&self, id: usize) -> usize {
        self.transpose_of[id]
    }

    pub fn row_range(&self, id: usize) -> std::ops::Range<usize> {
        let c = self.cluster_tree.node(self.nodes[id].row);
        c.start..c.end
    }

    pub fn col_range(&self, id: usize) -> std::ops::Range<usize> {
        let c = self.cluster_tree.node(self.nodes[id].col);
        c.start..c.end
    }

    /// Leaf ids of the subtree rooted at `id`.
    pub fn leaves_under(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(b) = stack.pop() {
            if self.nodes[b].is_leaf() {
                out.push(b);
            } else {
                stack.extend(self.nodes[b].children.iter().rev());
            }
        }
        out
    }

    /// All leaf ids of the tree.
    pub fn leaves(&self) -> Vec<usize> {
        self.leaves_under(self.root())
    }
}

/// Min-diameter geometric admissibility: min(diam tau, diam sigma) <= eta *
/// dist(tau, sigma), with diameters and distances measured on bounding boxes.
/// Touching or overlapping boxes (dist = 0) are always inadmissible.
pub fn is_admissible(tau: &BoundingBox, sigma: &BoundingBox, eta: f64) -> bool {
    let dist = tau.distance(sigma);
    if dist == 0.0 {
        return false;
    }
    tau.diameter().min(sigma.diameter()) <= eta * dist
}

/// Builds the block cluster tree by recursive descent from (root, root).
/// Admissible pairs become low-rank leaves; pairs of cluster-tree leaves
/// become dense leaves; everything else refines over the cluster sons, with
/// one-sided refinement when only one side has sons.
pub fn build_block_cluster_tree(ct: &Arc<ClusterTree>, eta: f64) -> BlockClusterTree {
    let mut nodes = Vec::new();
    descend(ct, ct.root(), ct.root(), eta, &mut nodes);

    let mut by_pair = HashMap::with_capacity(nodes.len());
    for (id, node) in nodes.iter().enumerate() {
        by_pair.insert((node.row, node.col), id);
    }
    let transpose_of = nodes
        .iter()
        .map(|node| by_pair[&(node.col, node.row)])
        .collect();

    BlockClusterTree {
        cluster_tree: Arc::clone(ct),
        nodes,
        transpose_of,
        eta,
    }
}

fn descend(
    ct: &ClusterTree,
    row: usize,
    col: usize,
    eta: f64,
    nodes: &mut Vec<BlockNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(BlockNode {
        row,
        col,
        children: Vec::new(),
        kind: None,
    });

    let r = ct.node(row);
    let c = ct.node(col);
    if is_admissible(&r.bbox, &c.bbox, eta) {
        nodes[id].kind = Some(BlockKind::Admissible);
        return id;
    }
    if r.is_leaf() && c.is_leaf() {
        nodes[id].kind = Some(BlockKind::Dense);
        return id;
    }

    let row_sons: Vec<usize> = match r.children {
        Some([a, b]) => vec![a, b],
        None => vec![row],
    };
    let col_sons: Vec<usize> = match c.children {
        Some([a, b]) => vec![a, b],
        None => vec![col],
    };
    let mut children = Vec::with_capacity(row_sons.len() * col_sons.len());
    for &rs in &row_sons {
        for &cs in &col_sons {
            children.push(descend(ct, rs, cs, eta, nodes));
        }
    }
    nodes[id].children = children;
    id
}
