//! Shallow, wide hierarchical softmax trees built by recursive top-down
//! k-means over destination representations.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::NodeId;

pub const MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsNode {
    /// `slot` indexes the per-node score weights in the model parameters.
    Internal { children: Vec<usize>, slot: usize },
    Leaf { dest: NodeId },
}

/// Tree nodes are stored in pre-order: every child index is larger than its
/// parent's, so a reverse sweep visits children before parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsTree {
    pub nodes: Vec<HsNode>,
    pub n_dest: usize,
    pub depth: usize,
    pub branching: usize,
}

impl HsTree {
    /// Depth-1 tree: the root's children are all destinations.
    pub fn flat(n_dest: usize) -> Self {
        let mut nodes = vec![HsNode::Internal {
            children: (1..=n_dest).collect(),
            slot: 0,
        }];
        nodes.extend((0..n_dest).map(|dest| HsNode::Leaf { dest }));
        Self {
            nodes,
            n_dest,
            depth: 1,
            branching: n_dest,
        }
    }

    pub fn n_internal(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, HsNode::Internal { .. }))
            .count()
    }

    /// Number of children of each internal node, indexed by slot.
    pub fn slot_widths(&self) -> Vec<usize> {
        let mut widths = vec![0; self.n_internal()];
        for node in &self.nodes {
            if let HsNode::Internal { children, slot } = node {
                widths[*slot] = children.len();
            }
        }
        widths
    }

    /// Checks the structural invariants: each destination at exactly one
    /// leaf, depth bound, pre-order layout, slot numbering.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlowError::InvalidArgument(format!("invalid tree: {m}")));
        if self.nodes.is_empty() || !matches!(self.nodes[0], HsNode::Internal { .. }) {
            return bad("root must be internal".into());
        }
        let mut seen = vec![0usize; self.n_dest];
        let mut slots = vec![false; self.n_internal()];
        let mut level = vec![0usize; self.nodes.len()];
        level[0] = 1;
        for (idx, node) in self.nodes.iter().enumerate() {
            match node {
                HsNode::Internal { children, slot } => {
                    if level[idx] == 0 {
                        return bad(format!("node {idx} unreachable"));
                    }
                    if level[idx] > MAX_DEPTH.max(self.depth) {
                        return bad(format!("depth exceeds {}", self.depth));
                    }
                    if children.is_empty() {
                        return bad(format!("internal node {idx} has no children"));
                    }
                    if *slot >= slots.len() || std::mem::replace(&mut slots[*slot], true) {
                        return bad(format!("slot {slot} reused or out of range"));
                    }
                    for &c in children {
                        if c <= idx || c >= self.nodes.len() {
                            return bad(format!("child {c} of {idx} breaks pre-order"));
                        }
                        level[c] = level[idx] + 1;
                    }
                }
                HsNode::Leaf { dest } => {
                    if *dest >= self.n_dest {
                        return bad(format!("leaf destination {dest} out of range"));
                    }
                    seen[*dest] += 1;
                }
            }
        }
        if let Some(d) = seen.iter().position(|&c| c != 1) {
            return bad(format!("destination {d} appears {} times", seen[d]));
        }
        if self.depth > MAX_DEPTH {
            return bad(format!("depth {} > {MAX_DEPTH}", self.depth));
        }
        Ok(())
    }

    /// Tree depth at which each destination's leaf sits (root children = 1).
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut level = vec![0usize; self.nodes.len()];
        let mut out = vec![0; self.n_dest];
        for (idx, node) in self.nodes.iter().enumerate() {
            match node {
                HsNode::Internal { children, .. } => {
                    for &c in children {
                        level[c] = level[idx] + 1;
                    }
                }
                HsNode::Leaf { dest } => out[*dest] = level[idx],
            }
        }
        out
    }
}

/// `ceil(n^(1/3))`, the smallest branching for which a depth-3 tree can
/// hold `n` leaves. Never below 2.
pub fn default_branching(n: usize) -> usize {
    let mut b = (n as f64).cbrt().floor().max(1.0) as usize;
    while b * b * b < n {
        b += 1;
    }
    b.max(2)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Partitions `members` into up to `k` clusters with k-means++ seeding and
/// Lloyd iterations. Ties go to the lowest cluster index; clusters come back
/// ordered by their smallest member. Falls back to contiguous id chunks when
/// the points are not separable.
fn kmeans<R: Rng>(members: &[usize], reps: &Array2<f64>, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let point = |m: usize| reps.row(m).to_vec();
    let points: Vec<Vec<f64>> = members.iter().map(|&m| point(m)).collect();
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(points[pick].clone());
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if idx.is_empty() {
                continue;
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = idx.iter().map(|&i| points[i][d]).sum::<f64>() / idx.len() as f64;
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
    for (i, &c) in assign.iter().enumerate() {
        clusters[c].push(members[i]);
    }
    clusters.retain(|c| !c.is_empty());
    if clusters.len() < 2 {
        let chunk = n.div_ceil(k);
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        clusters = sorted.chunks(chunk).map(<[usize]>::to_vec).collect();
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Builds a tree of at most `depth` levels over the rows of `reps` (one row
/// per destination id).
pub fn build_hs_tree<R: Rng>(reps: &Array2<f64>, depth: usize, branching: usize, rng: &mut R) -> Result<HsTree> {
    if branching < 2 {
        return Err(FlowError::InvalidArgument(format!("branching must be at least 2, got {branching}")));
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(FlowError::InvalidArgument(format!("tree depth must be in 1..={MAX_DEPTH}, got {depth}")));
    }
    let n_dest = reps.nrows();
    if n_dest == 0 {
        return Err(FlowError::EmptyDataset("no destinations for the softmax tree".into()));
    }
    let mut tree = HsTree {
        nodes: Vec::new(),
        n_dest,
        depth,
        branching,
    };
    let mut next_slot = 0;
    let members: Vec<usize> = (0..n_dest).collect();
    grow(&mut tree, &members, 1, reps, rng, &mut next_slot);
    tree.validate()?;
    Ok(tree)
}

fn grow<R: Rng>(
    tree: &mut HsTree,
    members: &[usize],
    level: usize,
    reps: &Array2<f64>,
    rng: &mut R,
    next_slot: &mut usize,
) -> usize {
    let idx = tree.nodes.len();
    let slot = *next_slot;
    *next_slot += 1;
    tree.nodes.push(HsNode::Internal { children: Vec::new(), slot });
    let mut children = Vec::new();
    if level == tree.depth || members.len() <= tree.branching {
        for &m in members {
            children.push(tree.nodes.len());
            tree.nodes.push(HsNode::Leaf { dest: m });
        }
    } else {
        for cluster in kmeans(members, reps, tree.branching, rng) {
            if cluster.len() == 1 {
                children.push(tree.nodes.len());
                tree.nodes.push(HsNode::Leaf { dest: cluster[0] });
            } else {
                children.push(grow(tree, &cluster, level + 1, reps, rng, next_slot));
            }
        }
    }
    if let HsNode::Internal { children: c, .. } = &mut tree.nodes[idx] {
        *c = children;
    }
    idx
}
