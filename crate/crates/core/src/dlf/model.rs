//! Forward and reverse-mode backward passes of the ratio model.
//!
//! For sender `i` with sampled neighbor events `k = 1..K`:
//!
//! ```text
//! z_i      = relu(x_i W_in + b_in)
//! h_0      = [z_i ; 0 ; phi(0)]            h_k = [z_jk ; e_k ; phi(dt_k)]
//! q        = h_0 W_q     key_k = h_k W_k    v_k = h_k W_v
//! a        = softmax(q . key_k / sqrt(d))
//! zbar     = sum_k a_k v_k
//! z2       = relu([zbar ; x_i] W_0 + b_0) W_1 + b_1
//! p        = hsoftmax(z2)
//! ```
//!
//! The self row carries zero edge features so all rows share one width.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::hstree::{HsNode, HsTree};
use super::params::DlfParams;
use super::sampling::NeighborSample;
use crate::error::{FlowError, Result};
use crate::graph::{NodeId, EDGE_FEATURES};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logs.
pub const PROB_EPS: f64 = 1e-12;

fn relu(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(|x| x.max(0.0))
}

fn add_outer(acc: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in acc.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub node: NodeId,
    pub neighbors: Vec<NodeId>,
    pub deltas: Vec<f64>,
    a1_self: Array1<f64>,
    a1_nb: Array2<f64>,
    /// `(1 + K) x row_width` attention input.
    pub h: Array2<f64>,
    q: Array1<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    /// Attention weights over the K neighbor rows.
    pub attn: Array1<f64>,
    pub zbar: Array1<f64>,
    cat: Array1<f64>,
    u: Array1<f64>,
    pub z2: Array1<f64>,
}

/// Column-wise z-scoring; constant columns become zero.
pub fn standardize(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

pub fn forward(params: &DlfParams, x: &Array2<f64>, sample: &NeighborSample) -> Result<ForwardCache> {
    if sample.entries.is_empty() {
        return Err(FlowError::InvalidArgument(format!(
            "node {} has no neighbors before month {} (cold start)",
            sample.node, sample.t
        )));
    }
    let dims = params.dims;
    let d = dims.d;
    let k = sample.entries.len();
    let m = dims.row_width();
    let t0 = d + EDGE_FEATURES;

    let xi = x.row(sample.node);
    let a1_self = xi.dot(&params.w_in) + &params.b_in;
    let neighbors: Vec<NodeId> = sample.entries.iter().map(|e| e.neighbor).collect();
    let xn = x.select(Axis(0), &neighbors);
    let a1_nb = xn.dot(&params.w_in) + &params.b_in;

    let mut h = Array2::zeros((k + 1, m));
    h.slice_mut(s![0, ..d]).assign(&relu(&a1_self));
    for (c, b) in params.time.phases.iter().enumerate() {
        h[[0, t0 + c]] = b.cos();
    }
    let deltas: Vec<f64> = sample.entries.iter().map(|e| e.delta_months).collect();
    for (r, entry) in sample.entries.iter().enumerate() {
        let mut row = h.row_mut(r + 1);
        row.slice_mut(s![..d]).assign(&a1_nb.row(r).mapv(|v| v.max(0.0)));
        for (c, &f) in entry.features.iter().enumerate() {
            row[d + c] = f;
        }
        for (c, (w, b)) in params.time.freqs.iter().zip(&params.time.phases).enumerate() {
            row[t0 + c] = (entry.delta_months * w + b).cos();
        }
    }

    let q = h.row(0).dot(&params.w_q);
    let hn = h.slice(s![1.., ..]);
    let keys = hn.dot(&params.w_k);
    let values = hn.dot(&params.w_v);
    let scale = 1.0 / (d as f64).sqrt();
    let scores = keys.dot(&q) * scale;
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut attn = scores.mapv(|s| (s - max).exp());
    let z = attn.sum();
    attn /= z;
    let zbar = values.t().dot(&attn);

    let mut cat = Array1::zeros(d + dims.d_x);
    cat.slice_mut(s![..d]).assign(&zbar);
    cat.slice_mut(s![d..]).assign(&xi);
    let u = cat.dot(&params.w_0) + &params.b_0;
    let z2 = relu(&u).dot(&params.w_1) + &params.b_1;

    Ok(ForwardCache {
        node: sample.node,
        neighbors,
        deltas,
        a1_self,
        a1_nb,
        h,
        q,
        keys,
        values,
        attn,
        zbar,
        cat,
        u,
        z2,
    })
}

/// Reaching probability of every tree node plus each internal node's
/// child distribution (by slot).
#[derive(Debug, Clone)]
pub struct HsForward {
    pub node_prob: Vec<f64>,
    pub child_probs: Vec<Vec<f64>>,
}

pub fn hsoftmax_forward(z2: ArrayView1<f64>, tree: &HsTree, params: &DlfParams) -> HsForward {
    let mut node_prob = vec![0.0; tree.nodes.len()];
    let mut child_probs = vec![Vec::new(); tree.n_internal()];
    node_prob[0] = 1.0;
    for (idx, node) in tree.nodes.iter().enumerate() {
        if let HsNode::Internal { children, slot } = node {
            let scores = params.tree_w[*slot].dot(&z2) + &params.tree_b[*slot];
            let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exp = scores.mapv(|s| (s - max).exp());
            let total = exp.sum();
            let probs: Vec<f64> = exp.iter().map(|e| e / total).collect();
            for (&c, &p) in children.iter().zip(&probs) {
                node_prob[c] = node_prob[idx] * p;
            }
            child_probs[*slot] = probs;
        }
    }
    HsForward { node_prob, child_probs }
}

/// Probability of every destination: the product of child-softmax
/// probabilities along its root-to-leaf path.
pub fn hsoftmax_prob(z2: ArrayView1<f64>, tree: &HsTree, params: &DlfParams) -> Vec<f64> {
    leaf_probs(&hsoftmax_forward(z2, tree, params), tree)
}

pub fn leaf_probs(hs: &HsForward, tree: &HsTree) -> Vec<f64> {
    let mut out = vec![0.0; tree.n_dest];
    for (idx, node) in tree.nodes.iter().enumerate() {
        if let HsNode::Leaf { dest } = node {
            out[*dest] = hs.node_prob[idx];
        }
    }
    out
}

/// Cross-entropy of one sender row over all destinations, and its
/// derivative with respect to each `ln p_j`.
pub fn row_loss_and_log_grad(probs: &[f64], target: &[(NodeId, f64)]) -> (f64, Vec<f64>) {
    let mut r = vec![0.0; probs.len()];
    for &(j, v) in target {
        r[j] = v;
    }
    let mut loss = 0.0;
    let mut g = vec![0.0; probs.len()];
    for (j, (&p, &rj)) in probs.iter().zip(&r).enumerate() {
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= rj * pc.ln() + (1.0 - rj) * (1.0 - pc).ln();
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            g[j] = -rj + (1.0 - rj) * p / (1.0 - p);
        }
    }
    (loss, g)
}

/// Back-propagates `dloss/dln p_j` through the tree. Subtree sums of the
/// leaf signals are accumulated bottom-up, so each child score gets
/// `G_child - p_child * G_parent`.
pub fn hsoftmax_backward(
    z2: ArrayView1<f64>,
    tree: &HsTree,
    params: &DlfParams,
    hs: &HsForward,
    log_grad: &[f64],
    grads: &mut DlfParams,
    dz2: &mut Array1<f64>,
) {
    let mut mass = vec![0.0; tree.nodes.len()];
    for (idx, node) in tree.nodes.iter().enumerate().rev() {
        match node {
            HsNode::Leaf { dest } => mass[idx] = log_grad[*dest],
            HsNode::Internal { children, slot } => {
                let total: f64 = children.iter().map(|&c| mass[c]).sum();
                mass[idx] = total;
                let probs = &hs.child_probs[*slot];
                for (k, &c) in children.iter().enumerate() {
                    let ds = mass[c] - probs[k] * total;
                    if ds == 0.0 {
                        continue;
                    }
                    grads.tree_w[*slot].row_mut(k).scaled_add(ds, &z2);
                    grads.tree_b[*slot][k] += ds;
                    dz2.scaled_add(ds, &params.tree_w[*slot].row(k));
                }
            }
        }
    }
}

/// Accumulates parameter gradients given `dloss/dz2`.
pub fn backward(params: &DlfParams, x: &Array2<f64>, cache: &ForwardCache, dz2: &Array1<f64>, grads: &mut DlfParams) {
    let dims = params.dims;
    let d = dims.d;
    let t0 = d + EDGE_FEATURES;

    let r = relu(&cache.u);
    add_outer(&mut grads.w_1, r.view(), dz2.view());
    grads.b_1 += dz2;
    let dr = params.w_1.dot(dz2);
    let du = Array1::from_shape_fn(d, |c| if cache.u[c] > 0.0 { dr[c] } else { 0.0 });
    add_outer(&mut grads.w_0, cache.cat.view(), du.view());
    grads.b_0 += &du;
    let dcat = params.w_0.dot(&du);
    let dzbar = dcat.slice(s![..d]);

    // attention
    let k = cache.attn.len();
    let scale = 1.0 / (d as f64).sqrt();
    let da = cache.values.dot(&dzbar);
    let mean = cache.attn.dot(&da);
    let ds = Array1::from_shape_fn(k, |r| cache.attn[r] * (da[r] - mean));
    let dq = cache.keys.t().dot(&ds) * scale;
    let mut dkeys = Array2::zeros((k, d));
    let mut dv = Array2::zeros((k, d));
    for r in 0..k {
        dkeys.row_mut(r).scaled_add(ds[r] * scale, &cache.q);
        dv.row_mut(r).scaled_add(cache.attn[r], &dzbar);
    }
    let h0 = cache.h.row(0);
    let hn = cache.h.slice(s![1.., ..]);
    add_outer(&mut grads.w_q, h0, dq.view());
    grads.w_k += &hn.t().dot(&dkeys);
    grads.w_v += &hn.t().dot(&dv);
    let dh0 = params.w_q.dot(&dq);
    let dhn = dkeys.dot(&params.w_k.t()) + dv.dot(&params.w_v.t());

    if params.time.learnable {
        for c in 0..dims.d_t {
            let (w, b) = (params.time.freqs[c], params.time.phases[c]);
            grads.time.phases[c] -= b.sin() * dh0[t0 + c];
            for (r, &dt) in cache.deltas.iter().enumerate() {
                let g = -(dt * w + b).sin() * dhn[[r, t0 + c]];
                grads.time.freqs[c] += g * dt;
                grads.time.phases[c] += g;
            }
        }
    }

    let dz_self = Array1::from_shape_fn(d, |c| if cache.a1_self[c] > 0.0 { dh0[c] } else { 0.0 });
    add_outer(&mut grads.w_in, x.row(cache.node), dz_self.view());
    grads.b_in += &dz_self;
    let dz_nb = Array2::from_shape_fn((k, d), |(r, c)| if cache.a1_nb[[r, c]] > 0.0 { dhn[[r, c]] } else { 0.0 });
    let xn = x.select(Axis(0), &cache.neighbors);
    grads.w_in += &xn.t().dot(&dz_nb);
    grads.b_in += &dz_nb.sum_axis(Axis(0));
}

/// Loss of one sample; gradients are added to `grads`.
pub fn sample_loss_grad(
    params: &DlfParams,
    tree: &HsTree,
    x: &Array2<f64>,
    sample: &NeighborSample,
    target: &[(NodeId, f64)],
    grads: &mut DlfParams,
) -> Result<f64> {
    let cache = forward(params, x, sample)?;
    let hs = hsoftmax_forward(cache.z2.view(), tree, params);
    let probs = leaf_probs(&hs, tree);
    let (loss, log_grad) = row_loss_and_log_grad(&probs, target);
    if !loss.is_finite() {
        return Err(FlowError::NonFinite(format!(
            "loss for node {} at month {}",
            sample.node, sample.t
        )));
    }
    let mut dz2 = Array1::zeros(params.dims.d);
    hsoftmax_backward(cache.z2.view(), tree, params, &hs, &log_grad, grads, &mut dz2);
    backward(params, x, &cache, &dz2, grads);
    Ok(loss)
}

/// Loss of one sample without gradients.
pub fn sample_loss(params: &DlfParams, tree: &HsTree, x: &Array2<f64>, sample: &NeighborSample, target: &[(NodeId, f64)]) -> Result<f64> {
    let cache = forward(params, x, sample)?;
    let probs = hsoftmax_prob(cache.z2.view(), tree, params);
    Ok(row_loss_and_log_grad(&probs, target).0)
}

/// Samples are processed in fixed-size chunks whose partial gradients are
/// summed in chunk order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Mean loss and mean gradient over a minibatch of `(sample, target row)`.
pub fn grad(
    params: &DlfParams,
    tree: &HsTree,
    x: &Array2<f64>,
    batch: &[(&NeighborSample, &[(NodeId, f64)])],
) -> Result<(f64, DlfParams)> {
    if batch.is_empty() {
        return Err(FlowError::EmptyDataset("empty minibatch".into()));
    }
    let partials: Vec<Result<(f64, DlfParams)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            for (sample, target) in chunk {
                loss += sample_loss_grad(params, tree, x, sample, target, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total.add_scaled(1.0, &g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    if !params.time.learnable {
        total.time.freqs.iter_mut().for_each(|v| *v = 0.0);
        total.time.phases.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok((loss / n, total))
}
