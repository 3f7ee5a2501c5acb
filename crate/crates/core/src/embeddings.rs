//! Node features for the attention model.
//!
//! Structural embeddings summarize how heat diffuses from each node over the
//! directed warmup graph, forward along edges and backward against them, at
//! several diffusion times. The heat kernel `exp(-tau L)` uses the
//! out-degree-normalized Laplacian `L = I - D_out^-1 A` and is evaluated by a
//! truncated Taylor series.
//!
//! Each diffusion vector is reduced to its mean, variance, third central
//! moment and its `top_m` largest coefficients. Features are laid out
//! statistic-major (`stat, tau, direction`), then truncated or zero-padded to
//! the requested dimension. A node with no warmup edges diffuses only into
//! itself, so all such nodes share one constant row. They are reported in
//! [`StructuralEmbedding::isolated`].

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::{NodeId, SnapshotSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub tau: Vec<f64>,
    pub order: usize,
    pub top_m: usize,
    pub warmup_months: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            tau: vec![0.25, 0.5, 1.0],
            order: 20,
            top_m: 8,
            warmup_months: 3,
        }
    }
}

/// Weighted directed graph aggregated over the warmup months.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupGraph {
    pub n_nodes: usize,
    pub months: usize,
    pub edges: BTreeMap<(NodeId, NodeId), f64>,
}

impl WarmupGraph {
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (s, d, a) in edges {
            *map.entry((s, d)).or_insert(0.0) += a;
        }
        Self { n_nodes, months: 0, edges: map }
    }
}

/// Sums the first `months` snapshots; nothing later is read.
pub fn warmup_graph(series: &SnapshotSeries, months: usize) -> Result<WarmupGraph> {
    if months == 0 || months > series.len() {
        return Err(FlowError::InvalidArgument(format!(
            "warmup window of {months} months does not fit a {}-month series",
            series.len()
        )));
    }
    let mut g = WarmupGraph::from_edges(
        series.n_nodes(),
        series.snapshots()[..months].iter().flat_map(|s| s.edges()),
    );
    g.months = months;
    Ok(g)
}

/// Sparse `L = I - D^-1 A` in CSR-like form, for one edge direction.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    n: usize,
    // transition entries of P = D^-1 A, grouped by row
    offsets: Vec<usize>,
    cols: Vec<NodeId>,
    vals: Vec<f64>,
}

impl DiffusionOperator {
    pub fn new(graph: &WarmupGraph, reversed: bool) -> Self {
        let n = graph.n_nodes;
        let mut rows: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n];
        for (&(s, d), &a) in &graph.edges {
            let (from, to) = if reversed { (d, s) } else { (s, d) };
            rows[from].push((to, a));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in rows {
            let deg: f64 = row.iter().map(|&(_, a)| a).sum();
            for (j, a) in row {
                cols.push(j);
                vals.push(a / deg);
            }
            offsets.push(cols.len());
        }
        Self { n, offsets, cols, vals }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// `y = L x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = x[i] - acc;
        }
    }
}

/// Columns `exp(-tau L) e_node` for every `tau`, by Taylor series to `order`.
pub fn heat_diffusion(op: &DiffusionOperator, node: NodeId, taus: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = op.n_nodes();
    let mut power = vec![0.0; n];
    power[node] = 1.0;
    let mut next = vec![0.0; n];
    let mut out: Vec<Vec<f64>> = taus.iter().map(|_| power.clone()).collect();
    let mut coef: Vec<f64> = vec![1.0; taus.len()];
    for k in 1..=order {
        op.apply(&power, &mut next);
        std::mem::swap(&mut power, &mut next);
        for (ti, &tau) in taus.iter().enumerate() {
            coef[ti] *= -tau / k as f64;
            let c = coef[ti];
            for (o, p) in out[ti].iter_mut().zip(&power) {
                *o += c * p;
            }
        }
    }
    out
}

fn diffusion_statistics(psi: &[f64], top_m: usize) -> Vec<f64> {
    // sums run over the sorted values so relabeling nodes cannot change them
    let mut sorted = psi.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let third = sorted.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    sorted.resize(top_m, 0.0);
    let mut stats = vec![mean, var, third];
    stats.extend(sorted.into_iter().take(top_m));
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEmbedding {
    /// `n_nodes x dim`
    pub values: Array2<f64>,
    pub months_used: usize,
    pub method: String,
    /// Nodes without warmup edges.
    pub isolated: Vec<NodeId>,
}

impl StructuralEmbedding {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, node: NodeId) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(node)
    }

    /// Writes `node_id,f0,...,f{d-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["node_id".to_string()];
        header.extend((0..self.dim()).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn structural_embed(graph: &WarmupGraph, config: &EmbeddingConfig) -> Result<StructuralEmbedding> {
    if graph.edges.is_empty() {
        return Err(FlowError::EmptyDataset("warmup graph has no edges".into()));
    }
    if config.order < 4 {
        return Err(FlowError::InvalidArgument(format!(
            "taylor order must be at least 4, got {}",
            config.order
        )));
    }
    if config.tau.is_empty() || config.dim == 0 {
        return Err(FlowError::InvalidArgument("embedding needs at least one tau and dim > 0".into()));
    }
    let n = graph.n_nodes;
    let forward = DiffusionOperator::new(graph, false);
    let backward = DiffusionOperator::new(graph, true);
    let mut touched = vec![false; n];
    for &(s, d) in graph.edges.keys() {
        touched[s] = true;
        touched[d] = true;
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|v| {
            // per_tau_dir[tau][dir] = statistics
            let fwd = heat_diffusion(&forward, v, &config.tau, config.order);
            let bwd = heat_diffusion(&backward, v, &config.tau, config.order);
            let stats: Vec<[Vec<f64>; 2]> = fwd
                .iter()
                .zip(&bwd)
                .map(|(f, b)| [diffusion_statistics(f, config.top_m), diffusion_statistics(b, config.top_m)])
                .collect();
            let n_stats = 3 + config.top_m;
            let mut row = Vec::with_capacity(n_stats * stats.len() * 2);
            for s in 0..n_stats {
                for per_tau in &stats {
                    for dir in per_tau {
                        row.push(dir[s]);
                    }
                }
            }
            row.resize(config.dim, 0.0);
            row
        })
        .collect();

    let mut values = Array2::zeros((n, config.dim));
    for (i, row) in rows.into_iter().enumerate() {
        values.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Ok(StructuralEmbedding {
        values,
        months_used: graph.months,
        method: format!(
            "heat-kernel-diffusion(tau={:?}, order={}, top_m={})",
            config.tau, config.order, config.top_m
        ),
        isolated: (0..n).filter(|&i| !touched[i]).collect(),
    })
}

/// Loads externally computed embeddings; every node must appear exactly once.
pub fn load_embeddings<R: Read>(reader: R, n_nodes: usize) -> Result<StructuralEmbedding> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let dim = r.headers()?.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
        FlowError::EmbeddingMismatch("header must be node_id,f0,...".into())
    })?;
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut unknown = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| FlowError::Parse { line, message: msg };
        let id: usize = rec[0].parse().map_err(|_| bad(format!("bad node id {:?}", &rec[0])))?;
        if rec.len() != dim + 1 {
            return Err(bad(format!("expected {} fields, found {}", dim + 1, rec.len())));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad value {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if id >= n_nodes {
            unknown.push(id);
            continue;
        }
        if rows.insert(id, vals).is_some() {
            return Err(bad(format!("node {id} listed twice")));
        }
    }
    if !unknown.is_empty() {
        return Err(FlowError::EmbeddingMismatch(format!("unknown node ids {unknown:?}")));
    }
    let missing: Vec<usize> = (0..n_nodes).filter(|i| !rows.contains_key(i)).collect();
    if !missing.is_empty() {
        return Err(FlowError::EmbeddingMismatch(format!("missing node ids {missing:?}")));
    }
    let mut values = Array2::zeros((n_nodes, dim));
    for (i, row) in rows {
        values.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Ok(StructuralEmbedding {
        values,
        months_used: 0,
        method: "loaded".into(),
        isolated: Vec::new(),
    })
}

/// Functional time encoding `Phi(dt) = cos(dt * w + b)`, `dt` in months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoder {
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
    pub learnable: bool,
}

impl TimeEncoder {
    /// Geometric frequency ladder `w_k = 10^(-2k/d)`, zero phases.
    pub fn new(dim: usize, learnable: bool) -> Self {
        Self {
            freqs: (0..dim).map(|k| 10f64.powf(-2.0 * k as f64 / dim as f64)).collect(),
            phases: vec![0.0; dim],
            learnable,
        }
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn encode(&self, delta_t: f64) -> Vec<f64> {
        time_encode(self, delta_t)
    }
}

pub fn time_encode(encoder: &TimeEncoder, delta_t: f64) -> Vec<f64> {
    encoder
        .freqs
        .iter()
        .zip(&encoder.phases)
        .map(|(w, b)| (delta_t * w + b).cos())
        .collect()
}
