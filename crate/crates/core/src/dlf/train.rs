use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hstree::{build_hs_tree, default_branching, HsTree};
use super::model::{grad, sample_loss, standardize};
use super::params::{DlfParams, Dims};
use super::sampling::{sample_neighbors, EventIndex, NeighborSample};
use crate::embeddings::StructuralEmbedding;
use crate::error::{FlowError, Result};
use crate::graph::{EdgeFeatureLayout, NodeId, SnapshotSeries, EDGE_FEATURES};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Neighbor cap `K`.
    pub neighbors: usize,
    /// Weight of the history average when mixing.
    pub mix: f64,
    pub seed: u64,
    pub dim: usize,
    pub time_dim: usize,
    pub time_learnable: bool,
    /// 1 gives a flat softmax.
    pub tree_depth: usize,
    pub branching: Option<usize>,
    /// First month used as a training target.
    pub first_month: usize,
    pub layout: EdgeFeatureLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 50,
            batch_size: 256,
            neighbors: 100,
            mix: 0.8,
            seed: 0,
            dim: 64,
            time_dim: 16,
            time_learnable: true,
            tree_depth: 3,
            branching: None,
            first_month: 1,
            layout: EdgeFeatureLayout::Standard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FlowError::Config(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size == 0 || self.neighbors == 0 || self.dim == 0 {
            return bad("batch_size, neighbors and dim must be positive");
        }
        if self.time_dim == 0 {
            return bad("time_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return bad("mix must lie in [0, 1]");
        }
        if self.first_month == 0 {
            return bad("first_month must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub params: DlfParams,
    pub tree: HsTree,
    /// Standardized structural embeddings the model was trained on.
    pub x: Array2<f64>,
    /// Training snapshots are `0..cutoff`.
    pub cutoff: usize,
    pub initial_loss: f64,
    /// Mean training loss of each epoch.
    pub trace: Vec<f64>,
}

/// One training example: the neighbor sample of sender `i` at month `t` and
/// its true ratio row.
pub struct TrainingSet {
    pub samples: Vec<NeighborSample>,
    pub targets: Vec<Vec<(NodeId, f64)>>,
}

pub fn training_set(series: &SnapshotSeries, index: &EventIndex, config: &TrainConfig, cutoff: usize) -> TrainingSet {
    let mut samples = Vec::new();
    let mut targets = Vec::new();
    for t in config.first_month..cutoff {
        let decomp = series.decomposition(t);
        for (i, row) in decomp.ratios.rows() {
            if row.is_empty() {
                continue;
            }
            let sample = sample_neighbors(index, i, t, config.neighbors);
            if sample.is_cold_start() {
                continue;
            }
            samples.push(sample);
            targets.push(row.to_vec());
        }
    }
    TrainingSet { samples, targets }
}

/// Destination representations for tree clustering: the standardized
/// structural embedding next to the mean features of the node's incoming
/// edges over the training months.
pub fn label_representations(series: &SnapshotSeries, index: &EventIndex, x: &Array2<f64>, cutoff: usize) -> Array2<f64> {
    let n = series.n_nodes();
    let mut sums = Array2::<f64>::zeros((n, EDGE_FEATURES));
    let mut counts = vec![0usize; n];
    for t in 0..cutoff {
        let ctx = index.context(t);
        for (i, j, _) in series.snapshot(t).edges() {
            if let Ok(f) = ctx.features(i, j) {
                for (c, v) in f.iter().enumerate() {
                    sums[[j, c]] += v;
                }
                counts[j] += 1;
            }
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            sums.row_mut(j).mapv_inplace(|v| v / c as f64);
        }
    }
    concatenate![Axis(1), x.view(), standardize(&sums).view()]
}

fn mean_loss(params: &DlfParams, tree: &HsTree, x: &Array2<f64>, set: &TrainingSet) -> Result<f64> {
    let losses: Vec<Result<f64>> = set
        .samples
        .par_iter()
        .zip(&set.targets)
        .map(|(s, t)| sample_loss(params, tree, x, s, t))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / set.samples.len() as f64)
}

/// Minibatch gradient descent on snapshots `first_month..cutoff`.
pub fn train(
    series: &SnapshotSeries,
    embedding: &StructuralEmbedding,
    config: &TrainConfig,
    cutoff: usize,
) -> Result<TrainedModel> {
    config.validate()?;
    let n = series.n_nodes();
    if embedding.n_nodes() != n {
        return Err(FlowError::EmbeddingMismatch(format!(
            "{} embedding rows for {n} nodes",
            embedding.n_nodes()
        )));
    }
    if series.len() < embedding.months_used + 2 {
        return Err(FlowError::InsufficientData(format!(
            "{} snapshots; need at least {} (warmup + 2)",
            series.len(),
            embedding.months_used + 2
        )));
    }
    if cutoff > series.len() || cutoff <= config.first_month {
        return Err(FlowError::InvalidArgument(format!(
            "training cutoff {cutoff} outside ({}, {}]",
            config.first_month,
            series.len()
        )));
    }

    let x = standardize(&embedding.values);
    let index = EventIndex::new(series, config.layout);
    let set = training_set(series, &index, config, cutoff);
    if set.samples.is_empty() {
        return Err(FlowError::InsufficientData("no sender-months with neighbor history before the cutoff".into()));
    }

    let tree = if config.tree_depth <= 1 {
        HsTree::flat(n)
    } else {
        let reps = label_representations(series, &index, &x, cutoff);
        let branching = config.branching.unwrap_or_else(|| default_branching(n));
        build_hs_tree(&reps, config.tree_depth, branching, &mut stream(config.seed, Stream::Tree))?
    };
    let dims = Dims {
        d_x: x.ncols(),
        d: config.dim,
        d_t: config.time_dim,
    };
    let mut params = DlfParams::init(dims, &tree, config.time_learnable, &mut stream(config.seed, Stream::Init));
    let initial_loss = mean_loss(&params, &tree, &x, &set)?;

    let mut order: Vec<usize> = (0..set.samples.len()).collect();
    let mut rng = stream(config.seed, Stream::Batching);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&k| (&set.samples[k], set.targets[k].as_slice()))
                .collect();
            let (loss, g) = grad(&params, &tree, &x, &batch).map_err(|e| diverged(epoch, &trace, e))?;
            epoch_loss += loss * chunk.len() as f64;
            params.add_scaled(-config.lr, &g);
            if !params.is_finite() {
                return Err(diverged(epoch, &trace, FlowError::NonFinite("parameters".into())));
            }
        }
        let mean = epoch_loss / set.samples.len() as f64;
        if !mean.is_finite() {
            return Err(diverged(epoch, &trace, FlowError::NonFinite("epoch loss".into())));
        }
        trace.push(mean);
    }

    Ok(TrainedModel {
        config: config.clone(),
        params,
        tree,
        x,
        cutoff,
        initial_loss,
        trace,
    })
}

fn diverged(epoch: usize, trace: &[f64], cause: FlowError) -> FlowError {
    FlowError::NonFinite(format!("training diverged in epoch {epoch} ({cause}); loss trace so far {trace:?}"))
}

impl TrainedModel {
    /// Mean loss of the current parameters over a set of months.
    pub fn loss_on(&self, series: &SnapshotSeries, months: std::ops::Range<usize>) -> Result<f64> {
        let index = EventIndex::new(series, self.config.layout);
        let cfg = TrainConfig {
            first_month: months.start.max(1),
            ..self.config.clone()
        };
        let set = training_set(series, &index, &cfg, months.end);
        if set.samples.is_empty() {
            return Err(FlowError::InsufficientData("no evaluable sender-months".into()));
        }
        mean_loss(&self.params, &self.tree, &self.x, &set)
    }
}
