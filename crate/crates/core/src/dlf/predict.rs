use rayon::prelude::*;

use super::model::{forward, hsoftmax_prob};
use super::sampling::{sample_neighbors, EventIndex};
use super::train::TrainedModel;
use crate::baselines::RatioPrediction;
use crate::error::{FlowError, Result};
use crate::graph::{NodeId, RatioMatrix, SnapshotSeries};

/// Raw model rows for every sender with neighbor history before `t`.
/// Senders without history are reported as cold start.
pub fn predict_ratios(model: &TrainedModel, series: &SnapshotSeries, index: &EventIndex, t: usize) -> Result<RatioPrediction> {
    let n = series.n_nodes();
    if model.x.nrows() != n {
        return Err(FlowError::DimensionMismatch(format!(
            "model trained on {} nodes, series has {n}",
            model.x.nrows()
        )));
    }
    if t == 0 || t > index.n_months() {
        return Err(FlowError::InvalidArgument(format!(
            "prediction month {t} outside 1..={}",
            index.n_months()
        )));
    }
    let rows: Vec<Result<Option<Vec<(NodeId, f64)>>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sample = sample_neighbors(index, i, t, model.config.neighbors);
            if sample.is_cold_start() {
                return Ok(None);
            }
            let cache = forward(&model.params, &model.x, &sample)?;
            let probs = hsoftmax_prob(cache.z2.view(), &model.tree, &model.params);
            Ok(Some(probs.into_iter().enumerate().collect()))
        })
        .collect();
    let mut matrix = RatioMatrix::empty(n);
    let mut cold_start = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        match row? {
            Some(r) => matrix.set_row(i, r),
            None => cold_start.push(i),
        }
    }
    Ok(RatioPrediction { t, matrix, cold_start })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedRatios {
    pub matrix: RatioMatrix,
    /// Rows empty in both inputs.
    pub cold_start: Vec<NodeId>,
}

/// `lambda * history + (1 - lambda) * model` where both rows exist; a
/// single available row is used as is.
pub fn mix_with_history(model: &RatioMatrix, history: &RatioMatrix, lambda: f64) -> Result<MixedRatios> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FlowError::InvalidArgument(format!("mixing weight {lambda} outside [0, 1]")));
    }
    if model.n_nodes() != history.n_nodes() {
        return Err(FlowError::DimensionMismatch(format!(
            "model has {} rows, history {}",
            model.n_nodes(),
            history.n_nodes()
        )));
    }
    let n = model.n_nodes();
    let mut matrix = RatioMatrix::empty(n);
    let mut cold_start = Vec::new();
    for i in 0..n {
        let (m, h) = (model.row(i), history.row(i));
        let row = match (m.is_empty(), h.is_empty()) {
            (true, true) => {
                cold_start.push(i);
                continue;
            }
            (false, true) => m.to_vec(),
            (true, false) => h.to_vec(),
            (false, false) => merge(m, h, lambda),
        };
        matrix.set_row(i, row);
    }
    Ok(MixedRatios { matrix, cold_start })
}

fn merge(m: &[(NodeId, f64)], h: &[(NodeId, f64)], lambda: f64) -> Vec<(NodeId, f64)> {
    let mut out = Vec::with_capacity(m.len() + h.len());
    let (mut a, mut b) = (0, 0);
    while a < m.len() || b < h.len() {
        let next_m = m.get(a).map(|e| e.0);
        let next_h = h.get(b).map(|e| e.0);
        match (next_m, next_h) {
            (Some(jm), Some(jh)) if jm == jh => {
                out.push((jm, lambda * h[b].1 + (1.0 - lambda) * m[a].1));
                a += 1;
                b += 1;
            }
            (Some(jm), Some(jh)) if jm < jh => {
                out.push((jm, (1.0 - lambda) * m[a].1));
                a += 1;
            }
            (Some(jm), None) => {
                out.push((jm, (1.0 - lambda) * m[a].1));
                a += 1;
            }
            (_, Some(jh)) => {
                out.push((jh, lambda * h[b].1));
                b += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}
