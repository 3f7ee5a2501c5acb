//! EdgeBank memorization baselines for ratios and volumes.
//!
//! `EdgeBank` averages everything seen before the prediction month;
//! `EdgeBank-tw` only looks at the month immediately before it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::{NodeId, RatioMatrix, SnapshotSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occurrence {
    pub t: usize,
    pub amount: f64,
    pub ratio: f64,
}

/// Every past occurrence of every pair, strictly before the cutoff month.
#[derive(Debug, Clone)]
pub struct EdgeBankState {
    pub cutoff: usize,
    pub pairs: BTreeMap<(NodeId, NodeId), Vec<Occurrence>>,
    /// Months (before the cutoff) in which each node sent anything.
    pub active_months: Vec<Vec<usize>>,
}

impl EdgeBankState {
    pub fn build(series: &SnapshotSeries, cutoff: usize) -> Result<Self> {
        check_month(series, cutoff)?;
        let mut pairs: BTreeMap<(NodeId, NodeId), Vec<Occurrence>> = BTreeMap::new();
        let mut active_months = vec![Vec::new(); series.n_nodes()];
        for t in 0..cutoff {
            let decomp = series.decomposition(t);
            for (i, row) in decomp.ratios.rows() {
                if row.is_empty() {
                    continue;
                }
                active_months[i].push(t);
                for &(j, r) in row {
                    pairs.entry((i, j)).or_default().push(Occurrence {
                        t,
                        amount: series.snapshot(t).get(i, j),
                        ratio: r,
                    });
                }
            }
        }
        Ok(Self {
            cutoff,
            pairs,
            active_months,
        })
    }

    pub fn contains(&self, i: NodeId, j: NodeId) -> bool {
        self.pairs.contains_key(&(i, j))
    }
}

fn check_month(series: &SnapshotSeries, t: usize) -> Result<()> {
    if t == 0 || t > series.len() {
        return Err(FlowError::InvalidArgument(format!(
            "prediction month must be in 1..={}, got {t}",
            series.len()
        )));
    }
    Ok(())
}

/// How past ratio rows are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioAveraging {
    /// Mean of the per-month ratio rows over active months, then renormalize.
    #[default]
    AverageThenRenormalize,
    /// Sum raw amounts over past months, then normalize once.
    PooledWeights,
}

impl std::str::FromStr for RatioAveraging {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average-then-renormalize" => Ok(Self::AverageThenRenormalize),
            "pooled-weights" => Ok(Self::PooledWeights),
            other => Err(FlowError::Config(format!("unknown ratio averaging {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioPrediction {
    pub t: usize,
    pub matrix: RatioMatrix,
    /// Senders with no usable history; their rows are empty.
    pub cold_start: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumePrediction {
    pub t: usize,
    pub values: Vec<f64>,
    pub cold_start: Vec<NodeId>,
}

fn normalize(mut row: Vec<(NodeId, f64)>) -> Vec<(NodeId, f64)> {
    let sum: f64 = row.iter().map(|&(_, p)| p).sum();
    if sum > 0.0 {
        for (_, p) in &mut row {
            *p /= sum;
        }
    }
    row
}

pub fn edgebank_ratio(series: &SnapshotSeries, t: usize) -> Result<RatioPrediction> {
    edgebank_ratio_with(series, t, RatioAveraging::default())
}

pub fn edgebank_ratio_with(
    series: &SnapshotSeries,
    t: usize,
    averaging: RatioAveraging,
) -> Result<RatioPrediction> {
    let state = EdgeBankState::build(series, t)?;
    Ok(ratio_from_state(&state, series.n_nodes(), averaging))
}

pub fn ratio_from_state(state: &EdgeBankState, n_nodes: usize, averaging: RatioAveraging) -> RatioPrediction {
    let mut rows: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n_nodes];
    for (&(i, j), occ) in &state.pairs {
        let value = match averaging {
            RatioAveraging::AverageThenRenormalize => {
                occ.iter().map(|o| o.ratio).sum::<f64>() / state.active_months[i].len() as f64
            }
            RatioAveraging::PooledWeights => occ.iter().map(|o| o.amount).sum(),
        };
        rows[i].push((j, value));
    }
    let mut matrix = RatioMatrix::empty(n_nodes);
    let mut cold_start = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if row.is_empty() {
            cold_start.push(i);
        } else {
            matrix.set_row(i, normalize(row));
        }
    }
    RatioPrediction {
        t: state.cutoff,
        matrix,
        cold_start,
    }
}

pub fn edgebank_tw_ratio(series: &SnapshotSeries, t: usize) -> Result<RatioPrediction> {
    check_month(series, t)?;
    let last = series.decomposition(t - 1);
    let n = series.n_nodes();
    let mut matrix = RatioMatrix::empty(n);
    let mut cold_start = Vec::new();
    for (i, row) in last.ratios.rows() {
        if row.is_empty() {
            cold_start.push(i);
        } else {
            matrix.set_row(i, normalize(row.to_vec()));
        }
    }
    Ok(RatioPrediction { t, matrix, cold_start })
}

pub fn edgebank_volume(series: &SnapshotSeries, t: usize) -> Result<VolumePrediction> {
    check_month(series, t)?;
    let n = series.n_nodes();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for s in 0..t {
        for (i, &w) in series.decomposition(s).w.iter().enumerate() {
            if w > 0.0 {
                sums[i] += w;
                counts[i] += 1;
            }
        }
    }
    let mut cold_start = Vec::new();
    let values = (0..n)
        .map(|i| {
            if counts[i] == 0 {
                cold_start.push(i);
                0.0
            } else {
                sums[i] / counts[i] as f64
            }
        })
        .collect();
    Ok(VolumePrediction { t, values, cold_start })
}

pub fn edgebank_tw_volume(series: &SnapshotSeries, t: usize) -> Result<VolumePrediction> {
    check_month(series, t)?;
    let w = &series.decomposition(t - 1).w;
    let cold_start = (0..w.len()).filter(|&i| w[i] <= 0.0).collect();
    Ok(VolumePrediction {
        t,
        values: w.clone(),
        cold_start,
    })
}
