//! Descriptive statistics of a snapshot series: counts, sparsity, edge
//! persistence, complementary CDFs, and a continuous power-law fit with
//! KS-selected lower cutoff.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::SnapshotSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub n_snapshots: usize,
    pub n_nodes: usize,
    /// Number of `(pair, snapshot)` entries after monthly aggregation.
    pub n_edges: usize,
    pub avg_sparsity: f64,
    pub avg_edge_persistence: f64,
}

pub fn summarize(series: &SnapshotSeries) -> Result<NetworkSummary> {
    if series.is_empty() {
        return Err(FlowError::EmptyDataset("series has no snapshots".into()));
    }
    let n = series.n_nodes();
    let t_count = series.len();
    let possible = (n * n.saturating_sub(1)) as f64;
    let mut appearances: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut n_edges = 0;
    let mut sparsity_sum = 0.0;
    for snap in series.snapshots() {
        let mut non_loop = 0usize;
        for (s, d, _) in snap.edges() {
            *appearances.entry((s, d)).or_default() += 1;
            if s != d {
                non_loop += 1;
            }
        }
        n_edges += snap.n_edges();
        if possible > 0.0 {
            sparsity_sum += non_loop as f64 / possible;
        }
    }
    if appearances.is_empty() {
        return Err(FlowError::EmptyDataset("series has no edges".into()));
    }
    let persistence = appearances
        .values()
        .map(|&c| c as f64 / t_count as f64)
        .sum::<f64>()
        / appearances.len() as f64;
    Ok(NetworkSummary {
        n_snapshots: t_count,
        n_nodes: n,
        n_edges,
        avg_sparsity: sparsity_sum / t_count as f64,
        avg_edge_persistence: persistence,
    })
}

/// Degree and strength samples of the time-aggregated network. Nodes with a
/// zero value are left out so every sample is positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub in_degree: Vec<f64>,
    pub out_degree: Vec<f64>,
    pub in_weight: Vec<f64>,
    pub out_weight: Vec<f64>,
}

pub fn aggregate_distributions(series: &SnapshotSeries) -> Distributions {
    let n = series.n_nodes();
    let mut agg: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for snap in series.snapshots() {
        for (s, d, a) in snap.edges() {
            *agg.entry((s, d)).or_default() += a;
        }
    }
    let mut in_deg = vec![0.0; n];
    let mut out_deg = vec![0.0; n];
    let mut in_w = vec![0.0; n];
    let mut out_w = vec![0.0; n];
    for (&(s, d), &a) in &agg {
        out_deg[s] += 1.0;
        in_deg[d] += 1.0;
        out_w[s] += a;
        in_w[d] += a;
    }
    let positive = |v: Vec<f64>| v.into_iter().filter(|&x| x > 0.0).collect();
    Distributions {
        in_degree: positive(in_deg),
        out_degree: positive(out_deg),
        in_weight: positive(in_w),
        out_weight: positive(out_w),
    }
}

/// Points `(x, P(X >= x))` at every distinct value, ascending in `x`.
pub fn ccdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(FlowError::EmptyDataset("ccdf of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points = Vec::new();
    let mut k = 0;
    while k < sorted.len() {
        let x = sorted[k];
        points.push((x, (sorted.len() - k) as f64 / n));
        while k < sorted.len() && sorted[k] == x {
            k += 1;
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub x_min: f64,
    pub ks_distance: f64,
    pub n_tail: usize,
}

/// Tail samples required before a cutoff is considered.
pub const MIN_TAIL: usize = 10;

fn mle_alpha(tail: &[f64], x_min: f64) -> Option<f64> {
    let log_sum: f64 = tail.iter().map(|&x| (x / x_min).ln()).sum();
    (log_sum > 0.0).then(|| 1.0 + tail.len() as f64 / log_sum)
}

/// KS distance between the empirical CDF of an ascending `tail` and the
/// fitted power-law CDF `1 - (x/x_min)^(1-alpha)`.
fn ks_distance(tail: &[f64], x_min: f64, alpha: f64) -> f64 {
    let n = tail.len() as f64;
    tail.iter()
        .enumerate()
        .map(|(i, &x)| {
            let model = 1.0 - (x / x_min).powf(1.0 - alpha);
            let above = ((i + 1) as f64 / n - model).abs();
            let below = (model - i as f64 / n).abs();
            above.max(below)
        })
        .fold(0.0, f64::max)
        .min(1.0)
}

/// Continuous MLE with a fixed lower cutoff.
pub fn fit_power_law_fixed(values: &[f64], x_min: f64) -> Result<PowerLawFit> {
    if !(x_min > 0.0) {
        return Err(FlowError::InvalidArgument(format!("x_min must be positive, got {x_min}")));
    }
    let mut tail: Vec<f64> = values.iter().copied().filter(|&x| x >= x_min).collect();
    tail.sort_by(f64::total_cmp);
    let alpha = mle_alpha(&tail, x_min).ok_or_else(|| {
        FlowError::InsufficientData(format!(
            "need at least one sample strictly above x_min = {x_min}"
        ))
    })?;
    Ok(PowerLawFit {
        alpha,
        x_min,
        ks_distance: ks_distance(&tail, x_min, alpha),
        n_tail: tail.len(),
    })
}

/// Fits a power law choosing `x_min` among distinct observed values (up to the
/// 90th percentile) to minimize the KS distance.
pub fn fit_power_law(values: &[f64]) -> Result<PowerLawFit> {
    if values.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(FlowError::InvalidArgument("power-law samples must be positive and finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let insufficient = || {
        FlowError::InsufficientData(format!(
            "power-law fit needs at least {MIN_TAIL} samples at or above a candidate x_min, got {n} samples"
        ))
    };
    if n < MIN_TAIL {
        return Err(insufficient());
    }
    let cap = sorted[((n - 1) as f64 * 0.9).floor() as usize];
    let mut candidates = Vec::new();
    for (k, &x) in sorted.iter().enumerate() {
        if x > cap || n - k < MIN_TAIL {
            break;
        }
        if k == 0 || sorted[k - 1] != x {
            candidates.push(k);
        }
    }
    // suffix sums of ln x give each candidate's MLE in O(1)
    let mut suffix_ln = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix_ln[k] = suffix_ln[k + 1] + sorted[k].ln();
    }
    let fits: Vec<PowerLawFit> = candidates
        .par_iter()
        .filter_map(|&k| {
            let x_min = sorted[k];
            let tail = &sorted[k..];
            let log_sum = suffix_ln[k] - tail.len() as f64 * x_min.ln();
            if log_sum <= 0.0 {
                return None;
            }
            let alpha = 1.0 + tail.len() as f64 / log_sum;
            Some(PowerLawFit {
                alpha,
                x_min,
                ks_distance: ks_distance(tail, x_min, alpha),
                n_tail: tail.len(),
            })
        })
        .collect();
    fits.into_iter()
        .reduce(|best, f| if f.ks_distance < best.ks_distance { f } else { best })
        .ok_or_else(insufficient)
}
