//! Next-month total outflow forecasting.

pub mod features;
pub mod gbdt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{build_volume_features, FlowTotals, FEATURE_NAMES, N_FEATURES, WINDOW};
pub use gbdt::{gbdt_fit, gbdt_predict, GbdtConfig, GbdtModel, RegressionTree, TreeNode};

use crate::error::{FlowError, Result};
use crate::graph::{NodeId, SnapshotSeries};

/// Boosted trees fit on `ln(1 + w_i(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeModel {
    pub gbdt: GbdtModel,
    pub config: GbdtConfig,
    /// Training months are `first_month..cutoff`.
    pub first_month: usize,
    pub cutoff: usize,
    pub n_rows: usize,
}

/// Rows of `(node, t)` for months `first..cutoff`, restricted to nodes with
/// any activity in `t-3..=t`.
pub fn volume_rows(series: &SnapshotSeries, totals: &FlowTotals, months: std::ops::Range<usize>) -> Result<(Vec<(NodeId, usize)>, Array2<f64>, Vec<f64>)> {
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for t in months {
        let w = &series.decomposition(t).w;
        for i in 0..series.n_nodes() {
            if !totals.is_active_around(i, t) {
                continue;
            }
            keys.push((i, t));
            rows.extend_from_slice(&totals.features(i, t)?);
            y.push(w[i].ln_1p());
        }
    }
    let x = Array2::from_shape_vec((keys.len(), N_FEATURES), rows).expect("row width is fixed");
    Ok((keys, x, y))
}

pub fn fit_volume_model(series: &SnapshotSeries, first_month: usize, cutoff: usize, config: &GbdtConfig) -> Result<VolumeModel> {
    let first_month = first_month.max(WINDOW);
    if cutoff > series.len() || cutoff <= first_month {
        return Err(FlowError::InsufficientData(format!(
            "volume training needs months {first_month}..{cutoff} within {} snapshots",
            series.len()
        )));
    }
    let totals = FlowTotals::new(series);
    let (_, x, y) = volume_rows(series, &totals, first_month..cutoff)?;
    let gbdt = gbdt_fit(&x, &y, config)?;
    Ok(VolumeModel {
        gbdt,
        config: config.clone(),
        first_month,
        cutoff,
        n_rows: y.len(),
    })
}

/// Raw-unit predictions `expm1(f(x_i(t)))`, clamped at zero, for every node.
pub fn predict_volumes(model: &VolumeModel, series: &SnapshotSeries, t: usize) -> Result<Vec<f64>> {
    let totals = FlowTotals::new(series);
    predict_volumes_with(model, &totals, t)
}

pub fn predict_volumes_with(model: &VolumeModel, totals: &FlowTotals, t: usize) -> Result<Vec<f64>> {
    let x = features::feature_matrix(totals, t)?;
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| gbdt_predict(&model.gbdt, x.row(i)).exp_m1().max(0.0))
        .collect())
}
