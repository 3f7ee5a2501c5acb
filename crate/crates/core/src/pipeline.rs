//! End-to-end experiment: chronological split, baselines, ratio models,
//! volume model, and every metric.

use std::collections::BTreeMap;
use std::io::Read;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::baselines::{edgebank_ratio_with, edgebank_tw_ratio, edgebank_tw_volume, edgebank_volume, RatioPrediction};
use crate::config::RunConfig;
use crate::dlf::{mix_with_history, predict_ratios, train, EventIndex, MixedRatios, TrainConfig, TrainedModel};
use crate::embeddings::{structural_embed, warmup_graph, StructuralEmbedding};
use crate::error::{FlowError, Result};
use crate::eval::{eval_dissolution, eval_formation, metric_bce, metric_mae, metric_mape, row_bce, threshold_matrix, AucTask, BceSupport};
use crate::graph::{build_snapshots, ingest_edges, DropSummary, IngestConfig, NodeId, RatioMatrix, SnapshotSeries};
use crate::volume::{fit_volume_model, predict_volumes_with, FlowTotals, VolumeModel, WINDOW};

pub struct Dataset {
    pub series: SnapshotSeries,
    pub drops: DropSummary,
}

pub fn load_dataset<R: Read>(reader: R, ingest: &IngestConfig) -> Result<Dataset> {
    let ingested = ingest_edges(reader, ingest)?;
    let series = build_snapshots(&ingested.edges, ingested.universe)?;
    Ok(Dataset {
        series,
        drops: ingested.drops,
    })
}

pub fn embed(series: &SnapshotSeries, config: &RunConfig) -> Result<StructuralEmbedding> {
    structural_embed(&warmup_graph(series, config.embedding.warmup_months)?, &config.embedding)
}

/// Training months are `0..train_end`; test months are `test`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub test: Range<usize>,
}

pub fn split(series: &SnapshotSeries, config: &RunConfig) -> Result<Split> {
    let len = series.len();
    let train_end = config.eval.test_start(len);
    let warmup = config.embedding.warmup_months;
    if train_end < warmup + 2 || train_end <= config.dlf.first_month {
        return Err(FlowError::InsufficientData(format!(
            "{len} snapshots leave {train_end} training months; need at least {} (warmup {warmup} + 2)",
            warmup + 2
        )));
    }
    Ok(Split {
        train_end,
        test: train_end..len,
    })
}

/// History average, raw model rows, and their mixture for one month.
#[derive(Debug, Clone)]
pub struct MonthPrediction {
    pub t: usize,
    pub history: RatioPrediction,
    pub raw: RatioPrediction,
    pub mixed: MixedRatios,
}

pub fn predict_month(model: &TrainedModel, series: &SnapshotSeries, index: &EventIndex, t: usize, config: &RunConfig) -> Result<MonthPrediction> {
    let history = edgebank_ratio_with(series, t, config.baseline_averaging)?;
    let raw = predict_ratios(model, series, index, t)?;
    let mixed = mix_with_history(&raw.matrix, &history.matrix, model.config.mix)?;
    Ok(MonthPrediction { t, history, raw, mixed })
}

/// Checks that every non-empty row sums to one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationAudit {
    pub rows_checked: usize,
    pub empty_rows: usize,
    pub violations: usize,
    pub max_abs_error: f64,
    pub min_entry: f64,
}

pub const ROW_SUM_TOL: f64 = 1e-9;

impl NormalizationAudit {
    pub fn new() -> Self {
        Self {
            min_entry: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn check(&mut self, m: &RatioMatrix) {
        for (_, row) in m.rows() {
            if row.is_empty() {
                self.empty_rows += 1;
                continue;
            }
            self.rows_checked += 1;
            let err = (row.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs();
            self.max_abs_error = self.max_abs_error.max(err);
            for &(_, p) in row {
                self.min_entry = self.min_entry.min(p);
            }
            if err > ROW_SUM_TOL || row.iter().any(|&(_, p)| p < 0.0 || !p.is_finite()) {
                self.violations += 1;
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.rows_checked > 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BceSummary {
    pub bce: f64,
    pub entropy: f64,
    pub rows: usize,
    pub cold_start: usize,
}

/// Pools rows over months: total row loss over total evaluated rows.
pub fn pooled_bce(series: &SnapshotSeries, preds: &[(usize, &RatioMatrix)], support: BceSupport) -> Result<BceSummary> {
    let mut total = 0.0;
    let mut entropy = 0.0;
    let mut rows = 0;
    let mut cold = 0;
    for &(t, pred) in preds {
        match metric_bce(&series.decomposition(t).ratios, pred, support) {
            Ok(r) => {
                total += r.bce * r.rows as f64;
                entropy += r.entropy * r.rows as f64;
                rows += r.rows;
                cold += r.cold_start;
            }
            Err(FlowError::EmptyDataset(_)) => {
                cold += series.decomposition(t).ratios.rows().filter(|(_, r)| !r.is_empty()).count();
            }
            Err(e) => return Err(e),
        }
    }
    if rows == 0 {
        return Err(FlowError::EmptyDataset("no evaluable rows in any test month".into()));
    }
    Ok(BceSummary {
        bce: total / rows as f64,
        entropy: entropy / rows as f64,
        rows,
        cold_start: cold,
    })
}

/// Every sender gets the uniform distribution over all other nodes.
pub fn uniform_prediction(n: usize) -> RatioMatrix {
    let mut m = RatioMatrix::empty(n);
    let p = 1.0 / (n - 1) as f64;
    for i in 0..n {
        m.set_row(i, (0..n).filter(|&j| j != i).map(|j| (j, p)).collect());
    }
    m
}

/// Closed-form cross-entropy of the uniform row, used as a sanity check.
pub fn uniform_row_bce(truth: &[(NodeId, f64)], n: usize) -> f64 {
    let p = 1.0 / (n - 1) as f64;
    let pred: Vec<(NodeId, f64)> = (0..n).map(|j| (j, p)).collect();
    row_bce(truth, &pred, n, BceSupport::Sparse)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VolumeSummary {
    pub mae_log: f64,
    pub mape_log: f64,
    pub mae_raw: f64,
    pub mape_raw: f64,
    pub targets: usize,
    pub zero_targets_excluded: usize,
    pub cold_start: usize,
}

pub fn volume_summary(y: &[f64], y_hat: &[f64], cold_start: usize) -> Result<VolumeSummary> {
    let ly: Vec<f64> = y.iter().map(|v| v.ln_1p()).collect();
    let lh: Vec<f64> = y_hat.iter().map(|v| v.ln_1p()).collect();
    let mape_raw = metric_mape(y, y_hat)?;
    Ok(VolumeSummary {
        mae_log: metric_mae(&ly, &lh)?,
        mape_log: metric_mape(&ly, &lh)?.mape,
        mae_raw: metric_mae(y, y_hat)?,
        mape_raw: mape_raw.mape,
        targets: y.len(),
        zero_targets_excluded: mape_raw.zero_targets_excluded,
        cold_start,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub auc_formation: Option<f64>,
    pub auc_dissolution: Option<f64>,
    pub formation_positives: usize,
    pub formation_negatives: usize,
    pub dissolution_positives: usize,
    pub dissolution_negatives: usize,
    /// Months skipped because they had no candidates.
    pub months_without_candidates: usize,
    pub thresholded_empty_rows: usize,
    pub threshold: f64,
}

pub struct LinkTasks {
    pub formation: AucTask,
    pub dissolution: AucTask,
    pub summary: LinkSummary,
}

pub fn link_tasks(series: &SnapshotSeries, preds: &[(usize, &RatioMatrix)], threshold: f64, audit: &mut NormalizationAudit) -> LinkTasks {
    let mut formation = AucTask::default();
    let mut dissolution = AucTask::default();
    let mut summary = LinkSummary {
        threshold,
        ..LinkSummary::default()
    };
    for &(t, pred) in preds {
        let cut = threshold_matrix(pred, threshold);
        audit.check(&cut.matrix);
        summary.thresholded_empty_rows += cut.emptied.len();
        match eval_formation(series, pred, t, threshold) {
            Ok(task) => formation.extend(task),
            Err(_) => summary.months_without_candidates += 1,
        }
        match eval_dissolution(series, &cut.matrix, t) {
            Ok(task) => dissolution.extend(task),
            Err(_) => summary.months_without_candidates += 1,
        }
    }
    summary.formation_positives = formation.positives();
    summary.formation_negatives = formation.negatives();
    summary.dissolution_positives = dissolution.positives();
    summary.dissolution_negatives = dissolution.negatives();
    summary.auc_formation = formation.auc().ok();
    summary.auc_dissolution = dissolution.auc().ok();
    LinkTasks {
        formation,
        dissolution,
        summary,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub tree_depth: usize,
    pub tree_internal_nodes: usize,
}

impl TrainingSummary {
    pub fn of(m: &TrainedModel) -> Self {
        Self {
            initial_loss: m.initial_loss,
            final_loss: m.trace.last().copied().unwrap_or(m.initial_loss),
            epochs: m.trace.len(),
            tree_depth: m.tree.depth,
            tree_internal_nodes: m.tree.n_internal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_snapshots: usize,
    pub n_nodes: usize,
    pub train_end: usize,
    pub test_months: Vec<usize>,
    pub ratio_bce: BTreeMap<String, BceSummary>,
    pub volume: BTreeMap<String, VolumeSummary>,
    pub links: BTreeMap<String, LinkSummary>,
    pub training: BTreeMap<String, TrainingSummary>,
    pub normalization: NormalizationAudit,
}

/// Everything the experiment produced, for callers that persist artifacts.
pub struct Experiment {
    pub report: ExperimentReport,
    pub models: BTreeMap<String, TrainedModel>,
    pub volume_model: VolumeModel,
    pub predictions: BTreeMap<String, Vec<MonthPrediction>>,
    pub volume_predictions: Vec<(usize, Vec<f64>)>,
    pub link_tasks: BTreeMap<String, LinkTasks>,
}

fn pairs(v: &[RatioPrediction]) -> Vec<(usize, &RatioMatrix)> {
    v.iter().map(|p| (p.t, &p.matrix)).collect()
}

pub fn variant_config(config: &RunConfig, depth: usize) -> TrainConfig {
    TrainConfig {
        tree_depth: depth,
        seed: config.seed,
        ..config.dlf.clone()
    }
}

pub fn volume_first_month(config: &RunConfig) -> usize {
    (config.embedding.warmup_months + WINDOW).max(WINDOW)
}

/// Volume rows evaluated at month `t`: nodes with activity in `t-3..=t`.
pub fn volume_eval_nodes(totals: &FlowTotals, t: usize) -> Vec<NodeId> {
    (0..totals.sent[0].len()).filter(|&i| totals.is_active_around(i, t)).collect()
}

pub fn run_experiment(series: &SnapshotSeries, config: &RunConfig) -> Result<Experiment> {
    let config = config.clone().finalize()?;
    let sp = split(series, &config)?;
    let n = series.n_nodes();
    let support = config.eval.bce_support;
    let mut audit = NormalizationAudit::new();

    // baselines
    let mut eb = Vec::new();
    let mut eb_tw = Vec::new();
    for t in sp.test.clone() {
        let a = edgebank_ratio_with(series, t, config.baseline_averaging)?;
        let b = edgebank_tw_ratio(series, t)?;
        audit.check(&a.matrix);
        audit.check(&b.matrix);
        eb.push(a);
        eb_tw.push(b);
    }
    let uniform = uniform_prediction(n);
    audit.check(&uniform);
    let mut ratio_bce = BTreeMap::new();
    ratio_bce.insert("edgebank".to_string(), pooled_bce(series, &pairs(&eb), support)?);
    ratio_bce.insert("edgebank_tw".to_string(), pooled_bce(series, &pairs(&eb_tw), support)?);
    let uni: Vec<(usize, &RatioMatrix)> = sp.test.clone().map(|t| (t, &uniform)).collect();
    ratio_bce.insert("uniform".to_string(), pooled_bce(series, &uni, support)?);

    // ratio models
    let embedding = embed(series, &config)?;
    let index = EventIndex::new(series, config.dlf.layout);
    let mut models = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    let mut links = BTreeMap::new();
    let mut link_tasks_all = BTreeMap::new();
    let mut training = BTreeMap::new();
    for (name, depth) in [("dlf_flat", 1), ("dlf_hier", config.dlf.tree_depth.max(2))] {
        let model = train(series, &embedding, &variant_config(&config, depth), sp.train_end)?;
        let mut months = Vec::new();
        for t in sp.test.clone() {
            let mp = predict_month(&model, series, &index, t, &config)?;
            audit.check(&mp.raw.matrix);
            audit.check(&mp.mixed.matrix);
            months.push(mp);
        }
        let mixed: Vec<(usize, &RatioMatrix)> = months.iter().map(|m| (m.t, &m.mixed.matrix)).collect();
        let raw: Vec<(usize, &RatioMatrix)> = months.iter().map(|m| (m.t, &m.raw.matrix)).collect();
        ratio_bce.insert(name.to_string(), pooled_bce(series, &mixed, support)?);
        ratio_bce.insert(format!("{name}_raw"), pooled_bce(series, &raw, support)?);
        let tasks = link_tasks(series, &mixed, config.eval.threshold, &mut audit);
        links.insert(name.to_string(), tasks.summary.clone());
        link_tasks_all.insert(name.to_string(), tasks);
        training.insert(name.to_string(), TrainingSummary::of(&model));
        models.insert(name.to_string(), model);
        predictions.insert(name.to_string(), months);
    }

    // volumes
    let volume_model = fit_volume_model(series, volume_first_month(&config), sp.train_end, &config.volume)?;
    let totals = FlowTotals::new(series);
    let mut volume_predictions = Vec::new();
    let (mut y, mut gb, mut ebv, mut twv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut eb_y, mut tw_y) = (Vec::new(), Vec::new());
    let (mut eb_cold, mut tw_cold) = (0, 0);
    for t in sp.test.clone() {
        let pred = predict_volumes_with(&volume_model, &totals, t)?;
        let hist = edgebank_volume(series, t)?;
        let last = edgebank_tw_volume(series, t)?;
        let w = &series.decomposition(t).w;
        for i in volume_eval_nodes(&totals, t) {
            y.push(w[i]);
            gb.push(pred[i]);
            if hist.cold_start.binary_search(&i).is_ok() {
                eb_cold += 1;
            } else {
                eb_y.push(w[i]);
                ebv.push(hist.values[i]);
            }
            if last.cold_start.binary_search(&i).is_ok() {
                tw_cold += 1;
            } else {
                tw_y.push(w[i]);
                twv.push(last.values[i]);
            }
        }
        volume_predictions.push((t, pred));
    }
    let mut volume = BTreeMap::new();
    volume.insert("gbdt".to_string(), volume_summary(&y, &gb, 0)?);
    volume.insert("edgebank".to_string(), volume_summary(&eb_y, &ebv, eb_cold)?);
    volume.insert("edgebank_tw".to_string(), volume_summary(&tw_y, &twv, tw_cold)?);

    let report = ExperimentReport {
        n_snapshots: series.len(),
        n_nodes: n,
        train_end: sp.train_end,
        test_months: sp.test.collect(),
        ratio_bce,
        volume,
        links,
        training,
        normalization: audit,
    };
    Ok(Experiment {
        report,
        models,
        volume_model,
        predictions,
        volume_predictions,
        link_tasks: link_tasks_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row_matches_closed_form() {
        let n = 10;
        let u = uniform_prediction(n);
        let truth = vec![(1, 0.5), (2, 0.5)];
        let direct = row_bce(&truth, u.row(0), n, BceSupport::Sparse);
        let p: f64 = 1.0 / 9.0;
        let want = -(2.0 * 0.5 * p.ln()) - 2.0 * 0.5 * (1.0 - p).ln() - 7.0 * (1.0 - p).ln();
        assert!((direct - want).abs() < 1e-12);
        // including the self entry adds one more absent term
        assert!(uniform_row_bce(&truth, n) > direct);
    }

    #[test]
    fn audit_flags_bad_rows() {
        let mut m = RatioMatrix::empty(3);
        m.set_row(0, vec![(1, 0.5), (2, 0.5)]);
        m.set_row(1, vec![(0, 0.7)]);
        let mut a = NormalizationAudit::new();
        a.check(&m);
        assert_eq!((a.rows_checked, a.empty_rows, a.violations), (2, 1, 1));
        assert!(!a.passed());
    }
}
