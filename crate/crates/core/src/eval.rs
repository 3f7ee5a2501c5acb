//! Metrics: ratio cross-entropy, volume errors, and link formation and
//! dissolution AUC.

use std::collections::HashSet;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dlf::model::PROB_EPS;
use crate::error::{FlowError, Result};
use crate::graph::{NodeId, RatioMatrix, SnapshotSeries};

/// Destinations summed over for each evaluated sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BceSupport {
    /// True destinations union predicted destinations.
    #[default]
    Sparse,
    /// Every node.
    Full,
}

impl FromStr for BceSupport {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "full" => Ok(Self::Full),
            other => Err(FlowError::Config(format!("unknown bce support {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BceResult {
    pub bce: f64,
    /// Mean loss of the true rows scored against themselves: the lowest
    /// `bce` any prediction can reach on these rows.
    pub entropy: f64,
    pub rows: usize,
    /// Senders active in the truth whose predicted row is empty.
    pub cold_start: usize,
}

fn entry_loss(r: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(r * p.ln() + (1.0 - r) * (1.0 - p).ln())
}

/// Cross-entropy of one row over the chosen support.
pub fn row_bce(truth: &[(NodeId, f64)], pred: &[(NodeId, f64)], n_nodes: usize, support: BceSupport) -> f64 {
    let (mut a, mut b) = (0, 0);
    let mut loss = 0.0;
    let mut visited = 0usize;
    while a < truth.len() || b < pred.len() {
        let jt = truth.get(a).map_or(usize::MAX, |e| e.0);
        let jp = pred.get(b).map_or(usize::MAX, |e| e.0);
        let (r, p) = if jt == jp {
            a += 1;
            b += 1;
            (truth[a - 1].1, pred[b - 1].1)
        } else if jt < jp {
            a += 1;
            (truth[a - 1].1, 0.0)
        } else {
            b += 1;
            (0.0, pred[b - 1].1)
        };
        loss += entry_loss(r, p);
        visited += 1;
    }
    if support == BceSupport::Full {
        loss += (n_nodes - visited) as f64 * entry_loss(0.0, 0.0);
    }
    loss
}

/// Mean row cross-entropy over senders with a non-empty true row. Senders
/// whose predicted row is empty are excluded and counted.
pub fn metric_bce(truth: &RatioMatrix, pred: &RatioMatrix, support: BceSupport) -> Result<BceResult> {
    if truth.n_nodes() != pred.n_nodes() {
        return Err(FlowError::DimensionMismatch(format!(
            "truth has {} rows, prediction {}",
            truth.n_nodes(),
            pred.n_nodes()
        )));
    }
    let mut total = 0.0;
    let mut entropy = 0.0;
    let mut rows = 0;
    let mut cold_start = 0;
    for (i, row) in truth.rows() {
        if row.is_empty() {
            continue;
        }
        if pred.is_row_empty(i) {
            cold_start += 1;
            continue;
        }
        total += row_bce(row, pred.row(i), truth.n_nodes(), support);
        entropy += row_bce(row, row, truth.n_nodes(), support);
        rows += 1;
    }
    if rows == 0 {
        return Err(FlowError::EmptyDataset(format!(
            "no evaluable sender rows ({cold_start} cold start)"
        )));
    }
    Ok(BceResult {
        bce: total / rows as f64,
        entropy: entropy / rows as f64,
        rows,
        cold_start,
    })
}

pub fn metric_mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeResult {
    pub mape: f64,
    pub zero_targets_excluded: usize,
}

pub fn metric_mape(y: &[f64], y_hat: &[f64]) -> Result<MapeResult> {
    check_pair(y, y_hat)?;
    let mut sum = 0.0;
    let mut n = 0;
    for (a, b) in y.iter().zip(y_hat) {
        if *a != 0.0 {
            sum += (a - b).abs() / a.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(FlowError::InsufficientData("MAPE undefined: every target is zero".into()));
    }
    Ok(MapeResult {
        mape: sum / n as f64,
        zero_targets_excluded: y.len() - n,
    })
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(FlowError::DimensionMismatch(format!("{} targets, {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(FlowError::EmptyDataset("no targets".into()));
    }
    Ok(())
}

/// Mann-Whitney AUC with tied scores counted as one half.
pub fn metric_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(FlowError::DimensionMismatch(format!("{} labels, {} scores", labels.len(), scores.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(FlowError::SingleClass("positive"));
    }
    if n_neg == 0 {
        return Err(FlowError::SingleClass("negative"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(FlowError::NonFinite("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        // ranks k+1..=end+1 share their average
        let mid = (k + end + 2) as f64 / 2.0;
        rank_sum += mid * order[k..=end].iter().filter(|&&r| labels[r]).count() as f64;
        k = end + 1;
    }
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Drops entries below `eps` and renormalizes the rest. Returns an empty
/// row when nothing survives.
pub fn threshold_renormalize(row: &[(NodeId, f64)], eps: f64) -> Vec<(NodeId, f64)> {
    if row.iter().all(|&(_, p)| p >= eps) {
        return row.to_vec();
    }
    let kept: Vec<(NodeId, f64)> = row.iter().copied().filter(|&(_, p)| p >= eps).collect();
    let sum: f64 = kept.iter().map(|&(_, p)| p).sum();
    kept.into_iter().map(|(j, p)| (j, p / sum)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholded {
    pub matrix: RatioMatrix,
    /// Rows that were non-empty before thresholding and empty after.
    pub emptied: Vec<NodeId>,
}

pub fn threshold_matrix(pred: &RatioMatrix, eps: f64) -> Thresholded {
    let mut matrix = RatioMatrix::empty(pred.n_nodes());
    let mut emptied = Vec::new();
    for (i, row) in pred.rows() {
        if row.is_empty() {
            continue;
        }
        let cut = threshold_renormalize(row, eps);
        if cut.is_empty() {
            emptied.push(i);
        } else {
            matrix.set_row(i, cut);
        }
    }
    Thresholded { matrix, emptied }
}

/// Labels and scores of one link prediction task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AucTask {
    pub months: Vec<usize>,
    pub pairs: Vec<(NodeId, NodeId)>,
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

impl AucTask {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    pub fn extend(&mut self, other: AucTask) {
        self.months.extend(other.months);
        self.pairs.extend(other.pairs);
        self.labels.extend(other.labels);
        self.scores.extend(other.scores);
    }

    pub fn auc(&self) -> Result<f64> {
        metric_auc(&self.labels, &self.scores)
    }

    /// Writes `t,src,dst,label,score`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "src", "dst", "label", "score"])?;
        for (((&t, &(i, j)), &l), &s) in self.months.iter().zip(&self.pairs).zip(&self.labels).zip(&self.scores) {
            w.write_record([t.to_string(), i.to_string(), j.to_string(), u8::from(l).to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn seen_pairs(series: &SnapshotSeries, t: usize) -> HashSet<(NodeId, NodeId)> {
    (0..t)
        .flat_map(|s| series.snapshot(s).edges().map(|(i, j, _)| (i, j)))
        .collect()
}

fn check_eval_month(series: &SnapshotSeries, pred: &RatioMatrix, t: usize) -> Result<()> {
    if t == 0 || t >= series.len() {
        return Err(FlowError::InvalidArgument(format!(
            "evaluation month {t} needs history and a realized snapshot (1..{})",
            series.len()
        )));
    }
    if pred.n_nodes() != series.n_nodes() {
        return Err(FlowError::DimensionMismatch(format!(
            "prediction has {} rows, series {} nodes",
            pred.n_nodes(),
            series.n_nodes()
        )));
    }
    Ok(())
}

/// Formation candidates: predicted pairs (after thresholding at `eps`) of
/// senders active at `t` that never occurred before `t`.
pub fn eval_formation(series: &SnapshotSeries, pred: &RatioMatrix, t: usize, eps: f64) -> Result<AucTask> {
    check_eval_month(series, pred, t)?;
    let seen = seen_pairs(series, t);
    let cut = threshold_matrix(pred, eps);
    let snap = series.snapshot(t);
    let w = &series.decomposition(t).w;
    let mut task = AucTask::default();
    for (i, row) in cut.matrix.rows() {
        if w[i] <= 0.0 {
            continue;
        }
        for &(j, p) in row {
            if seen.contains(&(i, j)) {
                continue;
            }
            task.months.push(t);
            task.pairs.push((i, j));
            task.labels.push(snap.contains(i, j));
            task.scores.push(p);
        }
    }
    if task.pairs.is_empty() {
        return Err(FlowError::EmptyDataset(format!(
            "no formation candidates at month {t}: {} predicted pairs, {} rows emptied at eps {eps}",
            cut.matrix.nnz(),
            cut.emptied.len()
        )));
    }
    Ok(task)
}

/// Dissolution candidates: previously seen pairs of senders active at `t`.
/// The label marks absence at `t`; the score is one minus the predicted ratio.
pub fn eval_dissolution(series: &SnapshotSeries, pred: &RatioMatrix, t: usize) -> Result<AucTask> {
    check_eval_month(series, pred, t)?;
    let mut seen: Vec<(NodeId, NodeId)> = seen_pairs(series, t).into_iter().collect();
    seen.sort_unstable();
    let snap = series.snapshot(t);
    let w = &series.decomposition(t).w;
    let mut task = AucTask::default();
    for (i, j) in seen {
        if w[i] <= 0.0 {
            continue;
        }
        task.months.push(t);
        task.pairs.push((i, j));
        task.labels.push(!snap.contains(i, j));
        task.scores.push(1.0 - pred.get(i, j));
    }
    if task.pairs.is_empty() {
        return Err(FlowError::EmptyDataset(format!(
            "no dissolution candidates at month {t}"
        )));
    }
    Ok(task)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub evaluated_rows: usize,
    pub cold_start_rows: usize,
    pub volume_targets: usize,
    pub mape_zero_targets: usize,
    pub formation_positives: usize,
    pub formation_negatives: usize,
    pub dissolution_positives: usize,
    pub dissolution_negatives: usize,
    pub thresholded_empty_rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bce: f64,
    /// Floor of `bce` reached by the true ratios themselves.
    pub bce_entropy: f64,
    pub mae: f64,
    pub mape: f64,
    pub auc_formation: Option<f64>,
    pub auc_dissolution: Option<f64>,
    pub threshold: f64,
    pub counts: EvalCounts,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{series_from_monthly, NodeUniverse};

    fn matrix(rows: &[Vec<(usize, f64)>]) -> RatioMatrix {
        let mut m = RatioMatrix::empty(rows.len());
        for (i, r) in rows.iter().enumerate() {
            m.set_row(i, r.clone());
        }
        m
    }

    #[test]
    fn bce_examples() {
        let one_hot = matrix(&[vec![(0, 1.0)], vec![]]);
        assert!(metric_bce(&one_hot, &one_hot, BceSupport::Sparse).unwrap().bce < 1e-10);
        let pred = matrix(&[vec![(0, 0.5), (1, 0.5)], vec![]]);
        let r = metric_bce(&one_hot, &pred, BceSupport::Sparse).unwrap();
        assert!((r.bce - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.rows, 1);
    }

    #[test]
    fn soft_truth_scores_its_own_entropy() {
        let truth = matrix(&[vec![(1, 0.25), (2, 0.75)], vec![], vec![]]);
        let r = metric_bce(&truth, &truth, BceSupport::Sparse).unwrap();
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((r.bce - (h(0.25) + h(0.75))).abs() < 1e-12);
        assert_eq!(r.bce, r.entropy);
        let off = matrix(&[vec![(1, 0.5), (2, 0.5)], vec![], vec![]]);
        assert!(metric_bce(&truth, &off, BceSupport::Sparse).unwrap().bce > r.entropy);
    }

    #[test]
    fn bce_counts_cold_start_and_averages() {
        let truth = matrix(&[vec![(0, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let pred = matrix(&[vec![(0, 0.5), (1, 0.5)], vec![(1, 0.5), (0, 0.5)], vec![]]);
        let r = metric_bce(&truth, &pred, BceSupport::Sparse).unwrap();
        assert_eq!(r.cold_start, 1);
        assert_eq!(r.rows, 2);
        assert!((r.bce - 2.0 * 2f64.ln()).abs() < 1e-12);
        let full = metric_bce(&truth, &pred, BceSupport::Full).unwrap();
        assert!(full.bce > r.bce && full.bce - r.bce < 1e-10);
        assert!(metric_bce(&matrix(&[vec![(0, 1.0)]]), &matrix(&[vec![]]), BceSupport::Sparse).is_err());
    }

    #[test]
    fn mae_mape_examples() {
        assert_eq!(metric_mae(&[10.0], &[8.0]).unwrap(), 2.0);
        assert_eq!(metric_mape(&[10.0], &[8.0]).unwrap().mape, 0.2);
        assert_eq!(metric_mae(&[0.0, 10.0], &[1.0, 8.0]).unwrap(), 1.5);
        let m = metric_mape(&[0.0, 10.0], &[1.0, 8.0]).unwrap();
        assert_eq!((m.mape, m.zero_targets_excluded), (0.2, 1));
        assert!(metric_mape(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(metric_auc(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(metric_auc(&[true, false, true], &[0.3; 3]).unwrap(), 0.5);
        match metric_auc(&[true, true], &[0.1, 0.2]) {
            Err(FlowError::SingleClass(c)) => assert_eq!(c, "negative"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn threshold_examples() {
        let got = threshold_renormalize(&[(0, 0.5), (1, 0.4995), (2, 0.0005)], 1e-3);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].1, 0.5 / 0.9995);
        assert!((got[0].1 - 0.50025).abs() < 1e-6);
        assert!((got[1].1 - 0.49975).abs() < 1e-6);
        let row = vec![(0, 0.3), (1, 0.7)];
        assert_eq!(threshold_renormalize(&row, 0.1), row);
        assert_eq!(threshold_renormalize(&[(3, 1.0)], 0.99), vec![(3, 1.0)]);
        let t = threshold_matrix(&matrix(&[vec![(0, 0.3), (1, 0.3), (2, 0.4)]]), 0.5);
        assert_eq!(t.emptied, vec![0]);
    }

    fn fixture() -> SnapshotSeries {
        // 0->1 persists, 0->2 seen at t=0 only, 0->3 forms at t=3
        let u = NodeUniverse::from_labels((0..5).map(|i| i.to_string()).collect()).unwrap();
        series_from_monthly(
            u,
            2020 * 12,
            &[
                vec![(0, 1, 1.0), (0, 2, 1.0)],
                vec![(0, 1, 1.0)],
                vec![(0, 1, 1.0)],
                vec![(0, 1, 1.0), (0, 3, 1.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn formation_labels() {
        let s = fixture();
        let pred = matrix(&[vec![(1, 0.4), (2, 0.1), (3, 0.3), (4, 0.2)], vec![], vec![], vec![], vec![]]);
        let task = eval_formation(&s, &pred, 3, 1e-4).unwrap();
        assert_eq!(task.pairs, vec![(0, 3), (0, 4)]);
        assert_eq!(task.labels, vec![true, false]);
        assert_eq!(task.auc().unwrap(), 1.0);
        let uniform = matrix(&[vec![(1, 0.25), (2, 0.25), (3, 0.25), (4, 0.25)], vec![], vec![], vec![], vec![]]);
        assert!(eval_formation(&s, &uniform, 3, 0.5).is_err());
    }

    #[test]
    fn dissolution_labels() {
        let s = fixture();
        let pred = matrix(&[vec![(1, 0.9), (2, 0.1)], vec![], vec![], vec![], vec![]]);
        let task = eval_dissolution(&s, &pred, 3).unwrap();
        assert_eq!(task.pairs, vec![(0, 1), (0, 2)]);
        assert_eq!(task.labels, vec![false, true]);
        assert_eq!(task.auc().unwrap(), 1.0);
        let f = eval_formation(&s, &pred, 3, 1e-4);
        assert!(f.is_err(), "no unseen pair predicted");
    }
}
