use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use clap::Args;
use flowcast_core::baselines::{edgebank_ratio_with, edgebank_tw_ratio, edgebank_tw_volume, edgebank_volume, RatioPrediction, VolumePrediction};
use flowcast_core::checkpoint::{load_dlf, load_volume, save_dlf, save_volume};
use flowcast_core::dlf::{train as train_dlf, EventIndex};
use flowcast_core::eval::{EvalCounts, EvalReport};
use flowcast_core::graph::{
    ratio_matrix_from_triples, read_node_values_csv, read_snapshot_csv, write_node_values_csv, write_ratio_csv, write_snapshot_csv, DropSummary, RatioMatrix, SnapshotSeries,
};
use flowcast_core::netstats::{aggregate_distributions, ccdf, fit_power_law, summarize, NetworkSummary, PowerLawFit};
use flowcast_core::pipeline::{
    embed, link_tasks, load_dataset, pooled_bce, predict_month, run_experiment, split, variant_config, volume_eval_nodes, volume_first_month, volume_summary, BceSummary,
    LinkSummary, NormalizationAudit, Split, TrainingSummary, VolumeSummary,
};
use flowcast_core::synth::{generate, SynthParams, SynthTruth};
use flowcast_core::volume::{fit_volume_model, predict_volumes_with, FlowTotals};
use flowcast_core::FlowError;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::run::{Artifact, Run};
use crate::{DataArgs, Method, Target, Variant};

fn load(run: &mut Run, data: &DataArgs) -> CliResult<(SnapshotSeries, DropSummary)> {
    let file = run.open(&data.edges)?;
    let ds = load_dataset(std::io::BufReader::new(file), &run.config.ingest)?;
    if ds.series.is_empty() {
        return Err(FlowError::EmptyDataset("no edges survived ingestion".into()).into());
    }
    Ok((ds.series, ds.drops))
}

fn artifact<T: Serialize>(run: &mut Run, name: &str, body: T) -> CliResult<()> {
    let config = run.echo();
    let a = Artifact {
        seed: run.config.seed,
        config: &config,
        body,
    };
    run.write_json(name, &a)
}

fn flush<W: Write>(mut w: W, name: &str) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(Path::new(name), e))
}

/// Parses `a..b` (half open) or `a,b,c`. Every month must lie in `1..len`.
fn parse_months(spec: Option<&str>, default: &Split, len: usize) -> CliResult<Vec<usize>> {
    let Some(spec) = spec else {
        return Ok(default.test.clone().collect());
    };
    let bad = || CliError::Usage(format!("bad --months {spec:?}; use a..b or a,b,c"));
    let months: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if months.is_empty() {
        return Err(bad());
    }
    if let Some(&t) = months.iter().find(|&&t| t == 0 || t >= len) {
        return Err(CliError::Usage(format!("month {t} outside 1..{len}")));
    }
    Ok(months)
}

#[derive(Serialize)]
struct IngestReport<'a> {
    n_nodes: usize,
    n_snapshots: usize,
    n_edges: usize,
    months: Vec<String>,
    drops: &'a DropSummary,
}

pub fn ingest(run: &mut Run, data: &DataArgs) -> CliResult<()> {
    let (series, drops) = load(run, data)?;
    let w = run.create("nodes.csv")?;
    series.universe().write_csv(w)?;
    let w = run.create("snapshots.csv")?;
    write_snapshot_csv(series.snapshots(), w)?;
    let ratios: Vec<(usize, &RatioMatrix)> = (0..series.len()).map(|t| (t, &series.decomposition(t).ratios)).collect();
    let w = run.create("observed_ratios.csv")?;
    write_ratio_csv(&ratios, w)?;
    let mut vols = Vec::new();
    for t in 0..series.len() {
        for (i, &w) in series.decomposition(t).w.iter().enumerate() {
            if w > 0.0 {
                vols.push((t, i, w));
            }
        }
    }
    let w = run.create("observed_volumes.csv")?;
    write_node_values_csv("volume", &vols, w)?;
    let report = IngestReport {
        n_nodes: series.n_nodes(),
        n_snapshots: series.len(),
        n_edges: series.snapshots().iter().map(|s| s.n_edges()).sum(),
        months: (0..series.len()).map(|t| series.month_label(t)).collect(),
        drops: &drops,
    };
    artifact(run, "ingest.json", report)
}

#[derive(Serialize)]
struct FitOutcome {
    fit: Option<PowerLawFit>,
    error: Option<String>,
}

#[derive(Serialize)]
struct StatsReport {
    summary: NetworkSummary,
    power_law: BTreeMap<String, FitOutcome>,
}

pub fn stats(run: &mut Run, data: &DataArgs) -> CliResult<()> {
    let (series, _) = load(run, data)?;
    let summary = summarize(&series)?;
    let dist = aggregate_distributions(&series);
    let mut power_law = BTreeMap::new();
    for (name, values) in [
        ("in_degree", &dist.in_degree),
        ("out_degree", &dist.out_degree),
        ("in_weight", &dist.in_weight),
        ("out_weight", &dist.out_weight),
    ] {
        let file = format!("ccdf_{name}.csv");
        let mut w = run.create(&file)?;
        writeln!(w, "x,ccdf").map_err(|e| CliError::io(Path::new(&file), e))?;
        if !values.is_empty() {
            for (x, p) in ccdf(values)? {
                writeln!(w, "{x},{p}").map_err(|e| CliError::io(Path::new(&file), e))?;
            }
        }
        flush(w, &file)?;
        let outcome = match fit_power_law(values) {
            Ok(fit) => FitOutcome { fit: Some(fit), error: None },
            Err(e) => FitOutcome {
                fit: None,
                error: Some(e.to_string()),
            },
        };
        power_law.insert(name.to_string(), outcome);
    }
    artifact(run, "stats.json", StatsReport { summary, power_law })
}

#[derive(Serialize)]
struct BaselineReport {
    method: &'static str,
    target: &'static str,
    months: Vec<usize>,
    cold_start: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bce: Option<BceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    volume: Option<VolumeSummary>,
}

pub fn baseline(run: &mut Run, data: &DataArgs, method: Method, target: Target, months: Option<&str>) -> CliResult<()> {
    let (series, _) = load(run, data)?;
    let sp = split(&series, &run.config)?;
    let months = parse_months(months, &sp, series.len())?;
    let method_name = match method {
        Method::Edgebank => "edgebank",
        Method::EdgebankTw => "edgebank-tw",
    };
    let mut report = BaselineReport {
        method: method_name,
        target: "ratio",
        months: months.clone(),
        cold_start: 0,
        bce: None,
        volume: None,
    };
    match target {
        Target::Ratio => {
            let preds = months
                .iter()
                .map(|&t| match method {
                    Method::Edgebank => edgebank_ratio_with(&series, t, run.config.baseline_averaging),
                    Method::EdgebankTw => edgebank_tw_ratio(&series, t),
                })
                .collect::<Result<Vec<RatioPrediction>, _>>()?;
            let pairs: Vec<(usize, &RatioMatrix)> = preds.iter().map(|p| (p.t, &p.matrix)).collect();
            let w = run.create("predictions.csv")?;
            write_ratio_csv(&pairs, w)?;
            report.cold_start = preds.iter().map(|p| p.cold_start.len()).sum();
            report.bce = Some(pooled_bce(&series, &pairs, run.config.eval.bce_support)?);
        }
        Target::Volume => {
            report.target = "volume";
            let totals = FlowTotals::new(&series);
            let (mut rows, mut y, mut y_hat) = (Vec::new(), Vec::new(), Vec::new());
            for &t in &months {
                let p: VolumePrediction = match method {
                    Method::Edgebank => edgebank_volume(&series, t)?,
                    Method::EdgebankTw => edgebank_tw_volume(&series, t)?,
                };
                let w = &series.decomposition(t).w;
                for i in volume_eval_nodes(&totals, t) {
                    if p.cold_start.binary_search(&i).is_ok() {
                        report.cold_start += 1;
                        continue;
                    }
                    rows.push((t, i, p.values[i]));
                    y.push(w[i]);
                    y_hat.push(p.values[i]);
                }
            }
            let w = run.create("predictions.csv")?;
            write_node_values_csv("volume", &rows, w)?;
            report.volume = Some(volume_summary(&y, &y_hat, report.cold_start)?);
        }
    }
    artifact(run, "baseline.json", report)
}

#[derive(Serialize)]
struct TrainReport {
    variant: &'static str,
    split: Split,
    ratio_model: TrainingSummary,
    volume_rows: usize,
    volume_train_mse: f64,
    embedding_isolated: usize,
}

pub fn train(run: &mut Run, data: &DataArgs, variant: Variant) -> CliResult<()> {
    let (series, _) = load(run, data)?;
    let config = run.config.clone();
    let sp = split(&series, &config)?;
    let embedding = embed(&series, &config)?;
    let (name, depth) = match variant {
        Variant::Hier => ("hier", config.dlf.tree_depth.max(2)),
        Variant::Flat => ("flat", 1),
    };
    let model = train_dlf(&series, &embedding, &variant_config(&config, depth), sp.train_end)?;
    let labels = series.universe().labels().to_vec();
    let pairs = run.echo();
    let w = run.create("dlf.json")?;
    save_dlf(&model, &pairs, &labels, w)?;

    let volume = fit_volume_model(&series, volume_first_month(&config), sp.train_end, &config.volume)?;
    let w = run.create("volume.json")?;
    save_volume(&volume, &pairs, &labels, w)?;

    let w = run.create("embeddings.csv")?;
    embedding.write_csv(w)?;

    let report = TrainReport {
        variant: name,
        split: sp,
        ratio_model: TrainingSummary::of(&model),
        volume_rows: volume.n_rows,
        volume_train_mse: volume.gbdt.train_mse.last().copied().unwrap_or(f64::NAN),
        embedding_isolated: embedding.isolated.len(),
    };
    artifact(run, "train.json", report)
}

#[derive(Serialize)]
struct PredictReport {
    months: Vec<usize>,
    raw_cold_start: usize,
    mixed_cold_start: usize,
    volume_rows: usize,
    normalization: NormalizationAudit,
}

pub fn predict(run: &mut Run, data: &DataArgs, model_path: &Path, volume_path: Option<&Path>, months: Option<&str>) -> CliResult<()> {
    let (series, _) = load(run, data)?;
    let sp = split(&series, &run.config)?;
    let months = parse_months(months, &sp, series.len())?;
    let file = run.open(model_path)?;
    let (model, meta) = load_dlf(std::io::BufReader::new(file))?;
    if meta.labels != series.universe().labels() {
        return Err(FlowError::EmbeddingMismatch(format!(
            "checkpoint has {} node labels, data has {}; ingest settings must match training",
            meta.labels.len(),
            series.n_nodes()
        ))
        .into());
    }
    let index = EventIndex::new(&series, model.config.layout);
    let mut audit = NormalizationAudit::new();
    let mut preds = Vec::new();
    for &t in &months {
        let mp = predict_month(&model, &series, &index, t, &run.config)?;
        audit.check(&mp.mixed.matrix);
        audit.check(&mp.raw.matrix);
        preds.push(mp);
    }
    let mixed: Vec<(usize, &RatioMatrix)> = preds.iter().map(|m| (m.t, &m.mixed.matrix)).collect();
    let raw: Vec<(usize, &RatioMatrix)> = preds.iter().map(|m| (m.t, &m.raw.matrix)).collect();
    let w = run.create("ratios.csv")?;
    write_ratio_csv(&mixed, w)?;
    let w = run.create("raw_ratios.csv")?;
    write_ratio_csv(&raw, w)?;

    let mut volume_rows = 0;
    if let Some(path) = volume_path {
        let file = run.open(path)?;
        let (vm, vmeta) = load_volume(std::io::BufReader::new(file))?;
        if vmeta.labels != series.universe().labels() {
            return Err(FlowError::EmbeddingMismatch("volume checkpoint labels differ from the data".into()).into());
        }
        let totals = FlowTotals::new(&series);
        let (mut vols, mut flows) = (Vec::new(), Vec::new());
        for (mp, &t) in preds.iter().zip(&months) {
            let v = predict_volumes_with(&vm, &totals, t)?;
            for i in volume_eval_nodes(&totals, t) {
                vols.push((t, i, v[i]));
                for &(j, r) in mp.mixed.matrix.row(i) {
                    flows.push((t, i, j, v[i] * r));
                }
            }
        }
        volume_rows = vols.len();
        let w = run.create("volumes.csv")?;
        write_node_values_csv("volume", &vols, w)?;
        let mut w = run.create("flows.csv")?;
        writeln!(w, "t,src,dst,amount").map_err(|e| CliError::io(Path::new("flows.csv"), e))?;
        for (t, i, j, f) in flows {
            writeln!(w, "{t},{i},{j},{f}").map_err(|e| CliError::io(Path::new("flows.csv"), e))?;
        }
        flush(w, "flows.csv")?;
    }
    let report = PredictReport {
        months,
        raw_cold_start: preds.iter().map(|m| m.raw.cold_start.len()).sum(),
        mixed_cold_start: preds.iter().map(|m| m.mixed.cold_start.len()).sum(),
        volume_rows,
        normalization: audit,
    };
    artifact(run, "predict.json", report)
}

#[derive(Serialize)]
struct EvalOutput {
    months: Vec<usize>,
    report: EvalReport,
    ratio_bce: BceSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    volume: Option<VolumeSummary>,
    links: LinkSummary,
    normalization: NormalizationAudit,
}

pub fn evaluate(run: &mut Run, data: &DataArgs, ratios: &Path, volumes: Option<&Path>) -> CliResult<()> {
    let (series, _) = load(run, data)?;
    let n = series.n_nodes();
    let file = run.open(ratios)?;
    let grouped = read_snapshot_csv(std::io::BufReader::new(file), n)?;
    if grouped.is_empty() {
        return Err(FlowError::EmptyDataset("ratio file has no rows".into()).into());
    }
    if let Some(&t) = grouped.keys().find(|&&t| t >= series.len()) {
        return Err(CliError::Usage(format!("ratio file predicts month {t}, data has {}", series.len())));
    }
    let matrices: Vec<(usize, RatioMatrix)> = grouped.iter().map(|(&t, rows)| (t, ratio_matrix_from_triples(n, rows))).collect();
    let pairs: Vec<(usize, &RatioMatrix)> = matrices.iter().map(|(t, m)| (*t, m)).collect();
    let mut audit = NormalizationAudit::new();
    for (_, m) in &pairs {
        audit.check(m);
    }
    let bce = pooled_bce(&series, &pairs, run.config.eval.bce_support)?;
    let tasks = link_tasks(&series, &pairs, run.config.eval.threshold, &mut audit);
    let w = run.create("formation.csv")?;
    tasks.formation.write_csv(w)?;
    let w = run.create("dissolution.csv")?;
    tasks.dissolution.write_csv(w)?;

    let volume = match volumes {
        None => None,
        Some(path) => {
            let file = run.open(path)?;
            let vols = read_node_values_csv(std::io::BufReader::new(file), n)?;
            let (mut y, mut y_hat) = (Vec::new(), Vec::new());
            for (&t, rows) in &vols {
                if t >= series.len() {
                    return Err(CliError::Usage(format!("volume file predicts month {t}, data has {}", series.len())));
                }
                let w = &series.decomposition(t).w;
                for &(i, v) in rows {
                    y.push(w[i]);
                    y_hat.push(v);
                }
            }
            Some(volume_summary(&y, &y_hat, 0)?)
        }
    };
    let links = tasks.summary;
    let report = EvalReport {
        bce: bce.bce,
        bce_entropy: bce.entropy,
        mae: volume.as_ref().map_or(0.0, |v| v.mae_raw),
        mape: volume.as_ref().map_or(0.0, |v| v.mape_raw),
        auc_formation: links.auc_formation,
        auc_dissolution: links.auc_dissolution,
        threshold: links.threshold,
        counts: EvalCounts {
            evaluated_rows: bce.rows,
            cold_start_rows: bce.cold_start,
            volume_targets: volume.as_ref().map_or(0, |v| v.targets),
            mape_zero_targets: volume.as_ref().map_or(0, |v| v.zero_targets_excluded),
            formation_positives: links.formation_positives,
            formation_negatives: links.formation_negatives,
            dissolution_positives: links.dissolution_positives,
            dissolution_negatives: links.dissolution_negatives,
            thresholded_empty_rows: links.thresholded_empty_rows,
        },
    };
    let out = EvalOutput {
        months: matrices.iter().map(|(t, _)| *t).collect(),
        report,
        ratio_bce: bce,
        volume,
        links,
        normalization: audit,
    };
    artifact(run, "eval.json", out)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Start from the planted two-regime fixture instead of the defaults.
    #[arg(long)]
    pub two_regime: bool,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub months: Option<usize>,
    #[arg(long)]
    pub core_size: Option<usize>,
    #[arg(long)]
    pub churn: Option<f64>,
    /// Searches the churn probability to hit this edge persistence.
    #[arg(long)]
    pub persistence: Option<f64>,
    /// Monthly probability of switching between two cores per sender.
    #[arg(long)]
    pub regime_switch: Option<f64>,
    #[arg(long)]
    pub activity: Option<f64>,
    /// Exponent of the Zipf popularity that churn destinations follow.
    #[arg(long)]
    pub zipf: Option<f64>,
    /// Draw core recipients by popularity instead of uniformly.
    #[arg(long)]
    pub preferential_cores: bool,
    /// First month as `YYYY-MM`.
    #[arg(long)]
    pub start: Option<String>,
}

impl SynthArgs {
    pub fn params(&self) -> SynthParams {
        let mut p = if self.two_regime { SynthParams::two_regime() } else { SynthParams::default() };
        macro_rules! take {
            ($($arg:ident => $field:ident),*) => {$(
                if let Some(v) = self.$arg.clone() {
                    p.$field = v;
                }
            )*};
        }
        take!(nodes => n_nodes, months => n_months, core_size => core_size, churn => churn_prob,
              activity => activity, zipf => zipf_exponent, start => start);
        if self.persistence.is_some() {
            p.target_persistence = self.persistence;
        }
        if self.regime_switch.is_some() {
            p.regime_switch = self.regime_switch;
        }
        p.preferential_cores |= self.preferential_cores;
        p
    }
}

pub fn synth(run: &mut Run, a: &SynthArgs) -> CliResult<()> {
    let out = generate(&a.params(), run.config.seed)?;
    let w = run.create("edges.csv")?;
    out.write_csv(w)?;
    #[derive(Serialize)]
    struct TruthArtifact<'a> {
        truth: &'a SynthTruth,
    }
    artifact(run, "truth.json", TruthArtifact { truth: &out.truth })
}

pub fn experiment(run: &mut Run, data: &DataArgs) -> CliResult<()> {
    let (series, _) = load(run, data)?;
    let exp = run_experiment(&series, &run.config)?;
    if let Some(tasks) = exp.link_tasks.get("dlf_hier") {
        let w = run.create("formation.csv")?;
        tasks.formation.write_csv(w)?;
        let w = run.create("dissolution.csv")?;
        tasks.dissolution.write_csv(w)?;
    }
    #[derive(Serialize)]
    struct Report<'a> {
        report: &'a flowcast_core::pipeline::ExperimentReport,
    }
    artifact(run, "experiment.json", Report { report: &exp.report })
}
