//! Temporal transfer data: ingestion, monthly snapshots, and the
//! volume/ratio decomposition of each snapshot.
//!
//! A snapshot `A(t)` is the sum of all transfers between each ordered pair
//! during one UTC calendar month. Its decomposition splits every row into the
//! sender's total outflow `w_i` and the row-stochastic remittance ratios
//! `R_ij = A_ij / w_i`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

pub type NodeId = usize;

/// Average Gregorian month length in seconds; used to express elapsed time in months.
pub const SECONDS_PER_MONTH: f64 = 2_629_746.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub src: NodeId,
    pub dst: NodeId,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub amount: f64,
}

/// Bijection between dense node ids and the original labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeUniverse {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl NodeUniverse {
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (id, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), id).is_some() {
                return Err(FlowError::InvalidArgument(format!(
                    "duplicate node label {label:?}"
                )));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn id(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Writes the `id,label` CSV export.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "label"])?;
        for (id, label) in self.labels.iter().enumerate() {
            w.write_record([id.to_string().as_str(), label])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let id: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err(line, "bad node id"))?;
            let label = rec.get(1).ok_or_else(|| parse_err(line, "missing label"))?;
            rows.push((id, label.to_string()));
        }
        rows.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in rows.iter().enumerate() {
            if *id != expected {
                return Err(FlowError::InvalidArgument(format!(
                    "node ids are not dense: expected {expected}, found {id}"
                )));
            }
        }
        Self::from_labels(rows.into_iter().map(|(_, l)| l).collect())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> FlowError {
    FlowError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Minimum number of transactions (sent or received) a node needs to be kept.
    pub min_activity: usize,
    /// Inclusive lower bound on timestamps.
    pub date_from: Option<i64>,
    /// Exclusive upper bound on timestamps.
    pub date_to: Option<i64>,
    pub allow_self_loops: bool,
}

/// Accounting of rows that did not make it into the edge list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// CSV line numbers of rows with a zero or negative amount.
    pub non_positive_amount: Vec<usize>,
    /// CSV line numbers of self-loop rows (when self-loops are disabled).
    pub self_loops: Vec<usize>,
    pub out_of_range: usize,
    pub below_activity: usize,
    pub nodes_below_activity: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    /// Sorted by timestamp; ties keep file order.
    pub edges: Vec<TemporalEdge>,
    pub universe: NodeUniverse,
    pub drops: DropSummary,
}

/// Parses either integer epoch seconds or a `YYYY-MM-DD` date (midnight UTC).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok()?;
    Some(date.and_hms_opt(0, 0, 0)?.and_utc().timestamp())
}

/// Reads the `src,dst,timestamp,amount` edge CSV, applies the date-range and
/// activity filters, and renumbers nodes densely in order of first
/// appearance.
pub fn ingest_edges<R: Read>(source: R, config: &IngestConfig) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let expected = ["src", "dst", "timestamp", "amount"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(
            1,
            format!("expected header `src,dst,timestamp,amount`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut drops = DropSummary::default();
    let mut rows: Vec<(String, String, i64, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        drops.rows_read += 1;
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let (src, dst) = (&rec[0], &rec[1]);
        if src.is_empty() || dst.is_empty() {
            return Err(parse_err(line, "empty node label"));
        }
        let timestamp = parse_timestamp(&rec[2])
            .ok_or_else(|| parse_err(line, format!("bad timestamp {:?}", &rec[2])))?;
        let amount: f64 = rec[3]
            .parse()
            .map_err(|_| parse_err(line, format!("bad amount {:?}", &rec[3])))?;
        if !amount.is_finite() {
            return Err(parse_err(line, "amount must be finite"));
        }
        if amount <= 0.0 {
            drops.non_positive_amount.push(line);
            continue;
        }
        if src == dst && !config.allow_self_loops {
            drops.self_loops.push(line);
            continue;
        }
        if config.date_from.is_some_and(|from| timestamp < from)
            || config.date_to.is_some_and(|to| timestamp >= to)
        {
            drops.out_of_range += 1;
            continue;
        }
        rows.push((src.to_string(), dst.to_string(), timestamp, amount));
    }

    let mut activity: HashMap<&str, usize> = HashMap::new();
    for (src, dst, _, _) in &rows {
        *activity.entry(src.as_str()).or_default() += 1;
        if src != dst {
            *activity.entry(dst.as_str()).or_default() += 1;
        }
    }
    drops.nodes_below_activity = activity
        .values()
        .filter(|&&c| c < config.min_activity)
        .count();
    let keep: Vec<bool> = rows
        .iter()
        .map(|(s, d, _, _)| {
            activity[s.as_str()] >= config.min_activity && activity[d.as_str()] >= config.min_activity
        })
        .collect();
    let mut kept: Vec<(String, String, i64, f64)> = rows
        .into_iter()
        .zip(keep)
        .filter_map(|(row, k)| k.then_some(row))
        .collect();
    drops.below_activity = drops.rows_read
        - drops.non_positive_amount.len()
        - drops.self_loops.len()
        - drops.out_of_range
        - kept.len();
    if kept.is_empty() {
        return Err(FlowError::EmptyDataset(format!(
            "no edges left after filtering {} rows",
            drops.rows_read
        )));
    }
    kept.sort_by_key(|row| row.2);

    let mut labels = Vec::new();
    let mut ids: HashMap<String, NodeId> = HashMap::new();
    let mut intern = |label: String| -> NodeId {
        *ids.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            labels.len() - 1
        })
    };
    let edges: Vec<TemporalEdge> = kept
        .into_iter()
        .map(|(src, dst, timestamp, amount)| TemporalEdge {
            src: intern(src),
            dst: intern(dst),
            timestamp,
            amount,
        })
        .collect();
    drops.rows_kept = edges.len();
    Ok(Ingested {
        edges,
        universe: NodeUniverse::from_labels(labels)?,
        drops,
    })
}

/// Months since year 0 for the UTC calendar month containing `timestamp`.
pub fn month_key(timestamp: i64) -> i64 {
    let dt = DateTime::<Utc>::from_timestamp(timestamp, 0).expect("timestamp in chrono range");
    dt.year() as i64 * 12 + dt.month0() as i64
}

/// Epoch seconds of the first instant of the month identified by `key`.
pub fn month_start(key: i64) -> i64 {
    let year = key.div_euclid(12) as i32;
    let month = key.rem_euclid(12) as u32 + 1;
    Utc.with_ymd_and_hms(year, month, 1, 0, 0, 0)
        .single()
        .expect("valid month start")
        .timestamp()
}

/// One monthly aggregate `A(t)`. Only strictly positive amounts are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNetwork {
    pub index: usize,
    pub n_nodes: usize,
    adjacency: BTreeMap<(NodeId, NodeId), f64>,
}

impl SnapshotNetwork {
    pub fn new(index: usize, n_nodes: usize) -> Self {
        Self {
            index,
            n_nodes,
            adjacency: BTreeMap::new(),
        }
    }

    /// Adds `amount` to the `(src, dst)` entry.
    pub fn add(&mut self, src: NodeId, dst: NodeId, amount: f64) -> Result<()> {
        if src >= self.n_nodes || dst >= self.n_nodes {
            return Err(FlowError::DimensionMismatch(format!(
                "edge ({src}, {dst}) outside a universe of {} nodes",
                self.n_nodes
            )));
        }
        if !(amount > 0.0 && amount.is_finite()) {
            return Err(FlowError::InvalidArgument(format!(
                "snapshot amounts must be positive and finite, got {amount}"
            )));
        }
        *self.adjacency.entry((src, dst)).or_insert(0.0) += amount;
        Ok(())
    }

    pub fn get(&self, src: NodeId, dst: NodeId) -> f64 {
        self.adjacency.get(&(src, dst)).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, src: NodeId, dst: NodeId) -> bool {
        self.adjacency.contains_key(&(src, dst))
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.adjacency.iter().map(|(&(s, d), &a)| (s, d, a))
    }

    /// Outgoing entries of `src`, ordered by destination.
    pub fn row(&self, src: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjacency
            .range((src, 0)..(src + 1, 0))
            .map(|(&(_, d), &a)| (d, a))
    }

    pub fn out_flows(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_nodes];
        for (s, _, a) in self.edges() {
            w[s] += a;
        }
        w
    }

    pub fn in_flows(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_nodes];
        for (_, d, a) in self.edges() {
            v[d] += a;
        }
        v
    }

    pub fn total_volume(&self) -> f64 {
        self.adjacency.values().sum()
    }
}

/// Chronological sequence of monthly snapshots plus the raw event list.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    snapshots: Vec<SnapshotNetwork>,
    decompositions: Vec<FlowDecomposition>,
    universe: NodeUniverse,
    events: Vec<TemporalEdge>,
    event_months: Vec<usize>,
    first_month: i64,
}

impl SnapshotSeries {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.universe.len()
    }

    pub fn universe(&self) -> &NodeUniverse {
        &self.universe
    }

    pub fn snapshots(&self) -> &[SnapshotNetwork] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> &SnapshotNetwork {
        &self.snapshots[t]
    }

    pub fn decomposition(&self, t: usize) -> &FlowDecomposition {
        &self.decompositions[t]
    }

    /// Raw transactions sorted by timestamp.
    pub fn events(&self) -> &[TemporalEdge] {
        &self.events
    }

    /// Snapshot index of each entry in [`Self::events`].
    pub fn event_months(&self) -> &[usize] {
        &self.event_months
    }

    /// Epoch seconds at which snapshot `t` begins. Valid for `t == len()` too.
    pub fn month_start(&self, t: usize) -> i64 {
        month_start(self.first_month + t as i64)
    }

    /// `YYYY-MM` label of snapshot `t`.
    pub fn month_label(&self, t: usize) -> String {
        let key = self.first_month + t as i64;
        format!("{:04}-{:02}", key.div_euclid(12), key.rem_euclid(12) + 1)
    }
}

/// Buckets edges into one snapshot per UTC calendar month, from the month of
/// the first edge to the month of the last, inclusive.
pub fn build_snapshots(edges: &[TemporalEdge], universe: NodeUniverse) -> Result<SnapshotSeries> {
    if edges.is_empty() {
        return Err(FlowError::EmptyDataset("no edges to snapshot".into()));
    }
    if edges.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(FlowError::InvalidArgument("edges must be sorted by timestamp".into()));
    }
    let n = universe.len();
    let first_month = month_key(edges[0].timestamp);
    let last_month = month_key(edges[edges.len() - 1].timestamp);
    let n_months = (last_month - first_month + 1) as usize;
    let mut snapshots: Vec<SnapshotNetwork> =
        (0..n_months).map(|t| SnapshotNetwork::new(t, n)).collect();
    let mut event_months = Vec::with_capacity(edges.len());
    for e in edges {
        let t = (month_key(e.timestamp) - first_month) as usize;
        snapshots[t].add(e.src, e.dst, e.amount)?;
        event_months.push(t);
    }
    let decompositions = snapshots.iter().map(decompose).collect();
    Ok(SnapshotSeries {
        snapshots,
        decompositions,
        universe,
        events: edges.to_vec(),
        event_months,
        first_month,
    })
}

/// Builds a series from per-month `(src, dst, amount)` lists; each entry
/// becomes one event at `day` (1-based) of its month, starting at `first_month`
/// (as returned by [`month_key`]).
pub fn series_from_monthly(
    universe: NodeUniverse,
    first_month: i64,
    months: &[Vec<(NodeId, NodeId, f64)>],
) -> Result<SnapshotSeries> {
    let mut edges = Vec::new();
    for (t, month) in months.iter().enumerate() {
        let start = month_start(first_month + t as i64);
        for (k, &(src, dst, amount)) in month.iter().enumerate() {
            // spread events over the first days of the month to keep them ordered
            let offset = 86_400 + (k as i64 % 27) * 86_400 + k as i64;
            edges.push(TemporalEdge { src, dst, timestamp: start + offset, amount });
        }
    }
    edges.sort_by_key(|e| e.timestamp);
    let mut series = build_snapshots(&edges, universe)?;
    let leading = months.iter().take_while(|m| m.is_empty()).count();
    if leading > 0 || series.len() < months.len() {
        // pad so the series spans every requested month
        let n = series.n_nodes();
        let mut snapshots: Vec<SnapshotNetwork> = (0..months.len()).map(|t| SnapshotNetwork::new(t, n)).collect();
        let mut event_months = Vec::with_capacity(series.events.len());
        for e in &series.events {
            let t = (month_key(e.timestamp) - first_month) as usize;
            snapshots[t].add(e.src, e.dst, e.amount)?;
            event_months.push(t);
        }
        series.decompositions = snapshots.iter().map(decompose).collect();
        series.snapshots = snapshots;
        series.event_months = event_months;
        series.first_month = first_month;
    }
    Ok(series)
}

/// Sparse matrix whose non-empty rows are probability distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMatrix {
    n_nodes: usize,
    rows: Vec<Vec<(NodeId, f64)>>,
}

impl RatioMatrix {
    pub fn empty(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            rows: vec![Vec::new(); n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn row(&self, i: NodeId) -> &[(NodeId, f64)] {
        &self.rows[i]
    }

    /// Replaces row `i`; entries are sorted by destination and zeros dropped.
    pub fn set_row(&mut self, i: NodeId, mut row: Vec<(NodeId, f64)>) {
        row.retain(|&(_, p)| p > 0.0);
        row.sort_by_key(|&(j, _)| j);
        self.rows[i] = row;
    }

    pub fn get(&self, i: NodeId, j: NodeId) -> f64 {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(d, _)| d)
            .map_or(0.0, |k| row[k].1)
    }

    pub fn is_row_empty(&self, i: NodeId) -> bool {
        self.rows[i].is_empty()
    }

    pub fn row_sum(&self, i: NodeId) -> f64 {
        self.rows[i].iter().map(|&(_, p)| p).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = (NodeId, &[(NodeId, f64)])> + '_ {
        self.rows.iter().enumerate().map(|(i, r)| (i, r.as_slice()))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// The pair `(w(t), R(t))` of one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDecomposition {
    pub w: Vec<f64>,
    pub ratios: RatioMatrix,
}

pub fn decompose(snapshot: &SnapshotNetwork) -> FlowDecomposition {
    let w = snapshot.out_flows();
    let mut ratios = RatioMatrix::empty(snapshot.n_nodes);
    for (i, &wi) in w.iter().enumerate() {
        if wi > 0.0 {
            ratios.set_row(i, snapshot.row(i).map(|(j, a)| (j, a / wi)).collect());
        }
    }
    FlowDecomposition { w, ratios }
}

/// Predicted flows `Â_ij = ŵ_i · R̂_ij`.
pub fn recompose(w_hat: &[f64], r_hat: &RatioMatrix, index: usize) -> Result<SnapshotNetwork> {
    if w_hat.len() != r_hat.n_nodes() {
        return Err(FlowError::DimensionMismatch(format!(
            "{} volumes for a {}-node ratio matrix",
            w_hat.len(),
            r_hat.n_nodes()
        )));
    }
    let mut out = SnapshotNetwork::new(index, w_hat.len());
    for (i, row) in r_hat.rows() {
        let wi = w_hat[i];
        if !(wi >= 0.0) {
            return Err(FlowError::InvalidArgument(format!("negative volume {wi} for node {i}")));
        }
        if wi == 0.0 {
            continue;
        }
        for &(j, r) in row {
            let a = wi * r;
            if a > 0.0 {
                out.add(i, j, a)?;
            }
        }
    }
    Ok(out)
}

/// How the five per-edge features are assembled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeFeatureLayout {
    /// `[ln(1+A_ij), A_ij/w_i, w_i/total, A_ij/inflow_j, A_ij/total]`
    #[default]
    Standard,
    /// As `Standard` but with `ln(A_ij)` as the first component.
    RawLog,
}

impl std::str::FromStr for EdgeFeatureLayout {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "raw-log" => Ok(Self::RawLog),
            other => Err(FlowError::Config(format!("unknown edge feature layout {other:?}"))),
        }
    }
}

pub const EDGE_FEATURES: usize = 5;

/// The five features of the existing edge `(i, j)`.
pub fn edge_features(
    decomp: &FlowDecomposition,
    in_flows: &[f64],
    total_volume: f64,
    i: NodeId,
    j: NodeId,
) -> Result<[f64; EDGE_FEATURES]> {
    edge_features_with(decomp, in_flows, total_volume, i, j, EdgeFeatureLayout::Standard)
}

pub fn edge_features_with(
    decomp: &FlowDecomposition,
    in_flows: &[f64],
    total_volume: f64,
    i: NodeId,
    j: NodeId,
    layout: EdgeFeatureLayout,
) -> Result<[f64; EDGE_FEATURES]> {
    let wi = decomp.w.get(i).copied().unwrap_or(0.0);
    let ratio = if i < decomp.ratios.n_nodes() { decomp.ratios.get(i, j) } else { 0.0 };
    let amount = wi * ratio;
    if amount <= 0.0 {
        return Err(FlowError::MissingEdge { src: i, dst: j });
    }
    let first = match layout {
        EdgeFeatureLayout::Standard => amount.ln_1p(),
        EdgeFeatureLayout::RawLog => amount.ln(),
    };
    Ok([
        first,
        ratio,
        (wi / total_volume).min(1.0),
        (amount / in_flows[j]).min(1.0),
        (amount / total_volume).min(1.0),
    ])
}

/// Per-snapshot precomputation for repeated edge-feature lookups.
#[derive(Debug, Clone)]
pub struct EdgeFeatureContext {
    pub decomposition: FlowDecomposition,
    pub in_flows: Vec<f64>,
    pub total_volume: f64,
    pub layout: EdgeFeatureLayout,
}

impl EdgeFeatureContext {
    pub fn new(snapshot: &SnapshotNetwork, layout: EdgeFeatureLayout) -> Self {
        Self {
            decomposition: decompose(snapshot),
            in_flows: snapshot.in_flows(),
            total_volume: snapshot.total_volume(),
            layout,
        }
    }

    pub fn features(&self, i: NodeId, j: NodeId) -> Result<[f64; EDGE_FEATURES]> {
        edge_features_with(
            &self.decomposition,
            &self.in_flows,
            self.total_volume,
            i,
            j,
            self.layout,
        )
    }
}

/// Writes `t,src,dst,amount` rows.
pub fn write_snapshot_csv<'a, W: Write>(
    snapshots: impl IntoIterator<Item = &'a SnapshotNetwork>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "src", "dst", "amount"])?;
    for snap in snapshots {
        for (s, d, a) in snap.edges() {
            w.write_record([
                snap.index.to_string(),
                s.to_string(),
                d.to_string(),
                a.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a ratio matrix in the snapshot CSV layout (the `amount` column holds ratios).
pub fn write_ratio_csv<W: Write>(matrices: &[(usize, &RatioMatrix)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "src", "dst", "amount"])?;
    for (t, m) in matrices {
        for (i, row) in m.rows() {
            for &(j, p) in row {
                w.write_record([t.to_string(), i.to_string(), j.to_string(), p.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `t,src,dst,amount` rows grouped by `t`.
pub fn read_snapshot_csv<R: Read>(
    reader: R,
    n_nodes: usize,
) -> Result<BTreeMap<usize, Vec<(NodeId, NodeId, f64)>>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<usize, Vec<(NodeId, NodeId, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(parse_err(line, "expected t,src,dst,amount"));
        }
        let field = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| parse_err(line, format!("bad integer {:?}", &rec[k])))
        };
        let (t, s, d) = (field(0)?, field(1)?, field(2)?);
        let a: f64 = rec[3]
            .parse()
            .map_err(|_| parse_err(line, format!("bad amount {:?}", &rec[3])))?;
        if s >= n_nodes || d >= n_nodes {
            return Err(parse_err(line, format!("node id outside universe of {n_nodes}")));
        }
        out.entry(t).or_default().push((s, d, a));
    }
    Ok(out)
}

/// Writes `t,node,<column>` rows of per-node values such as volumes.
pub fn write_node_values_csv<W: Write>(column: &str, rows: &[(usize, NodeId, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "node", column])?;
    for &(t, i, v) in rows {
        w.write_record([t.to_string(), i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `t,node,value` rows grouped by `t`. The value column name is free.
pub fn read_node_values_csv<R: Read>(reader: R, n_nodes: usize) -> Result<BTreeMap<usize, Vec<(NodeId, f64)>>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<usize, Vec<(NodeId, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(parse_err(line, "expected t,node,value"));
        }
        let field = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| parse_err(line, format!("bad integer {:?}", &rec[k])))
        };
        let (t, i) = (field(0)?, field(1)?);
        let v: f64 = rec[2]
            .parse()
            .map_err(|_| parse_err(line, format!("bad value {:?}", &rec[2])))?;
        if i >= n_nodes {
            return Err(parse_err(line, format!("node id outside universe of {n_nodes}")));
        }
        out.entry(t).or_default().push((i, v));
    }
    Ok(out)
}

/// Builds a ratio matrix from `(src, dst, ratio)` triples.
pub fn ratio_matrix_from_triples(n_nodes: usize, triples: &[(NodeId, NodeId, f64)]) -> RatioMatrix {
    let mut rows: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n_nodes];
    for &(s, d, p) in triples {
        rows[s].push((d, p));
    }
    let mut m = RatioMatrix::empty(n_nodes);
    for (i, row) in rows.into_iter().enumerate() {
        m.set_row(i, row);
    }
    m
}
