//! Run configuration: a flat `key = value` file with dotted keys.
//!
//! ```text
//! # comment
//! seed = 7
//! dlf.lr = 0.001
//! embedding.tau = 0.25,0.5,1.0
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::RatioAveraging;
use crate::dlf::TrainConfig;
use crate::embeddings::EmbeddingConfig;
use crate::error::{FlowError, Result};
use crate::eval::BceSupport;
use crate::graph::{parse_timestamp, EdgeFeatureLayout, IngestConfig};
use crate::volume::GbdtConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Formation candidates below this ratio are cut before renormalizing.
    pub threshold: f64,
    pub bce_support: BceSupport,
    /// Share of final snapshots held out for testing.
    pub test_fraction: f64,
    pub min_test: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-4,
            bce_support: BceSupport::Sparse,
            test_fraction: 0.2,
            min_test: 2,
        }
    }
}

impl EvalConfig {
    /// First test month for a series of `len` snapshots.
    pub fn test_start(&self, len: usize) -> usize {
        let n_test = ((len as f64 * self.test_fraction).ceil() as usize).max(self.min_test);
        len.saturating_sub(n_test)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub ingest: IngestConfig,
    pub embedding: EmbeddingConfig,
    pub dlf: TrainConfig,
    pub volume: GbdtConfig,
    pub eval: EvalConfig,
    pub baseline_averaging: RatioAveraging,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| FlowError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(FlowError::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_time(key: &str, value: &str) -> Result<Option<i64>> {
    if value.is_empty() || value == "none" {
        return Ok(None);
    }
    parse_timestamp(value)
        .map(Some)
        .ok_or_else(|| FlowError::Config(format!("bad date {value:?} for {key}")))
}

fn layout_name(l: EdgeFeatureLayout) -> &'static str {
    match l {
        EdgeFeatureLayout::Standard => "standard",
        EdgeFeatureLayout::RawLog => "raw-log",
    }
}

fn averaging_name(a: RatioAveraging) -> &'static str {
    match a {
        RatioAveraging::AverageThenRenormalize => "average-then-renormalize",
        RatioAveraging::PooledWeights => "pooled-weights",
    }
}

fn support_name(s: BceSupport) -> &'static str {
    match s {
        BceSupport::Sparse => "sparse",
        BceSupport::Full => "full",
    }
}

impl RunConfig {
    /// Small settings that finish in seconds to minutes on a laptop.
    pub fn ci() -> Self {
        Self {
            dlf: TrainConfig {
                lr: 0.05,
                epochs: 30,
                batch_size: 32,
                neighbors: 30,
                dim: 16,
                time_dim: 8,
                ..TrainConfig::default()
            },
            volume: GbdtConfig::ci(),
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "ci" => Ok(Self::ci()),
            other => Err(FlowError::Config(format!("unknown profile {other:?} (expected default or ci)"))),
        }
    }

    /// Sets one dotted key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "ingest.min_activity" => self.ingest.min_activity = parse(key, v)?,
            "ingest.date_from" => self.ingest.date_from = parse_time(key, v)?,
            "ingest.date_to" => self.ingest.date_to = parse_time(key, v)?,
            "ingest.allow_self_loops" => self.ingest.allow_self_loops = parse_bool(key, v)?,
            "embedding.dim" => self.embedding.dim = parse(key, v)?,
            "embedding.tau" => {
                self.embedding.tau = v
                    .split(',')
                    .map(|t| parse(key, t.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "embedding.order" => self.embedding.order = parse(key, v)?,
            "embedding.top_m" => self.embedding.top_m = parse(key, v)?,
            "embedding.warmup_months" => self.embedding.warmup_months = parse(key, v)?,
            "dlf.lr" => self.dlf.lr = parse(key, v)?,
            "dlf.epochs" => self.dlf.epochs = parse(key, v)?,
            "dlf.batch_size" => self.dlf.batch_size = parse(key, v)?,
            "dlf.neighbors" => self.dlf.neighbors = parse(key, v)?,
            "dlf.mix" => self.dlf.mix = parse(key, v)?,
            "dlf.dim" => self.dlf.dim = parse(key, v)?,
            "dlf.time_dim" => self.dlf.time_dim = parse(key, v)?,
            "dlf.time_learnable" => self.dlf.time_learnable = parse_bool(key, v)?,
            "dlf.tree_depth" => self.dlf.tree_depth = parse(key, v)?,
            "dlf.branching" => {
                self.dlf.branching = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "dlf.first_month" => self.dlf.first_month = parse(key, v)?,
            "dlf.edge_features" => self.dlf.layout = v.parse()?,
            "volume.learning_rate" => self.volume.learning_rate = parse(key, v)?,
            "volume.n_estimators" => self.volume.n_estimators = parse(key, v)?,
            "volume.max_depth" => self.volume.max_depth = parse(key, v)?,
            "volume.min_samples_leaf" => self.volume.min_samples_leaf = parse(key, v)?,
            "eval.threshold" => self.eval.threshold = parse(key, v)?,
            "eval.bce_support" => self.eval.bce_support = v.parse()?,
            "eval.test_fraction" => self.eval.test_fraction = parse(key, v)?,
            "eval.min_test" => self.eval.min_test = parse(key, v)?,
            "baseline.averaging" => self.baseline_averaging = v.parse()?,
            other => return Err(FlowError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config file body on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FlowError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| FlowError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| FlowError::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Copies the run seed into the component configs and checks them.
    pub fn finalize(mut self) -> Result<Self> {
        self.dlf.seed = self.seed;
        self.volume.seed = self.seed;
        self.dlf.validate()?;
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(FlowError::Config("eval.test_fraction must lie in (0, 1)".into()));
        }
        if !(self.eval.threshold >= 0.0 && self.eval.threshold < 1.0) {
            return Err(FlowError::Config("eval.threshold must lie in [0, 1)".into()));
        }
        Ok(self)
    }

    /// Every key with its current value, in key order.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let opt_time = |t: Option<i64>| t.map_or("none".to_string(), |v| v.to_string());
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("ingest.min_activity", self.ingest.min_activity.to_string());
        put("ingest.date_from", opt_time(self.ingest.date_from));
        put("ingest.date_to", opt_time(self.ingest.date_to));
        put("ingest.allow_self_loops", self.ingest.allow_self_loops.to_string());
        put("embedding.dim", self.embedding.dim.to_string());
        put(
            "embedding.tau",
            self.embedding.tau.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        put("embedding.order", self.embedding.order.to_string());
        put("embedding.top_m", self.embedding.top_m.to_string());
        put("embedding.warmup_months", self.embedding.warmup_months.to_string());
        put("dlf.lr", self.dlf.lr.to_string());
        put("dlf.epochs", self.dlf.epochs.to_string());
        put("dlf.batch_size", self.dlf.batch_size.to_string());
        put("dlf.neighbors", self.dlf.neighbors.to_string());
        put("dlf.mix", self.dlf.mix.to_string());
        put("dlf.dim", self.dlf.dim.to_string());
        put("dlf.time_dim", self.dlf.time_dim.to_string());
        put("dlf.time_learnable", self.dlf.time_learnable.to_string());
        put("dlf.tree_depth", self.dlf.tree_depth.to_string());
        put("dlf.branching", self.dlf.branching.map_or("auto".to_string(), |b| b.to_string()));
        put("dlf.first_month", self.dlf.first_month.to_string());
        put("dlf.edge_features", layout_name(self.dlf.layout).to_string());
        put("volume.learning_rate", self.volume.learning_rate.to_string());
        put("volume.n_estimators", self.volume.n_estimators.to_string());
        put("volume.max_depth", self.volume.max_depth.to_string());
        put("volume.min_samples_leaf", self.volume.min_samples_leaf.to_string());
        put("eval.threshold", self.eval.threshold.to_string());
        put("eval.bce_support", support_name(self.eval.bce_support).to_string());
        put("eval.test_fraction", self.eval.test_fraction.to_string());
        put("eval.min_test", self.eval.min_test.to_string());
        put("baseline.averaging", averaging_name(self.baseline_averaging).to_string());
        m
    }
}
