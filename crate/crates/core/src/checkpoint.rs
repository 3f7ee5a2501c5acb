//! Versioned JSON checkpoints.
//!
//! Every file has the same envelope:
//!
//! ```text
//! {
//!   "format": "flowcast-checkpoint",
//!   "version": 1,
//!   "kind": "dlf" | "volume",
//!   "config": { "dlf.lr": "0.001", ... },   // full run config echo
//!   "labels": ["0xab..", ...],              // node universe, by id
//!   "body": { ... }                         // kind-specific
//! }
//! ```
//!
//! A `dlf` body holds `dims`, `train`, `cutoff`, `initial_loss`, `trace`,
//! `tree` and `tensors`, a map from tensor name to `{shape, data}` with data
//! in row-major order. A `volume` body holds the boosted trees.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dlf::{DlfParams, Dims, HsTree, TrainConfig, TrainedModel};
use crate::error::{FlowError, Result};
use crate::rng::{stream, Stream};
use crate::volume::VolumeModel;

pub const FORMAT: &str = "flowcast-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope<B> {
    format: String,
    version: u32,
    kind: String,
    config: BTreeMap<String, String>,
    labels: Vec<String>,
    body: B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DlfBody {
    dims: Dims,
    train: TrainConfig,
    cutoff: usize,
    initial_loss: f64,
    trace: Vec<f64>,
    tree: HsTree,
    tensors: BTreeMap<String, Tensor>,
}

/// What a checkpoint says about the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config: BTreeMap<String, String>,
    pub labels: Vec<String>,
}

fn shapes(p: &DlfParams) -> BTreeMap<String, Vec<usize>> {
    let mut m = BTreeMap::new();
    let mut put = |k: String, s: &[usize]| {
        m.insert(k, s.to_vec());
    };
    put("w_in".into(), p.w_in.shape());
    put("b_in".into(), p.b_in.shape());
    put("time.freqs".into(), &[p.time.freqs.len()]);
    put("time.phases".into(), &[p.time.phases.len()]);
    put("w_q".into(), p.w_q.shape());
    put("w_k".into(), p.w_k.shape());
    put("w_v".into(), p.w_v.shape());
    put("w_0".into(), p.w_0.shape());
    put("b_0".into(), p.b_0.shape());
    put("w_1".into(), p.w_1.shape());
    put("b_1".into(), p.b_1.shape());
    for (k, (w, b)) in p.tree_w.iter().zip(&p.tree_b).enumerate() {
        put(format!("tree.{k}.w"), w.shape());
        put(format!("tree.{k}.b"), b.shape());
    }
    m
}

fn write_envelope<B: Serialize, W: Write>(kind: &str, config: &BTreeMap<String, String>, labels: &[String], body: B, writer: W) -> Result<()> {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: VERSION,
        kind: kind.to_string(),
        config: config.clone(),
        labels: labels.to_vec(),
        body,
    };
    serde_json::to_writer(writer, &env)?;
    Ok(())
}

fn read_envelope<B: DeserializeOwned, R: Read>(kind: &str, reader: R) -> Result<Envelope<B>> {
    let value: serde_json::Value = serde_json::from_reader(reader)?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != FORMAT {
        return Err(FlowError::Checkpoint(format!("not a checkpoint (format {format:?})")));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != u64::from(VERSION) {
        return Err(FlowError::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let found = value.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if found != kind {
        return Err(FlowError::Checkpoint(format!("expected a {kind} checkpoint, found {found:?}")));
    }
    Ok(serde_json::from_value(value)?)
}

pub fn save_dlf<W: Write>(model: &TrainedModel, config: &BTreeMap<String, String>, labels: &[String], writer: W) -> Result<()> {
    let shapes = shapes(&model.params);
    let mut tensors = BTreeMap::new();
    model.params.for_each(|name, data| {
        tensors.insert(
            name.to_string(),
            Tensor {
                shape: shapes[name].clone(),
                data: data.to_vec(),
            },
        );
    });
    tensors.insert(
        "x".into(),
        Tensor {
            shape: model.x.shape().to_vec(),
            data: model.x.iter().copied().collect(),
        },
    );
    let body = DlfBody {
        dims: model.params.dims,
        train: model.config.clone(),
        cutoff: model.cutoff,
        initial_loss: model.initial_loss,
        trace: model.trace.clone(),
        tree: model.tree.clone(),
        tensors,
    };
    write_envelope("dlf", config, labels, body, writer)
}

pub fn load_dlf<R: Read>(reader: R) -> Result<(TrainedModel, CheckpointMeta)> {
    let env: Envelope<DlfBody> = read_envelope("dlf", reader)?;
    let mut body = env.body;
    body.tree.validate().map_err(|e| FlowError::Checkpoint(e.to_string()))?;
    // shapes come from the dims and tree; every tensor is then overwritten
    let mut params = DlfParams::init(body.dims, &body.tree, body.train.time_learnable, &mut stream(0, Stream::Init));
    let expected = shapes(&params);
    let mut missing = Vec::new();
    let mut bad_shape = Vec::new();
    params.for_each_mut(|name, dst| match body.tensors.get(name) {
        None => missing.push(name.to_string()),
        Some(t) if t.shape != expected[name] || t.data.len() != dst.len() => bad_shape.push(name.to_string()),
        Some(t) => dst.copy_from_slice(&t.data),
    });
    if !missing.is_empty() || !bad_shape.is_empty() {
        return Err(FlowError::Checkpoint(format!(
            "missing tensors {missing:?}, wrong shapes {bad_shape:?}"
        )));
    }
    let x = body
        .tensors
        .remove("x")
        .ok_or_else(|| FlowError::Checkpoint("missing tensor \"x\"".into()))?;
    if x.shape.len() != 2 || x.shape[1] != body.dims.d_x || x.shape[0] != body.tree.n_dest {
        return Err(FlowError::Checkpoint(format!("embedding tensor has shape {:?}", x.shape)));
    }
    let x = Array2::from_shape_vec((x.shape[0], x.shape[1]), x.data)
        .map_err(|e| FlowError::Checkpoint(e.to_string()))?;
    let extra: Vec<&String> = body.tensors.keys().filter(|k| !expected.contains_key(*k)).collect();
    if !extra.is_empty() {
        return Err(FlowError::Checkpoint(format!("unexpected tensors {extra:?}")));
    }
    if env.labels.len() != x.nrows() {
        return Err(FlowError::Checkpoint(format!(
            "{} labels for {} embedding rows",
            env.labels.len(),
            x.nrows()
        )));
    }
    Ok((
        TrainedModel {
            config: body.train,
            params,
            tree: body.tree,
            x,
            cutoff: body.cutoff,
            initial_loss: body.initial_loss,
            trace: body.trace,
        },
        CheckpointMeta {
            config: env.config,
            labels: env.labels,
        },
    ))
}

pub fn save_volume<W: Write>(model: &VolumeModel, config: &BTreeMap<String, String>, labels: &[String], writer: W) -> Result<()> {
    write_envelope("volume", config, labels, model, writer)
}

pub fn load_volume<R: Read>(reader: R) -> Result<(VolumeModel, CheckpointMeta)> {
    let env: Envelope<VolumeModel> = read_envelope("volume", reader)?;
    Ok((
        env.body,
        CheckpointMeta {
            config: env.config,
            labels: env.labels,
        },
    ))
}
