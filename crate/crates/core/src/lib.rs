//! Dynamic link and flow prediction for temporal transfer networks.
//!
//! Future weighted adjacency `A(t)` is predicted as the product of two
//! independently forecast parts: each sender's total outflow `w_i(t)`
//! ([`volume`]) and the distribution of that outflow over recipients
//! `R_i(t)` ([`dlf`]). [`baselines`] holds the memorization baselines and
//! [`eval`] the metrics used to compare them.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dlf;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod graph;
pub mod netstats;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod volume;

pub use error::{FlowError, Result};
pub use graph::{
    build_snapshots, decompose, ingest_edges, recompose, FlowDecomposition, NodeId, RatioMatrix,
    SnapshotNetwork, SnapshotSeries, TemporalEdge,
};
