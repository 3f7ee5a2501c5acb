//! Attention-based ratio model with a hierarchical softmax output.

pub mod hstree;
pub mod model;
pub mod params;
pub mod predict;
pub mod sampling;
pub mod train;

pub use hstree::{build_hs_tree, default_branching, HsNode, HsTree};
pub use model::{forward, grad, hsoftmax_prob, standardize, ForwardCache};
pub use params::{DlfParams, Dims};
pub use predict::{mix_with_history, predict_ratios, MixedRatios};
pub use sampling::{sample_neighbors, EventIndex, NeighborEntry, NeighborSample};
pub use train::{train, TrainConfig, TrainedModel};
