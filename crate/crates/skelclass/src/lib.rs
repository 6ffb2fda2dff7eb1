//! Skeleton-based movement classification at desk scale.
//!
//! The crate ingests pose-estimator keypoint sequences, preprocesses them
//! into fixed-size clips, trains a spatiotemporal classifier (per-part
//! encoders, self-attention, graph convolution over body parts, a
//! bidirectional LSTM stack, and multi-head attention fusion) with focal
//! loss, evaluates it with cross-validated statistics, and renders the
//! model's attention as per-frame skeleton images.
//!
//! Start with the runnable programs under `examples/`; the `skelclass`
//! binary wraps the same library entry points behind subcommands.

pub mod autodiff;
pub mod cli;
pub mod eval;
pub mod model;
pub mod pose;
pub mod seed;
pub mod synth;
pub mod train;
pub mod viz;

pub use autodiff::{Graph, GraphError, Mode, NodeId, Tensor};
