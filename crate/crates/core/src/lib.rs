//! Batch-norm channel pruning for small convolutional detectors.
//!
//! The crate covers the whole loop: a deterministic CPU runtime
//! ([`runtime`]), a serialized detector graph with cost accounting
//! ([`graph`]), L1 sparse training and sorted-γ channel pruning
//! ([`prune`]), detection metrics ([`metrics`]), a synthetic desk-scale
//! detection bench ([`bench`]) and a gesture-to-media-command controller
//! ([`hmi`]).

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod graph;
pub mod hmi;
pub mod metrics;
pub mod prune;
pub mod runtime;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{GraphModel, NodeSpec, Op};
pub use tensor::Tensor4;
