//! Pruning-at-initialization engine.
//!
//! Converts a dense sequential convolutional network into a compressed,
//! trainable model by combining global unstructured magnitude pruning with
//! selective structured channel pruning of pruning-resilient layers.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats, and the CLI
//! live in the companion `reconvene` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod graph;
pub mod init;
pub mod mask;
pub mod nn;
pub mod policy;
pub mod prune;
pub mod rectify;
pub mod sensitivity;
pub mod train;

pub use error::CoreError;
pub use graph::{LayerKind, LayerSpec, ModelGraph, Shape, ValidationReport, Violation, WeightTensor};
pub use mask::SparsityMask;
pub use policy::{Policy, RandomMode};
pub use prune::PruneConfig;
pub use sensitivity::{LayerSparsityStats, PlanEntry, PrunePlan};
pub use train::{Dataset, TrainConfig, TrainOutcome};
