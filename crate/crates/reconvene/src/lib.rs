//! IO companion to `reconvene-core`: model/dataset file formats, the
//! runtime profiler, shape presets, synthetic data generation, and the CLI.

pub mod cli;
pub mod format;
pub mod presets;
pub mod profile;
pub mod synth;

pub use format::{load_dataset, load_model, save_dataset, save_model, FormatError};
pub use profile::{compare, profile, profile_static, ComparisonReport, ProfileReport};
