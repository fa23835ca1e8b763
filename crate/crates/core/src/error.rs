use alloc::string::String;
use core::fmt;

/// Errors raised by the pruning pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A pruning degree outside `[0, 1]`.
    InvalidPruningDegree(f64),
    /// A configuration value violated its invariant.
    InvalidConfig(String),
    /// A prunable layer with zero weights cannot produce sparsity statistics.
    EmptyLayer { layer: usize },
    /// Statistics were requested over an empty layer set.
    EmptyStats,
    /// Requested channel count outside `[1, out_channels]`.
    ChannelCountOutOfRange { layer: usize, requested: usize, available: usize },
    /// A plan does not match the graph it is being applied to.
    PlanMismatch(String),
    /// Channel-count changes cannot be reconciled with downstream shapes.
    ShapeReconciliation { layer: usize, detail: String },
    /// Forward/backward pass hit an inconsistent shape.
    ShapeMismatch { layer: usize, detail: String },
    /// A non-finite value appeared during a forward or training pass.
    NonFinite { layer: usize },
    /// Training diverged (non-finite loss).
    Diverged { epoch: usize },
    /// The model graph failed validation.
    InvalidGraph(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidPruningDegree(p) => {
                write!(f, "pruning degree {p} outside [0, 1]")
            }
            CoreError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            CoreError::EmptyLayer { layer } => {
                write!(f, "layer {layer} has no weights to analyze")
            }
            CoreError::EmptyStats => write!(f, "no layer statistics provided"),
            CoreError::ChannelCountOutOfRange { layer, requested, available } => write!(
                f,
                "layer {layer}: requested {requested} channels, valid range is 1..={available}"
            ),
            CoreError::PlanMismatch(msg) => write!(f, "plan does not match graph: {msg}"),
            CoreError::ShapeReconciliation { layer, detail } => {
                write!(f, "layer {layer}: cannot reconcile shapes: {detail}")
            }
            CoreError::ShapeMismatch { layer, detail } => {
                write!(f, "layer {layer}: shape mismatch: {detail}")
            }
            CoreError::NonFinite { layer } => {
                write!(f, "non-finite value produced at layer {layer}")
            }
            CoreError::Diverged { epoch } => {
                write!(f, "training diverged at epoch {epoch} (non-finite loss)")
            }
            CoreError::InvalidGraph(msg) => write!(f, "invalid model graph: {msg}"),
        }
    }
}
