use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::mask::SparsityMask;

/// Layer kind plus its shape-defining hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        out_features: usize,
        in_features: usize,
    },
    Relu,
    MaxPool2d {
        kernel_size: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Only conv2d and linear weight matrices are prunable.
    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    /// Declared weight shape, if the layer carries weights.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerKind::Conv2d { out_channels, in_channels, kernel_size, .. } => {
                Some(alloc::vec![out_channels, in_channels, kernel_size, kernel_size])
            }
            LayerKind::Linear { out_features, in_features } => {
                Some(alloc::vec![out_features, in_features])
            }
            _ => None,
        }
    }

    /// Number of inputs feeding one output unit; sets the Kaiming variance.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv2d { in_channels, kernel_size, .. } => {
                Some(in_channels * kernel_size * kernel_size)
            }
            LayerKind::Linear { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    /// Output channels (conv) or output features (linear).
    pub fn out_units(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv2d { out_channels, .. } => Some(out_channels),
            LayerKind::Linear { out_features, .. } => Some(out_features),
            _ => None,
        }
    }
}

/// Flat row-major weight storage with its declared shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        WeightTensor { shape, data }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// One layer of the sequential model IR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub weights: Option<WeightTensor>,
    pub bias: Option<Vec<f32>>,
    pub mask: Option<SparsityMask>,
}

impl LayerSpec {
    pub fn parameterless(kind: LayerKind) -> Self {
        LayerSpec { kind, weights: None, bias: None, mask: None }
    }

    pub fn is_prunable(&self) -> bool {
        self.kind.is_prunable()
    }

    /// Weight element count, 0 for parameterless layers.
    pub fn weight_count(&self) -> usize {
        self.weights.as_ref().map_or(0, |w| w.data.len())
    }

    /// Nonzero weights: mask popcount when masked, else all weights.
    pub fn nonzero_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.nnz(),
            None => self.weight_count(),
        }
    }
}

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// (channels, height, width)
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn element_count(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    /// Shape after applying `kind`, or a reason it cannot apply.
    pub fn apply(&self, kind: &LayerKind) -> Result<Shape, String> {
        match (*self, kind) {
            (Shape::Chw(c, h, w), LayerKind::Conv2d { out_channels, in_channels, kernel_size, stride, padding }) => {
                if c != *in_channels {
                    return Err(format!("conv2d expects {in_channels} input channels, got {c}"));
                }
                if *stride == 0 || *kernel_size == 0 || *out_channels == 0 || *in_channels == 0 {
                    return Err(String::from("conv2d hyperparameters must be positive"));
                }
                if h + 2 * padding < *kernel_size || w + 2 * padding < *kernel_size {
                    return Err(format!("kernel {kernel_size} larger than padded input {h}x{w}"));
                }
                let oh = (h + 2 * padding - kernel_size) / stride + 1;
                let ow = (w + 2 * padding - kernel_size) / stride + 1;
                Ok(Shape::Chw(*out_channels, oh, ow))
            }
            (Shape::Chw(c, h, w), LayerKind::MaxPool2d { kernel_size, stride }) => {
                if *stride == 0 || *kernel_size == 0 {
                    return Err(String::from("maxpool2d hyperparameters must be positive"));
                }
                if h < *kernel_size || w < *kernel_size {
                    return Err(format!("pool window {kernel_size} larger than input {h}x{w}"));
                }
                Ok(Shape::Chw(c, (h - kernel_size) / stride + 1, (w - kernel_size) / stride + 1))
            }
            (s, LayerKind::Relu) => Ok(s),
            (Shape::Chw(c, h, w), LayerKind::Flatten) => Ok(Shape::Flat(c * h * w)),
            (Shape::Flat(n), LayerKind::Linear { out_features, in_features }) => {
                if n != *in_features {
                    return Err(format!("linear expects {in_features} input features, got {n}"));
                }
                if *out_features == 0 || *in_features == 0 {
                    return Err(String::from("linear dimensions must be positive"));
                }
                Ok(Shape::Flat(*out_features))
            }
            (s, k) => Err(format!("{} cannot consume {s:?}", k.name())),
        }
    }
}

/// One violated invariant found by [`ModelGraph::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: Option<usize>,
    pub message: String,
}

/// Validation outcome: an empty violation list means pass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, layer: Option<usize>, message: String) {
        self.violations.push(Violation { layer, message });
    }
}

/// Ordered layer sequence with channel topology, weights, and optional
/// sparsity masks. Immutable after construction; mutation happens only by
/// constructing a new graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub layers: Vec<LayerSpec>,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    /// Seed recorded at creation, for provenance.
    pub seed_provenance: u64,
}

impl ModelGraph {
    /// Check every structural invariant; violations are data, not failures.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.class_count == 0 {
            report.push(None, String::from("class_count must be positive"));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            report.push(None, String::from("input_shape dimensions must be positive"));
        }
        let mut shape = Shape::Chw(c, h, w);
        for (i, layer) in self.layers.iter().enumerate() {
            match shape.apply(&layer.kind) {
                Ok(next) => shape = next,
                Err(msg) => {
                    let boundary = if i == 0 { String::from("input") } else { format!("{}", i - 1) };
                    report.push(Some(i), format!("channel mismatch at boundary {boundary}\u{2192}{i}: {msg}"));
                    // keep walking with the layer's declared output so later
                    // layers still get checked
                    if let LayerKind::Conv2d { out_channels, .. } = layer.kind {
                        if let Shape::Chw(_, hh, ww) = shape {
                            shape = Shape::Chw(out_channels, hh, ww);
                        }
                    } else if let LayerKind::Linear { out_features, .. } = layer.kind {
                        shape = Shape::Flat(out_features);
                    }
                }
            }
            self.check_layer_tensors(i, layer, &mut report);
        }
        if report.is_ok() && shape != Shape::Flat(self.class_count) {
            report.push(None, format!("final output {shape:?} does not match class_count {}", self.class_count));
        }
        report
    }

    fn check_layer_tensors(&self, i: usize, layer: &LayerSpec, report: &mut ValidationReport) {
        match (layer.kind.weight_shape(), &layer.weights) {
            (Some(expected), Some(w)) => {
                if w.shape != expected {
                    report.push(Some(i), format!("weight shape {:?} does not match declared {:?}", w.shape, expected));
                }
                if w.data.len() != w.element_count() {
                    report.push(Some(i), format!(
                        "weight element count {} does not match shape product {}",
                        w.data.len(),
                        w.element_count()
                    ));
                }
                if w.data.iter().any(|v| !v.is_finite()) {
                    report.push(Some(i), String::from("weight tensor contains non-finite values"));
                }
            }
            (Some(_), None) => report.push(Some(i), String::from("parameter layer missing weights")),
            (None, Some(_)) => report.push(Some(i), String::from("parameterless layer carries weights")),
            (None, None) => {}
        }
        if let Some(bias) = &layer.bias {
            match layer.kind.out_units() {
                Some(units) if bias.len() == units => {}
                Some(units) => report.push(Some(i), format!("bias length {} does not match {units} output units", bias.len())),
                None => report.push(Some(i), String::from("parameterless layer carries bias")),
            }
            if bias.iter().any(|v| !v.is_finite()) {
                report.push(Some(i), String::from("bias contains non-finite values"));
            }
        }
        if let Some(mask) = &layer.mask {
            if !layer.is_prunable() {
                report.push(Some(i), String::from("non-prunable layer carries a mask"));
            }
            if !mask.nnz_consistent() {
                report.push(Some(i), String::from("mask nnz cache does not match popcount"));
            }
            match &layer.weights {
                Some(w) if mask.len() == w.data.len() => {
                    for (j, (kept, value)) in mask.iter().zip(w.data.iter()).enumerate() {
                        if !kept && *value != 0.0 {
                            report.push(Some(i), format!("mask/weight inconsistency at element {j}: masked position holds {value}"));
                            break;
                        }
                    }
                }
                Some(w) => report.push(Some(i), format!("mask length {} does not match weight length {}", mask.len(), w.data.len())),
                None => report.push(Some(i), String::from("mask present without weights")),
            }
        }
    }

    /// Activation shape after each layer, starting from the input shape.
    pub fn shape_trace(&self) -> Result<Vec<Shape>, (usize, String)> {
        let (c, h, w) = self.input_shape;
        let mut shape = Shape::Chw(c, h, w);
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = shape.apply(&layer.kind).map_err(|e| (i, e))?;
            trace.push(shape);
        }
        Ok(trace)
    }

    /// (total, nonzero) weight counts over prunable layers; biases excluded.
    pub fn param_counts(&self) -> (usize, usize) {
        let mut total = 0;
        let mut nonzero = 0;
        for layer in self.layers.iter().filter(|l| l.is_prunable()) {
            total += layer.weight_count();
            nonzero += layer.nonzero_count();
        }
        (total, nonzero)
    }

    /// Bytes the weight and bias payload occupies on disk (f32 each).
    /// Masks are bookkeeping, not payload: a masked model stores its zeros
    /// explicitly and occupies the same payload bytes as its dense parent.
    pub fn payload_bytes(&self) -> u64 {
        let elements: usize = self
            .layers
            .iter()
            .map(|l| l.weight_count() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum();
        elements as u64 * 4
    }

    /// Forward multiply-accumulate FLOPs (2 per MAC) for a single input.
    /// Pooling and activation FLOPs are ignored.
    pub fn flops(&self) -> Result<u64, (usize, String)> {
        let (c, h, w) = self.input_shape;
        let mut shape = Shape::Chw(c, h, w);
        let mut flops = 0u64;
        for (i, layer) in self.layers.iter().enumerate() {
            let next = shape.apply(&layer.kind).map_err(|e| (i, e))?;
            match (layer.kind, next) {
                (LayerKind::Conv2d { out_channels, in_channels, kernel_size, .. }, Shape::Chw(_, oh, ow)) => {
                    flops += 2
                        * (kernel_size * kernel_size * in_channels * out_channels * oh * ow) as u64;
                }
                (LayerKind::Linear { out_features, in_features }, _) => {
                    flops += 2 * (in_features * out_features) as u64;
                }
                _ => {}
            }
            shape = next;
        }
        Ok(flops)
    }
}
