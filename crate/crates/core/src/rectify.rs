//! Resilient layer rectification: structured channel pruning per the plan,
//! channel propagation through the graph, and full reinitialization of the
//! pruned model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::graph::{LayerKind, LayerSpec, ModelGraph, Shape, WeightTensor};
use crate::init::{reinit_dense, reinit_sparse};
use crate::sensitivity::PrunePlan;

/// Options controlling [`apply_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RectifyOptions {
    /// Reinitialize all surviving parameters (dense Kaiming for rectified
    /// layers, mask-preserving Kaiming for sensitive layers). Disabling this
    /// is for structural tests only.
    pub reinit: bool,
}

impl Default for RectifyOptions {
    fn default() -> Self {
        RectifyOptions { reinit: true }
    }
}

/// Shrink a conv layer to `channels_after` output channels. Removed channels
/// are the trailing indices; the result is dense (mask dropped) with the
/// bias truncated to match.
pub fn structured_prune_layer(layer: &LayerSpec, channels_after: usize) -> Result<LayerSpec, CoreError> {
    let LayerKind::Conv2d { out_channels, in_channels, kernel_size, stride, padding } = layer.kind else {
        return Err(CoreError::PlanMismatch(String::from("structured pruning applies to conv2d layers only")));
    };
    if channels_after == 0 || channels_after > out_channels {
        return Err(CoreError::ChannelCountOutOfRange { layer: 0, requested: channels_after, available: out_channels });
    }
    let row = in_channels * kernel_size * kernel_size;
    let weights = layer.weights.as_ref().map(|w| {
        WeightTensor::new(
            alloc::vec![channels_after, in_channels, kernel_size, kernel_size],
            w.data[..channels_after * row].to_vec(),
        )
    });
    let bias = layer.bias.as_ref().map(|b| b[..channels_after].to_vec());
    Ok(LayerSpec {
        kind: LayerKind::Conv2d { out_channels: channels_after, in_channels, kernel_size, stride, padding },
        weights,
        bias,
        mask: None,
    })
}

/// Shrink downstream input dimensions to match upstream channel-count
/// changes. A following conv2d drops trailing input-channel slices of its
/// weights (and mask, with nnz recomputed); a following linear layer drops
/// the weight columns of removed channels' spatial positions.
pub fn propagate_channels(graph: &ModelGraph) -> Result<ModelGraph, CoreError> {
    let mut out = graph.clone();
    let (c0, h0, w0) = out.input_shape;
    let mut shape = Shape::Chw(c0, h0, w0);
    // (c, h, w) feeding the most recent flatten, for linear column mapping
    let mut flat_origin: Option<(usize, usize, usize)> = None;

    for i in 0..out.layers.len() {
        let layer = &mut out.layers[i];
        match layer.kind {
            LayerKind::Conv2d { in_channels, kernel_size, .. } => {
                let Shape::Chw(c, _, _) = shape else {
                    return Err(CoreError::ShapeReconciliation { layer: i, detail: String::from("conv2d fed by flat activations") });
                };
                if in_channels != c {
                    if c > in_channels {
                        return Err(CoreError::ShapeReconciliation {
                            layer: i,
                            detail: format!("incoming channels grew from {in_channels} to {c}"),
                        });
                    }
                    shrink_conv_inputs(layer, c, kernel_size)?;
                }
            }
            LayerKind::Linear { in_features, .. } => {
                let Shape::Flat(n) = shape else {
                    return Err(CoreError::ShapeReconciliation { layer: i, detail: String::from("linear fed by spatial activations") });
                };
                if in_features != n {
                    if n > in_features {
                        return Err(CoreError::ShapeReconciliation {
                            layer: i,
                            detail: format!("incoming features grew from {in_features} to {n}"),
                        });
                    }
                    let (c, h, w) = flat_origin.ok_or_else(|| CoreError::ShapeReconciliation {
                        layer: i,
                        detail: String::from("linear input shrank without a preceding flatten"),
                    })?;
                    shrink_linear_inputs(layer, i, c, h * w)?;
                }
            }
            LayerKind::Flatten => {
                if let Shape::Chw(c, h, w) = shape {
                    flat_origin = Some((c, h, w));
                }
            }
            LayerKind::Relu | LayerKind::MaxPool2d { .. } => {}
        }
        shape = shape
            .apply(&out.layers[i].kind)
            .map_err(|detail| CoreError::ShapeReconciliation { layer: i, detail })?;
    }
    Ok(out)
}

fn shrink_conv_inputs(layer: &mut LayerSpec, new_in: usize, kernel_size: usize) -> Result<(), CoreError> {
    let LayerKind::Conv2d { out_channels, ref mut in_channels, .. } = layer.kind else {
        unreachable!()
    };
    let k2 = kernel_size * kernel_size;
    let old_row = *in_channels * k2;
    let new_row = new_in * k2;
    // surviving flat indices: the leading new_in channel slices of each row
    let indices: Vec<usize> = (0..out_channels)
        .flat_map(|oc| (0..new_row).map(move |j| oc * old_row + j))
        .collect();
    if let Some(w) = layer.weights.as_mut() {
        w.data = indices.iter().map(|&ix| w.data[ix]).collect();
        w.shape = alloc::vec![out_channels, new_in, kernel_size, kernel_size];
    }
    if let Some(m) = layer.mask.as_mut() {
        *m = m.gather(&indices);
    }
    *in_channels = new_in;
    Ok(())
}

fn shrink_linear_inputs(layer: &mut LayerSpec, layer_index: usize, new_c: usize, spatial: usize) -> Result<(), CoreError> {
    let LayerKind::Linear { out_features, ref mut in_features } = layer.kind else {
        unreachable!()
    };
    if *in_features % spatial != 0 {
        return Err(CoreError::ShapeReconciliation {
            layer: layer_index,
            detail: format!("in_features {in_features} not divisible by spatial size {spatial}"),
        });
    }
    let old_features = *in_features;
    let new_features = new_c * spatial;
    // flatten layout is channel-major: feature f belongs to channel f / spatial
    let indices: Vec<usize> = (0..out_features)
        .flat_map(|of| (0..new_features).map(move |j| of * old_features + j))
        .collect();
    if let Some(w) = layer.weights.as_mut() {
        w.data = indices.iter().map(|&ix| w.data[ix]).collect();
        w.shape = alloc::vec![out_features, new_features];
    }
    if let Some(m) = layer.mask.as_mut() {
        *m = m.gather(&indices);
    }
    *in_features = new_features;
    Ok(())
}

/// Apply the full rectification plan: structurally prune every resilient
/// layer, propagate channel changes, then reinitialize — dense Kaiming for
/// the rectified layers (fan-in taken from the final, propagated shape) and
/// mask-preserving Kaiming for the remaining sensitive layers. Reinit
/// streams are keyed by `(seed, layer index)`, so the result is
/// deterministic.
pub fn apply_plan(graph: &ModelGraph, plan: &PrunePlan, seed: u64, opts: RectifyOptions) -> Result<ModelGraph, CoreError> {
    check_plan(graph, plan)?;
    let mut out = graph.clone();
    for entry in &plan.entries {
        if entry.sensitive {
            continue;
        }
        out.layers[entry.layer] = structured_prune_layer(&out.layers[entry.layer], entry.channels_after)?;
    }
    let mut out = propagate_channels(&out)?;
    if opts.reinit {
        let resilient: Vec<usize> = plan.entries.iter().filter(|e| !e.sensitive).map(|e| e.layer).collect();
        for &li in &resilient {
            out.layers[li] = reinit_dense(&out.layers[li], seed, li);
        }
        for li in 0..out.layers.len() {
            if out.layers[li].mask.is_some() {
                out.layers[li] = reinit_sparse(&out.layers[li], seed, li);
            }
        }
    }
    Ok(out)
}

fn check_plan(graph: &ModelGraph, plan: &PrunePlan) -> Result<(), CoreError> {
    for entry in &plan.entries {
        let layer = graph
            .layers
            .get(entry.layer)
            .ok_or_else(|| CoreError::PlanMismatch(format!("entry references layer {} beyond graph", entry.layer)))?;
        if !layer.is_prunable() {
            return Err(CoreError::PlanMismatch(format!("entry references non-prunable layer {}", entry.layer)));
        }
        let units = layer.kind.out_units().unwrap_or(0);
        if entry.channels_before != units {
            return Err(CoreError::PlanMismatch(format!(
                "layer {}: plan expects {} channels, graph has {units}",
                entry.layer, entry.channels_before
            )));
        }
        if entry.channels_after == 0 || entry.channels_after > entry.channels_before {
            return Err(CoreError::PlanMismatch(format!(
                "layer {}: channels_after {} outside 1..={}",
                entry.layer, entry.channels_after, entry.channels_before
            )));
        }
        if entry.sensitive && entry.channels_after != entry.channels_before {
            return Err(CoreError::PlanMismatch(format!("layer {}: sensitive entry sheds channels", entry.layer)));
        }
        if !entry.sensitive && !matches!(layer.kind, LayerKind::Conv2d { .. }) {
            return Err(CoreError::PlanMismatch(format!("layer {}: only conv2d layers can be rectified", entry.layer)));
        }
    }
    Ok(())
}
