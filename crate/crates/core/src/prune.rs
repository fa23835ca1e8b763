//! Global magnitude pruning at initialization and per-layer sparsity
//! statistics.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::graph::ModelGraph;
use crate::mask::SparsityMask;
use crate::policy::Policy;
use crate::sensitivity::LayerSparsityStats;

/// Unstructured pruner choice. Magnitude pruning is the shipped
/// implementation; the enum is the substitution point for other scorers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pruner {
    #[default]
    Magnitude,
}

impl FromStr for Pruner {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "magnitude" => Ok(Pruner::Magnitude),
            other => Err(alloc::format!("unknown pruner '{other}'")),
        }
    }
}

/// Pruning degree plus the knobs consumed by later pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of prunable weights to zero, in `[0, 1]`.
    pub p: f64,
    pub seed: u64,
    pub pruner: Pruner,
    pub policy: Policy,
}

impl PruneConfig {
    pub fn new(p: f64, seed: u64, policy: Policy) -> Result<Self, CoreError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CoreError::InvalidPruningDegree(p));
        }
        Ok(PruneConfig { p, seed, pruner: Pruner::Magnitude, policy })
    }
}

/// Global magnitude pruning: zero exactly `⌊p × total⌋` prunable weights,
/// chosen as the globally smallest by absolute value across all prunable
/// layers. Ties at the threshold break by ascending (layer index, flat
/// element index). Biases and non-prunable tensors are untouched; every
/// prunable layer receives a mask (all ones at `p = 0`).
pub fn magnitude_prune(graph: &ModelGraph, p: f64) -> Result<ModelGraph, CoreError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::InvalidPruningDegree(p));
    }
    let mut out = graph.clone();
    let total: usize = out.layers.iter().filter(|l| l.is_prunable()).map(|l| l.weight_count()).sum();
    let remove = libm::floor(p * total as f64) as usize;

    // full masks of ones first; the selection below clears bits
    for layer in out.layers.iter_mut().filter(|l| l.is_prunable()) {
        layer.mask = Some(SparsityMask::ones(layer.weight_count()));
    }
    if remove == 0 {
        return Ok(out);
    }

    let mut entries: Vec<(f32, u32, u32)> = Vec::with_capacity(total);
    for (li, layer) in graph.layers.iter().enumerate() {
        if !layer.is_prunable() {
            continue;
        }
        if let Some(w) = &layer.weights {
            for (ei, v) in w.data.iter().enumerate() {
                entries.push((v.abs(), li as u32, ei as u32));
            }
        }
    }
    let cmp = |a: &(f32, u32, u32), b: &(f32, u32, u32)| -> Ordering {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    if remove < entries.len() {
        entries.select_nth_unstable_by(remove, cmp);
    }
    for &(_, li, ei) in &entries[..remove] {
        let layer = &mut out.layers[li as usize];
        layer.weights.as_mut().expect("prunable layer has weights").data[ei as usize] = 0.0;
        layer.mask.as_mut().expect("mask installed above").set(ei as usize, false);
    }
    Ok(out)
}

/// Per-layer sparsity statistics over prunable layers. A layer without a
/// mask is dense (`S_l = 0`).
pub fn layer_stats(graph: &ModelGraph) -> Result<Vec<LayerSparsityStats>, CoreError> {
    let mut stats = Vec::new();
    for (li, layer) in graph.layers.iter().enumerate() {
        if !layer.is_prunable() {
            continue;
        }
        let n_total = layer.weight_count();
        if n_total == 0 {
            return Err(CoreError::EmptyLayer { layer: li });
        }
        let n_zero = n_total - layer.nonzero_count();
        stats.push(LayerSparsityStats {
            layer_index: li,
            n_channels: layer.kind.out_units().unwrap_or(0),
            n_total,
            n_zero,
            sparsity: n_zero as f64 / n_total as f64,
            is_conv: matches!(layer.kind, crate::graph::LayerKind::Conv2d { .. }),
        });
    }
    Ok(stats)
}
