//! Pruning sensitivity evaluation: classify each prunable layer as sensitive
//! or resilient against the global average sparsity and emit the structured
//! channel plan.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::graph::ModelGraph;
use crate::prune::layer_stats;

/// Per-layer zero/total counts and sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsityStats {
    pub layer_index: usize,
    /// Conv output channels (or linear output features).
    pub n_channels: usize,
    pub n_total: usize,
    pub n_zero: usize,
    /// `S_l = n_zero / n_total`.
    pub sparsity: f64,
    /// Conv layers are eligible for structured pruning; linear layers never
    /// are.
    pub is_conv: bool,
}

/// Sensitivity classification plus target channel count for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: usize,
    pub sensitive: bool,
    pub channels_before: usize,
    pub channels_after: usize,
}

/// Sensitivity classification per layer plus target channel counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub global_sparsity: f64,
    pub entries: Vec<PlanEntry>,
}

impl PrunePlan {
    /// True when no resilient layer sheds channels.
    pub fn is_noop(&self) -> bool {
        self.entries.iter().all(|e| e.channels_after == e.channels_before)
    }
}

/// Options for the statistics feeding Eq.-style classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensitivityOptions {
    /// Include linear-layer parameters when computing the global average
    /// sparsity. Linear layers are never structurally pruned either way.
    pub include_linear_in_global: bool,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions { include_linear_in_global: true }
    }
}

/// Weighted global sparsity: `Σ n_zero / Σ n_total` over the given layers
/// (a model-level ratio, not the mean of per-layer ratios).
pub fn global_sparsity(stats: &[LayerSparsityStats]) -> Result<f64, CoreError> {
    if stats.is_empty() {
        return Err(CoreError::EmptyStats);
    }
    let zero: usize = stats.iter().map(|s| s.n_zero).sum();
    let total: usize = stats.iter().map(|s| s.n_total).sum();
    if total == 0 {
        return Err(CoreError::EmptyStats);
    }
    Ok(zero as f64 / total as f64)
}

/// Sensitive iff `S_l < S_Avg`; equality classifies as resilient.
pub fn classify(stat: &LayerSparsityStats, s_avg: f64) -> bool {
    stat.sparsity < s_avg
}

/// Channel count a resilient layer keeps:
/// `max(1, n_channels − ⌈n_channels × S_l⌉)`.
pub fn plan_channels(stat: &LayerSparsityStats) -> usize {
    let removed = libm::ceil(stat.n_channels as f64 * stat.sparsity) as usize;
    stat.n_channels.saturating_sub(removed).max(1)
}

/// Build the full prune plan for a masked graph: per-layer stats, global
/// sparsity, sensitivity flags, and target channel counts. Linear layers are
/// always marked sensitive.
pub fn build_plan(graph: &ModelGraph) -> Result<PrunePlan, CoreError> {
    build_plan_with(graph, SensitivityOptions::default())
}

pub fn build_plan_with(graph: &ModelGraph, opts: SensitivityOptions) -> Result<PrunePlan, CoreError> {
    let stats = layer_stats(graph)?;
    let global_stats: Vec<_> = if opts.include_linear_in_global {
        stats.clone()
    } else {
        stats.iter().copied().filter(|s| s.is_conv).collect()
    };
    let s_avg = global_sparsity(&global_stats)?;
    let entries = stats
        .iter()
        .map(|stat| {
            let sensitive = !stat.is_conv || classify(stat, s_avg);
            PlanEntry {
                layer: stat.layer_index,
                sensitive,
                channels_before: stat.n_channels,
                channels_after: if sensitive { stat.n_channels } else { plan_channels(stat) },
            }
        })
        .collect();
    Ok(PrunePlan { global_sparsity: s_avg, entries })
}
