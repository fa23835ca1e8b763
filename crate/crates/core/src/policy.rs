//! Ablation policies expressed as transformations of a prune plan, so every
//! variant shares the same rectifier code path.

use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::graph::ModelGraph;
use crate::init::layer_rng;
use crate::prune::layer_stats;
use crate::sensitivity::{build_plan, plan_channels, LayerSparsityStats, PlanEntry, PrunePlan};

/// Which layers receive structured pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Sensitivity-gated structured pruning of resilient layers.
    #[default]
    Reconvene,
    /// Unstructured pruning only; no structural change.
    Upai,
    /// Structured pruning of every conv layer, sensitivity ignored.
    SpaiAll,
    /// Sensitivity flags flipped: structured pruning of sensitive layers.
    Inverted,
    /// Random sensitivity assignment.
    Random,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Reconvene, Policy::Upai, Policy::SpaiAll, Policy::Inverted, Policy::Random];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Reconvene => "reconvene",
            Policy::Upai => "upai",
            Policy::SpaiAll => "spai_all",
            Policy::Inverted => "inverted",
            Policy::Random => "random",
        }
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reconvene" => Ok(Policy::Reconvene),
            "upai" => Ok(Policy::Upai),
            "spai_all" => Ok(Policy::SpaiAll),
            "inverted" => Ok(Policy::Inverted),
            "random" => Ok(Policy::Random),
            other => Err(alloc::format!("unknown policy '{other}' (expected reconvene|upai|spai_all|inverted|random)")),
        }
    }
}

impl core::fmt::Display for Policy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sensitive-layer probability for the random policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RandomMode {
    /// Probability equals the fraction of sensitive conv layers in the true
    /// sensitivity plan, so the count matches in expectation and only the
    /// placement varies.
    #[default]
    MatchedCount,
    /// Independent fair coin per conv layer.
    FairCoin,
}

impl FromStr for RandomMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matched_count" => Ok(RandomMode::MatchedCount),
            "fair_coin" => Ok(RandomMode::FairCoin),
            other => Err(alloc::format!("unknown random mode '{other}'")),
        }
    }
}

/// Every layer sensitive: the pipeline reduces to unstructured pruning plus
/// sparse reinitialization.
pub fn plan_upai(graph: &ModelGraph) -> Result<PrunePlan, CoreError> {
    let base = build_plan(graph)?;
    Ok(PrunePlan {
        global_sparsity: base.global_sparsity,
        entries: base
            .entries
            .into_iter()
            .map(|e| PlanEntry { sensitive: true, channels_after: e.channels_before, ..e })
            .collect(),
    })
}

/// Every prunable conv layer treated as resilient regardless of its
/// classification.
pub fn plan_spai_all(graph: &ModelGraph) -> Result<PrunePlan, CoreError> {
    let stats = layer_stats(graph)?;
    let base = build_plan(graph)?;
    Ok(PrunePlan {
        global_sparsity: base.global_sparsity,
        entries: base
            .entries
            .into_iter()
            .map(|e| {
                let stat = stat_for(&stats, e.layer);
                if stat.is_conv {
                    PlanEntry { sensitive: false, channels_after: plan_channels(stat), ..e }
                } else {
                    e
                }
            })
            .collect(),
    })
}

/// Flip the sensitivity flags of conv entries. Newly resilient layers get
/// channel targets from their own sparsity; formerly resilient layers are
/// restored to full channels. Linear layers stay sensitive.
pub fn plan_inverted(plan: &PrunePlan, stats: &[LayerSparsityStats]) -> PrunePlan {
    PrunePlan {
        global_sparsity: plan.global_sparsity,
        entries: plan
            .entries
            .iter()
            .map(|e| {
                let stat = stat_for(stats, e.layer);
                if !stat.is_conv {
                    return *e;
                }
                let sensitive = !e.sensitive;
                PlanEntry {
                    sensitive,
                    channels_after: if sensitive { e.channels_before } else { plan_channels(stat) },
                    ..*e
                }
            })
            .collect(),
    }
}

/// Randomly assign conv layers as sensitive; resilient layers get channel
/// targets from their own sparsity. Deterministic per seed.
pub fn plan_random(graph: &ModelGraph, seed: u64, mode: RandomMode) -> Result<PrunePlan, CoreError> {
    let stats = layer_stats(graph)?;
    let base = build_plan(graph)?;
    let conv_entries: Vec<&PlanEntry> =
        base.entries.iter().filter(|e| stat_for(&stats, e.layer).is_conv).collect();
    let prob = match mode {
        RandomMode::FairCoin => 0.5,
        RandomMode::MatchedCount => {
            if conv_entries.is_empty() {
                0.5
            } else {
                conv_entries.iter().filter(|e| e.sensitive).count() as f64 / conv_entries.len() as f64
            }
        }
    };
    let mut rng = layer_rng(seed, usize::MAX);
    Ok(PrunePlan {
        global_sparsity: base.global_sparsity,
        entries: base
            .entries
            .iter()
            .map(|e| {
                let stat = stat_for(&stats, e.layer);
                if !stat.is_conv {
                    return *e;
                }
                let sensitive = rng.gen::<f64>() < prob;
                PlanEntry {
                    sensitive,
                    channels_after: if sensitive { e.channels_before } else { plan_channels(stat) },
                    ..*e
                }
            })
            .collect(),
    })
}

/// Dispatch on the policy name. `seed` is consumed only by the random
/// policy.
pub fn plan_for_policy(graph: &ModelGraph, policy: Policy, seed: u64, mode: RandomMode) -> Result<PrunePlan, CoreError> {
    match policy {
        Policy::Reconvene => build_plan(graph),
        Policy::Upai => plan_upai(graph),
        Policy::SpaiAll => plan_spai_all(graph),
        Policy::Inverted => {
            let stats = layer_stats(graph)?;
            Ok(plan_inverted(&build_plan(graph)?, &stats))
        }
        Policy::Random => plan_random(graph, seed, mode),
    }
}

fn stat_for<'a>(stats: &'a [LayerSparsityStats], layer: usize) -> &'a LayerSparsityStats {
    stats.iter().find(|s| s.layer_index == layer).expect("plan entry has matching stats")
}
