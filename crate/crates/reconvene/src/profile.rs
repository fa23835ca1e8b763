//! Static metrics (parameters, payload bytes, FLOPs) and single-threaded
//! CPU forward-latency measurement, plus the compression/speedup ratios.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use reconvene_core::graph::ModelGraph;
use reconvene_core::init::layer_rng;
use reconvene_core::nn::Runtime;
use reconvene_core::CoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub format_version: u32,
    pub param_total: u64,
    pub param_nonzero: u64,
    /// Weight + bias payload bytes (f32); mask bytes excluded so that a
    /// masked model reports the same storage as its dense parent.
    pub storage_bytes: u64,
    /// 2 x multiply-accumulates; pooling/activation ignored.
    pub flops: u64,
    pub input_shape: (usize, usize, usize),
    pub batch_size: usize,
    pub latency_samples_ms: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_mean_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_std_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_median_ms: Option<f64>,
    /// Best-effort peak resident set (VmHWM), linux only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_rss_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    /// dense storage_bytes / pruned storage_bytes
    pub compression: f64,
    /// dense mean latency / pruned mean latency, when both were timed
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    /// pruned accuracy - dense accuracy, when both were supplied
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_delta: Option<f64>,
}

/// Static metrics only; no timing, fully deterministic.
pub fn profile_static(graph: &ModelGraph) -> Result<ProfileReport, CoreError> {
    let report = graph.validate();
    if !report.is_ok() {
        return Err(CoreError::InvalidGraph(format!("{} violations", report.violations.len())));
    }
    let (total, nonzero) = graph.param_counts();
    let flops = graph.flops().map_err(|(layer, detail)| CoreError::ShapeMismatch { layer, detail })?;
    Ok(ProfileReport {
        format_version: 1,
        param_total: total as u64,
        param_nonzero: nonzero as u64,
        storage_bytes: graph.payload_bytes(),
        flops,
        input_shape: graph.input_shape,
        batch_size: 0,
        latency_samples_ms: Vec::new(),
        latency_mean_ms: None,
        latency_std_ms: None,
        latency_median_ms: None,
        // static reports stay byte-reproducible; rss is only meaningful
        // (and only recorded) for timed runs
        peak_rss_bytes: None,
    })
}

/// Static metrics plus `samples` timed forward passes after `warmup`
/// untimed ones, on synthetic inputs drawn deterministically from `seed`.
/// Timing is strictly sequential on the calling thread.
pub fn profile(
    graph: &ModelGraph,
    batch: usize,
    warmup: usize,
    samples: usize,
    seed: u64,
) -> Result<ProfileReport, CoreError> {
    if batch == 0 || samples == 0 {
        return Err(CoreError::InvalidConfig(String::from("batch and samples must be positive")));
    }
    let mut report = profile_static(graph)?;
    report.batch_size = batch;

    let runtime: Runtime<f32> = Runtime::from_graph(graph)?;
    let (c, h, w) = graph.input_shape;
    let mut rng = layer_rng(seed, 4_000_000);
    let input: Vec<f32> = (0..batch * c * h * w).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();

    for _ in 0..warmup {
        runtime.forward(&input, batch, false)?;
    }
    let mut samples_ms = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t0 = Instant::now();
        let (logits, _) = runtime.forward(&input, batch, false)?;
        let dt = t0.elapsed();
        std::hint::black_box(&logits);
        samples_ms.push(dt.as_secs_f64() * 1e3);
    }
    let mean = samples_ms.iter().sum::<f64>() / samples as f64;
    let var = samples_ms.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / samples as f64;
    let mut sorted = samples_ms.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if samples % 2 == 1 {
        sorted[samples / 2]
    } else {
        (sorted[samples / 2 - 1] + sorted[samples / 2]) / 2.0
    };
    report.latency_samples_ms = samples_ms;
    report.latency_mean_ms = Some(mean);
    report.latency_std_ms = Some(var.sqrt());
    report.latency_median_ms = Some(median);
    report.peak_rss_bytes = peak_rss();
    Ok(report)
}

/// Ratios per the dense/pruned convention; accuracy delta only when both
/// accuracies are given.
pub fn compare(
    dense: &ProfileReport,
    pruned: &ProfileReport,
    acc_dense: Option<f64>,
    acc_pruned: Option<f64>,
) -> Result<ComparisonReport, CoreError> {
    if dense.input_shape != pruned.input_shape {
        return Err(CoreError::InvalidConfig(format!(
            "input shapes differ: {:?} vs {:?}",
            dense.input_shape, pruned.input_shape
        )));
    }
    if dense.batch_size != pruned.batch_size {
        return Err(CoreError::InvalidConfig(format!(
            "batch sizes differ: {} vs {}",
            dense.batch_size, pruned.batch_size
        )));
    }
    if pruned.storage_bytes == 0 {
        return Err(CoreError::InvalidConfig(String::from("pruned model has no parameters")));
    }
    let speedup = match (dense.latency_mean_ms, pruned.latency_mean_ms) {
        (Some(d), Some(p)) if p > 0.0 => Some(d / p),
        _ => None,
    };
    let accuracy_delta = match (acc_dense, acc_pruned) {
        (Some(d), Some(p)) => Some(p - d),
        _ => None,
    };
    Ok(ComparisonReport {
        format_version: 1,
        compression: dense.storage_bytes as f64 / pruned.storage_bytes as f64,
        speedup,
        accuracy_delta,
    })
}

/// VmHWM from /proc/self/status, in bytes.
fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn static_metrics_are_deterministic_and_match_graph() {
        let g = presets::build("toy4", 1).unwrap();
        let a = profile_static(&g).unwrap();
        let b = profile_static(&g).unwrap();
        assert_eq!(a.storage_bytes, b.storage_bytes);
        assert_eq!(a.flops, b.flops);
        let (total, nonzero) = g.param_counts();
        assert_eq!(a.param_total, total as u64);
        assert_eq!(a.param_nonzero, nonzero as u64);
        assert!(a.flops > 0);
    }

    #[test]
    fn self_comparison_is_unity() {
        let g = presets::build("toy4", 2).unwrap();
        let a = profile(&g, 1, 1, 5, 0).unwrap();
        let b = profile(&g, 1, 1, 5, 0).unwrap();
        let cmp = compare(&a, &b, Some(0.5), Some(0.5)).unwrap();
        assert_eq!(cmp.compression, 1.0);
        let s = cmp.speedup.unwrap();
        assert!(s > 0.2 && s < 5.0, "self-speedup {s} outside noise band");
        assert_eq!(cmp.accuracy_delta, Some(0.0));
    }

    #[test]
    fn mean_is_arithmetic_mean_of_samples() {
        let g = presets::build("toy4", 3).unwrap();
        let r = profile(&g, 1, 0, 7, 1).unwrap();
        assert_eq!(r.latency_samples_ms.len(), 7);
        let mean = r.latency_samples_ms.iter().sum::<f64>() / 7.0;
        assert!((r.latency_mean_ms.unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn compare_rejects_shape_mismatch() {
        let a = profile_static(&presets::build("toy4", 1).unwrap()).unwrap();
        let b = profile_static(&presets::build("vgg11-cifar", 1).unwrap()).unwrap();
        assert!(compare(&a, &b, None, None).is_err());
    }
}
