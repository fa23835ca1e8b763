//! Deterministic Kaiming initialization, dense and mask-preserving.
//!
//! Every random stream is keyed by `(seed, layer index)` so layers can be
//! reinitialized in any order and still reproduce the sequential bit pattern.

use alloc::vec;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::LayerSpec;

/// RNG stream for one layer of one model.
pub fn layer_rng(seed: u64, layer_index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(layer_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"reconv-k");
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw via Box-Muller. `libm` keeps this bit-stable across
/// platforms.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // uniform in (0, 1]: never 0 so ln() stays finite
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Kaiming-normal sample: zero mean, variance `2 / fan_in` (ReLU gain,
/// fan-in mode).
pub fn kaiming_sample(rng: &mut ChaCha8Rng, fan_in: usize) -> f32 {
    debug_assert!(fan_in > 0);
    (standard_normal(rng) * libm::sqrt(2.0 / fan_in as f64)) as f32
}

/// Fill every weight of `layer` with fresh Kaiming samples; any mask is
/// dropped and the bias is reset to zero.
pub fn reinit_dense(layer: &LayerSpec, seed: u64, layer_index: usize) -> LayerSpec {
    let mut out = layer.clone();
    let fan_in = match layer.kind.fan_in() {
        Some(f) => f,
        None => return out,
    };
    let mut rng = layer_rng(seed, layer_index);
    if let Some(w) = out.weights.as_mut() {
        for v in w.data.iter_mut() {
            *v = kaiming_sample(&mut rng, fan_in);
        }
    }
    out.mask = None;
    if let Some(b) = out.bias.as_mut() {
        for v in b.iter_mut() {
            *v = 0.0;
        }
    }
    out
}

/// Fresh Kaiming samples at surviving (bit = 1) positions only; masked
/// positions stay exactly 0 and the mask support is preserved. The bias is
/// reset to zero. Draws happen only for kept positions, in ascending element
/// order.
pub fn reinit_sparse(layer: &LayerSpec, seed: u64, layer_index: usize) -> LayerSpec {
    let mut out = layer.clone();
    let (fan_in, mask) = match (layer.kind.fan_in(), &layer.mask) {
        (Some(f), Some(m)) => (f, m.clone()),
        _ => return out,
    };
    let mut rng = layer_rng(seed, layer_index);
    if let Some(w) = out.weights.as_mut() {
        for (i, v) in w.data.iter_mut().enumerate() {
            *v = if mask.get(i) { kaiming_sample(&mut rng, fan_in) } else { 0.0 };
        }
    }
    if let Some(b) = out.bias.as_mut() {
        for v in b.iter_mut() {
            *v = 0.0;
        }
    }
    out
}

/// Build a dense Kaiming-initialized layer for `kind` with a zero bias.
pub fn fresh_layer(kind: crate::graph::LayerKind, seed: u64, layer_index: usize) -> LayerSpec {
    match kind.weight_shape() {
        Some(shape) => {
            let count: usize = shape.iter().product();
            let layer = LayerSpec {
                kind,
                weights: Some(crate::graph::WeightTensor::new(shape, vec![0.0; count])),
                bias: Some(vec![0.0; kind.out_units().unwrap_or(0)]),
                mask: None,
            };
            reinit_dense(&layer, seed, layer_index)
        }
        None => LayerSpec::parameterless(kind),
    }
}
