//! Seeded synthetic image-classification data: one Gaussian prototype per
//! class, samples are prototype + noise. `noise` sets the difficulty.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use reconvene_core::init::layer_rng;
use reconvene_core::train::{Dataset, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub shape: (usize, usize, usize),
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { classes: 10, shape: (3, 16, 16), noise: 1.0, seed: 0 }
    }
}

/// Class prototypes: unit-variance Gaussian images, one per class, keyed by
/// the config seed alone so train and test splits share them.
fn prototypes(config: &SynthConfig) -> Vec<Vec<f32>> {
    let (c, h, w) = config.shape;
    let mut rng = layer_rng(config.seed, 1_000_000);
    (0..config.classes)
        .map(|_| (0..c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// Generate `n` samples. Labels are round-robin (balanced); sample noise is
/// keyed by (seed, split) so splits never share points.
pub fn generate(config: &SynthConfig, n: usize, split: Split) -> Dataset {
    let (c, h, w) = config.shape;
    let elems = c * h * w;
    let protos = prototypes(config);
    let stream = match split {
        Split::Train => 2_000_000,
        Split::Test => 3_000_000,
    };
    let mut rng = layer_rng(config.seed, stream);
    let mut inputs = Vec::with_capacity(n * elems);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % config.classes) as u32;
        let proto = &protos[label as usize];
        for &p in proto {
            let eps: f32 = StandardNormal.sample(&mut rng);
            inputs.push(p + config.noise * eps);
        }
        labels.push(label);
        let _ = rng.gen::<u32>(); // decouple adjacent samples' streams
    }
    Dataset { inputs, shape: (n, c, h, w), labels, split }
}
