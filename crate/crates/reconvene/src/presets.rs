//! Named model shapes with seeded Kaiming initialization.

use reconvene_core::graph::{LayerKind, LayerSpec, ModelGraph};
use reconvene_core::init::fresh_layer;

pub const PRESETS: [&str; 4] = ["vgg16-cifar", "vgg11-cifar", "resnet20-shape-sequentialized", "toy4"];

/// Build a preset by name. `None` for unknown names.
pub fn build(name: &str, seed: u64) -> Option<ModelGraph> {
    match name {
        "vgg16-cifar" => Some(vgg(
            &[
                Some(64), Some(64), None,
                Some(128), Some(128), None,
                Some(256), Some(256), Some(256), None,
                Some(512), Some(512), Some(512), None,
                Some(512), Some(512), Some(512), None,
            ],
            seed,
        )),
        "vgg11-cifar" => Some(vgg(
            &[
                Some(64), None,
                Some(128), None,
                Some(256), Some(256), None,
                Some(512), Some(512), None,
                Some(512), Some(512), None,
            ],
            seed,
        )),
        "resnet20-shape-sequentialized" => Some(resnet20_shape(seed)),
        "toy4" => Some(toy4(seed)),
        _ => None,
    }
}

/// VGG-style: `Some(c)` is a 3x3 conv to `c` channels + ReLU, `None` is a
/// 2x2 maxpool. Ends with flatten + 10-way linear head.
fn vgg(stages: &[Option<usize>], seed: u64) -> ModelGraph {
    let mut layers = Vec::new();
    let mut channels = 3usize;
    let mut spatial = 32usize;
    for stage in stages {
        match stage {
            Some(out) => {
                layers.push(fresh_layer(
                    LayerKind::Conv2d { out_channels: *out, in_channels: channels, kernel_size: 3, stride: 1, padding: 1 },
                    seed,
                    layers.len(),
                ));
                layers.push(LayerSpec::parameterless(LayerKind::Relu));
                channels = *out;
            }
            None => {
                layers.push(LayerSpec::parameterless(LayerKind::MaxPool2d { kernel_size: 2, stride: 2 }));
                spatial /= 2;
            }
        }
    }
    layers.push(LayerSpec::parameterless(LayerKind::Flatten));
    layers.push(fresh_layer(
        LayerKind::Linear { out_features: 10, in_features: channels * spatial * spatial },
        seed,
        layers.len(),
    ));
    finish(layers, (3, 32, 32), seed)
}

/// ResNet-20's layer shapes laid out sequentially (no skip connections):
/// 3 stages of 3x3 convs at 16/32/64 channels on CIFAR geometry, global
/// pooling, 10-way head. Parameter count ~0.27M like the original.
fn resnet20_shape(seed: u64) -> ModelGraph {
    let mut layers = Vec::new();
    let push_conv = |layers: &mut Vec<LayerSpec>, out: usize, inp: usize, stride: usize| {
        layers.push(fresh_layer(
            LayerKind::Conv2d { out_channels: out, in_channels: inp, kernel_size: 3, stride, padding: 1 },
            seed,
            layers.len(),
        ));
        layers.push(LayerSpec::parameterless(LayerKind::Relu));
    };
    push_conv(&mut layers, 16, 3, 1);
    for _ in 0..6 {
        push_conv(&mut layers, 16, 16, 1);
    }
    push_conv(&mut layers, 32, 16, 2);
    for _ in 0..5 {
        push_conv(&mut layers, 32, 32, 1);
    }
    push_conv(&mut layers, 64, 32, 2);
    for _ in 0..5 {
        push_conv(&mut layers, 64, 64, 1);
    }
    layers.push(LayerSpec::parameterless(LayerKind::MaxPool2d { kernel_size: 8, stride: 8 }));
    layers.push(LayerSpec::parameterless(LayerKind::Flatten));
    layers.push(fresh_layer(LayerKind::Linear { out_features: 10, in_features: 64 }, seed, layers.len()));
    finish(layers, (3, 32, 32), seed)
}

/// Small 4-conv net for ablation runs: 16x16 inputs, 10 classes.
fn toy4(seed: u64) -> ModelGraph {
    let mut layers = Vec::new();
    for (out, inp, pool) in [(16usize, 3usize, true), (32, 16, true), (64, 32, true), (256, 64, true)] {
        layers.push(fresh_layer(
            LayerKind::Conv2d { out_channels: out, in_channels: inp, kernel_size: 3, stride: 1, padding: 1 },
            seed,
            layers.len(),
        ));
        layers.push(LayerSpec::parameterless(LayerKind::Relu));
        if pool {
            layers.push(LayerSpec::parameterless(LayerKind::MaxPool2d { kernel_size: 2, stride: 2 }));
        }
    }
    layers.push(LayerSpec::parameterless(LayerKind::Flatten));
    layers.push(fresh_layer(LayerKind::Linear { out_features: 10, in_features: 256 }, seed, layers.len()));
    finish(layers, (3, 16, 16), seed)
}

fn finish(layers: Vec<LayerSpec>, input_shape: (usize, usize, usize), seed: u64) -> ModelGraph {
    let graph = ModelGraph { layers, input_shape, class_count: 10, seed_provenance: seed };
    debug_assert!(graph.validate().is_ok());
    graph
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESETS {
            let g = build(name, 7).unwrap();
            assert!(g.validate().is_ok(), "{name}");
        }
        assert!(build("nonesuch", 7).is_none());
    }

    #[test]
    fn vgg16_parameter_count_matches_published_size() {
        let g = build("vgg16-cifar", 0).unwrap();
        let (total, _) = g.param_counts();
        assert_eq!(total, 14_715_584);
        // ~56 MB at 4 bytes/weight
        assert!((total * 4) as f64 / 1e6 > 56.0);
    }

    #[test]
    fn resnet20_shape_parameter_count() {
        let g = build("resnet20-shape-sequentialized", 0).unwrap();
        let (total, _) = g.param_counts();
        assert!((260_000..280_000).contains(&total), "got {total}");
    }

    #[test]
    fn presets_are_seed_deterministic() {
        assert_eq!(build("toy4", 3), build("toy4", 3));
        assert_ne!(build("toy4", 3), build("toy4", 4));
    }
}
