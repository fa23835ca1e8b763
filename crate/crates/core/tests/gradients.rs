//! Gradient correctness against central finite differences and an
//! independently coded reference forward pass.

use rand::Rng;
use reconvene_core::graph::{LayerKind, LayerSpec, ModelGraph, WeightTensor};
use reconvene_core::init::{fresh_layer, layer_rng};
use reconvene_core::mask::SparsityMask;
use reconvene_core::nn::Runtime;

/// 2-conv + 1-linear toy net on 3x4x4 inputs, 3 classes.
fn toy_net(seed: u64) -> ModelGraph {
    let layers = vec![
        fresh_layer(
            LayerKind::Conv2d { out_channels: 4, in_channels: 3, kernel_size: 3, stride: 1, padding: 1 },
            seed,
            0,
        ),
        LayerSpec::parameterless(LayerKind::Relu),
        LayerSpec::parameterless(LayerKind::MaxPool2d { kernel_size: 2, stride: 2 }),
        fresh_layer(
            LayerKind::Conv2d { out_channels: 6, in_channels: 4, kernel_size: 3, stride: 1, padding: 1 },
            seed,
            3,
        ),
        LayerSpec::parameterless(LayerKind::Relu),
        LayerSpec::parameterless(LayerKind::Flatten),
        fresh_layer(LayerKind::Linear { out_features: 3, in_features: 6 * 2 * 2 }, seed, 6),
    ];
    let g = ModelGraph { layers, input_shape: (3, 4, 4), class_count: 3, seed_provenance: seed };
    assert!(g.validate().is_ok());
    g
}

fn random_batch(seed: u64, n: usize, elems: usize) -> (Vec<f64>, Vec<u32>) {
    let mut rng = layer_rng(seed, 99);
    let inputs = (0..n * elems).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..3u32)).collect();
    (inputs, labels)
}

fn loss_of(runtime: &Runtime<f64>, inputs: &[f64], labels: &[u32], batch: usize) -> f64 {
    let (logits, _) = runtime.forward(inputs, batch, false).unwrap();
    runtime.loss_and_dlogits(&logits, labels, batch).unwrap().0
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let graph = toy_net(11);
    let mut runtime: Runtime<f64> = Runtime::from_graph(&graph).unwrap();
    let (inputs, labels) = random_batch(5, 4, 3 * 4 * 4);

    let (logits, trace) = runtime.forward(&inputs, 4, true).unwrap();
    let (_, dlogits) = runtime.loss_and_dlogits(&logits, &labels, 4).unwrap();
    let grads = runtime.backward(&trace, &dlogits);

    let mut rng = layer_rng(123, 0);
    let param_layers = [0usize, 3, 6];
    let mut checked = 0;
    while checked < 100 {
        let li = param_layers[rng.gen_range(0..param_layers.len())];
        let wi = rng.gen_range(0..runtime.layers[li].weights.len());
        let h = 1e-6;
        let orig = runtime.layers[li].weights[wi];
        runtime.layers[li].weights[wi] = orig + h;
        let up = loss_of(&runtime, &inputs, &labels, 4);
        runtime.layers[li].weights[wi] = orig - h;
        let down = loss_of(&runtime, &inputs, &labels, 4);
        runtime.layers[li].weights[wi] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.weights[li][wi];
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-8 {
            // both effectively zero; not a useful probe
            continue;
        }
        let rel = (analytic - numeric).abs() / scale;
        assert!(rel < 1e-4, "layer {li} weight {wi}: analytic {analytic} vs numeric {numeric} (rel {rel})");
        checked += 1;
    }
}

#[test]
fn bias_gradients_match_finite_differences() {
    let graph = toy_net(21);
    let mut runtime: Runtime<f64> = Runtime::from_graph(&graph).unwrap();
    let (inputs, labels) = random_batch(6, 3, 3 * 4 * 4);
    let (logits, trace) = runtime.forward(&inputs, 3, true).unwrap();
    let (_, dlogits) = runtime.loss_and_dlogits(&logits, &labels, 3).unwrap();
    let grads = runtime.backward(&trace, &dlogits);
    for li in [0usize, 3, 6] {
        for bi in 0..runtime.layers[li].bias.len() {
            let h = 1e-6;
            let orig = runtime.layers[li].bias[bi];
            runtime.layers[li].bias[bi] = orig + h;
            let up = loss_of(&runtime, &inputs, &labels, 3);
            runtime.layers[li].bias[bi] = orig - h;
            let down = loss_of(&runtime, &inputs, &labels, 3);
            runtime.layers[li].bias[bi] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.bias[li][bi];
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!((analytic - numeric).abs() / scale < 1e-4);
        }
    }
}

#[test]
fn masked_positions_get_zero_gradients() {
    let mut graph = toy_net(31);
    let len = graph.layers[3].weight_count();
    let mask = SparsityMask::from_fn(len, |i| i % 3 != 0);
    {
        let layer = &mut graph.layers[3];
        for (i, v) in layer.weights.as_mut().unwrap().data.iter_mut().enumerate() {
            if !mask.get(i) {
                *v = 0.0;
            }
        }
        layer.mask = Some(mask.clone());
    }
    let runtime: Runtime<f64> = Runtime::from_graph(&graph).unwrap();
    let (inputs, labels) = random_batch(7, 4, 3 * 4 * 4);
    let (logits, trace) = runtime.forward(&inputs, 4, true).unwrap();
    let (_, dlogits) = runtime.loss_and_dlogits(&logits, &labels, 4).unwrap();
    let grads = runtime.backward(&trace, &dlogits);
    for i in 0..len {
        if !mask.get(i) {
            assert_eq!(grads.weights[3][i], 0.0);
        }
    }
    assert!(grads.weights[3].iter().any(|g| *g != 0.0));
}

#[test]
fn zero_input_zero_bias_gives_zero_conv_gradients() {
    let graph = toy_net(41);
    let runtime: Runtime<f64> = Runtime::from_graph(&graph).unwrap();
    let inputs = vec![0.0f64; 2 * 3 * 4 * 4];
    let labels = vec![0u32, 1];
    let (logits, trace) = runtime.forward(&inputs, 2, true).unwrap();
    let (_, dlogits) = runtime.loss_and_dlogits(&logits, &labels, 2).unwrap();
    let grads = runtime.backward(&trace, &dlogits);
    assert!(grads.weights[0].iter().all(|g| *g == 0.0));
    assert!(grads.weights[3].iter().all(|g| *g == 0.0));
}

#[test]
fn uniform_logits_give_ln_class_count_loss() {
    // single linear layer with zero weights -> uniform logits
    let graph = ModelGraph {
        layers: vec![
            LayerSpec::parameterless(LayerKind::Flatten),
            LayerSpec {
                kind: LayerKind::Linear { out_features: 10, in_features: 4 },
                weights: Some(WeightTensor::new(vec![10, 4], vec![0.0; 40])),
                bias: Some(vec![0.0; 10]),
                mask: None,
            },
        ],
        input_shape: (4, 1, 1),
        class_count: 10,
        seed_provenance: 0,
    };
    let runtime: Runtime<f64> = Runtime::from_graph(&graph).unwrap();
    let inputs = vec![0.3f64, -0.2, 0.9, 0.1];
    let (logits, _) = runtime.forward(&inputs, 1, false).unwrap();
    let (loss, _) = runtime.loss_and_dlogits(&logits, &[7], 1).unwrap();
    assert!((loss - (10.0f64).ln()).abs() < 1e-12);
}

// ---------------------------------------------------------------------------
// Independent reference forward pass: direct convolution, no im2col.
// ---------------------------------------------------------------------------

fn reference_forward(graph: &ModelGraph, input: &[f64], labels: &[u32], batch: usize) -> f64 {
    let (c0, h0, w0) = graph.input_shape;
    let mut act: Vec<Vec<f64>> = (0..batch)
        .map(|s| input[s * c0 * h0 * w0..(s + 1) * c0 * h0 * w0].to_vec())
        .collect();
    let mut shape = (c0, h0, w0);
    let mut flat = false;
    for layer in &graph.layers {
        match layer.kind {
            LayerKind::Conv2d { out_channels, in_channels, kernel_size, stride, padding } => {
                let (c, h, w) = shape;
                assert_eq!(c, in_channels);
                let oh = (h + 2 * padding - kernel_size) / stride + 1;
                let ow = (w + 2 * padding - kernel_size) / stride + 1;
                let wdata = &layer.weights.as_ref().unwrap().data;
                let bias = layer.bias.as_ref().unwrap();
                for x in act.iter_mut() {
                    let mut y = vec![0.0f64; out_channels * oh * ow];
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = bias[oc] as f64;
                                for ic in 0..in_channels {
                                    for ky in 0..kernel_size {
                                        for kx in 0..kernel_size {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                                continue;
                                            }
                                            let wv = wdata[((oc * in_channels + ic) * kernel_size + ky) * kernel_size + kx] as f64;
                                            acc += wv * x[(ic * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                                y[(oc * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                    *x = y;
                }
                shape = (out_channels, oh, ow);
            }
            LayerKind::Relu => {
                for x in act.iter_mut() {
                    for v in x.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            LayerKind::MaxPool2d { kernel_size, stride } => {
                let (c, h, w) = shape;
                let oh = (h - kernel_size) / stride + 1;
                let ow = (w - kernel_size) / stride + 1;
                for x in act.iter_mut() {
                    let mut y = vec![0.0f64; c * oh * ow];
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for ky in 0..kernel_size {
                                    for kx in 0..kernel_size {
                                        best = best.max(x[(ci * h + oy * stride + ky) * w + ox * stride + kx]);
                                    }
                                }
                                y[(ci * oh + oy) * ow + ox] = best;
                            }
                        }
                    }
                    *x = y;
                }
                shape = (c, oh, ow);
            }
            LayerKind::Flatten => {
                flat = true;
            }
            LayerKind::Linear { out_features, in_features } => {
                assert!(flat || shape.1 * shape.2 == 1);
                let wdata = &layer.weights.as_ref().unwrap().data;
                let bias = layer.bias.as_ref().unwrap();
                for x in act.iter_mut() {
                    assert_eq!(x.len(), in_features);
                    let mut y = vec![0.0f64; out_features];
                    for (o, yo) in y.iter_mut().enumerate() {
                        let mut acc = bias[o] as f64;
                        for i in 0..in_features {
                            acc += wdata[o * in_features + i] as f64 * x[i];
                        }
                        *yo = acc;
                    }
                    *x = y;
                }
            }
        }
    }
    // mean softmax cross-entropy
    let mut total = 0.0;
    for (s, logits) in act.iter().enumerate() {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        total += sum.ln() + max - logits[labels[s] as usize];
    }
    total / batch as f64
}

#[test]
fn loss_matches_reference_forward() {
    for seed in [1u64, 2, 3] {
        let graph = toy_net(seed);
        let runtime: Runtime<f64> = Runtime::from_graph(&graph).unwrap();
        let (inputs, labels) = random_batch(seed + 50, 5, 3 * 4 * 4);
        let mine = loss_of(&runtime, &inputs, &labels, 5);
        let reference = reference_forward(&graph, &inputs, &labels, 5);
        let rel = (mine - reference).abs() / reference.abs().max(1e-12);
        assert!(rel < 1e-5, "seed {seed}: {mine} vs reference {reference}");
    }
}
