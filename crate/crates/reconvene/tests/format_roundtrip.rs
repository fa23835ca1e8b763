//! Serialization round-trips, sibling-file reads, and storage arithmetic.

use proptest::prelude::*;
use reconvene::format::{
    load_dataset, load_model, payload_bytes_of_file, read_container, save_dataset, save_model,
};
use reconvene::presets;
use reconvene_core::graph::{LayerKind, LayerSpec, ModelGraph, WeightTensor};
use reconvene_core::mask::SparsityMask;
use reconvene_core::prune::magnitude_prune;
use reconvene_core::train::{Dataset, Split};

fn tmp(name: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(name).tempdir().unwrap()
}

#[test]
fn model_round_trip_is_identity() {
    let dir = tmp("rt");
    let graph = presets::build("toy4", 5).unwrap();
    let masked = magnitude_prune(&graph, 0.7).unwrap();
    for (name, g) in [("dense.rcv", &graph), ("masked.rcv", &masked)] {
        let path = dir.path().join(name);
        save_model(g, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(&loaded, g);
    }
}

#[test]
fn sibling_json_bin_files_load_like_the_container() {
    let dir = tmp("sib");
    let graph = magnitude_prune(&presets::build("toy4", 8).unwrap(), 0.5).unwrap();
    let container = dir.path().join("model.rcv");
    save_model(&graph, &container).unwrap();

    // split the container into model.json + model.bin by hand
    let bytes = std::fs::read(&container).unwrap();
    let mlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    std::fs::write(dir.path().join("model.json"), &bytes[8..8 + mlen]).unwrap();
    std::fs::write(dir.path().join("model.bin"), &bytes[8 + mlen..]).unwrap();

    let from_siblings = load_model(&dir.path().join("model.json")).unwrap();
    assert_eq!(from_siblings, graph);
}

#[test]
fn masked_model_file_payload_equals_dense_parent() {
    let dir = tmp("payload");
    let dense = presets::build("toy4", 2).unwrap();
    let masked = magnitude_prune(&dense, 0.95).unwrap();
    let dense_path = dir.path().join("dense.rcv");
    let masked_path = dir.path().join("masked.rcv");
    save_model(&dense, &dense_path).unwrap();
    save_model(&masked, &masked_path).unwrap();
    // parameter payload identical; the masked container itself is bigger
    // only by the mask bytes and manifest growth
    assert_eq!(payload_bytes_of_file(&dense_path).unwrap(), payload_bytes_of_file(&masked_path).unwrap());
    assert_eq!(payload_bytes_of_file(&dense_path).unwrap(), dense.payload_bytes());
}

#[test]
fn vgg16_file_size_tracks_parameter_bytes() {
    let dir = tmp("vgg");
    let g = presets::build("vgg16-cifar", 0).unwrap();
    let path = dir.path().join("vgg.rcv");
    save_model(&g, &path).unwrap();
    let file_len = std::fs::metadata(&path).unwrap().len();
    let payload = g.payload_bytes();
    assert!(payload > 4 * 14_715_584);
    // manifest overhead is tiny relative to ~59MB of weights
    assert!(file_len - payload < 20_000, "overhead {}", file_len - payload);
}

#[test]
fn dataset_round_trip_is_identity() {
    let dir = tmp("ds");
    let data = Dataset {
        inputs: (0..2 * 3 * 4 * 4).map(|i| i as f32 * 0.25 - 3.0).collect(),
        shape: (2, 3, 4, 4),
        labels: vec![1, 0],
        split: Split::Test,
    };
    let path = dir.path().join("d.rcv");
    save_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tmp("bad");
    let path = dir.path().join("x.rcv");
    std::fs::write(&path, [1, 2, 3]).unwrap();
    assert!(load_model(&path).is_err());

    // declared manifest longer than the file
    let mut bytes = vec![0u8; 8];
    bytes[..8].copy_from_slice(&(1_000u64).to_le_bytes());
    bytes.extend_from_slice(b"{}");
    std::fs::write(&path, bytes).unwrap();
    assert!(load_model(&path).is_err());

    // valid container, wrong type
    let data = Dataset { inputs: vec![0.0; 4], shape: (1, 1, 2, 2), labels: vec![0], split: Split::Train };
    save_dataset(&data, &path).unwrap();
    assert!(load_model(&path).is_err());
    assert!(read_container(&path).is_ok());
}

fn arbitrary_graph() -> impl Strategy<Value = ModelGraph> {
    (1usize..4, 2usize..6, 1usize..5, any::<u64>(), any::<bool>()).prop_map(
        |(c_in, convs, classes, seed, with_mask)| {
            let mut layers = Vec::new();
            let mut c = c_in;
            for i in 0..convs {
                let out = (i + 2) * 2;
                layers.push(reconvene_core::init::fresh_layer(
                    LayerKind::Conv2d { out_channels: out, in_channels: c, kernel_size: 3, stride: 1, padding: 1 },
                    seed,
                    layers.len(),
                ));
                layers.push(LayerSpec::parameterless(LayerKind::Relu));
                c = out;
            }
            layers.push(LayerSpec::parameterless(LayerKind::Flatten));
            layers.push(reconvene_core::init::fresh_layer(
                LayerKind::Linear { out_features: classes, in_features: c * 36 },
                seed,
                layers.len(),
            ));
            let g = ModelGraph { layers, input_shape: (c_in, 6, 6), class_count: classes, seed_provenance: seed };
            if with_mask {
                magnitude_prune(&g, 0.5).unwrap()
            } else {
                g
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_arbitrary_graphs(graph in arbitrary_graph()) {
        let dir = tmp("prop");
        let path = dir.path().join("g.rcv");
        save_model(&graph, &path).unwrap();
        prop_assert_eq!(load_model(&path).unwrap(), graph);
    }
}

#[test]
fn hand_built_weird_layer_round_trips() {
    // weights without bias, mask with ragged final byte
    let dir = tmp("weird");
    let graph = ModelGraph {
        layers: vec![
            LayerSpec::parameterless(LayerKind::Flatten),
            LayerSpec {
                kind: LayerKind::Linear { out_features: 3, in_features: 3 },
                weights: Some(WeightTensor::new(vec![3, 3], vec![0.0, 1.0, 0.0, -2.0, 0.0, 0.5, 0.0, 0.0, 4.0])),
                bias: None,
                mask: Some(SparsityMask::from_fn(9, |i| [1usize, 3, 5, 8].contains(&i))),
            },
        ],
        input_shape: (3, 1, 1),
        class_count: 3,
        seed_provenance: 0,
    };
    let path = dir.path().join("w.rcv");
    save_model(&graph, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), graph);
}
