//! Exit codes, artifacts, and idempotence of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reconvene"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn genmodel(dir: &Path, preset: &str, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("{preset}-{seed}.rcv"));
    let o = run(&["genmodel", "--preset", preset, "--seed", &seed.to_string(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn prune_writes_model_plan_and_report_and_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 7);
    let out = dir.path().join("pruned.rcv");
    let report = dir.path().join("r.json");
    let plan = dir.path().join("p.json");
    let o = run(&[
        "prune", "--model", model.to_str().unwrap(), "--sparsity", "0.95", "--policy", "reconvene",
        "--seed", "7", "--out", out.to_str().unwrap(), "--report", report.to_str().unwrap(),
        "--plan", plan.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.exists() && report.exists() && plan.exists());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("policy=reconvene sparsity=0.95 compression="), "got: {stdout}");
    assert!(stdout.contains(" params="));
    let report_json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(report_json["config"]["seed"], 7);
    assert_eq!(report_json["config"]["policy"], "reconvene");
    assert!(report_json["comparison"]["compression"].as_f64().unwrap() > 1.0);
}

#[test]
fn invalid_sparsity_exits_1_and_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 1);
    let out = dir.path().join("x.rcv");
    let o = run(&[
        "prune", "--model", model.to_str().unwrap(), "--sparsity", "1.5", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--sparsity"));
    assert!(!out.exists());
}

#[test]
fn unknown_flag_and_unknown_policy_exit_1() {
    let o = run(&["prune", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 1);
    let o = run(&[
        "prune", "--model", model.to_str().unwrap(), "--sparsity", "0.5", "--policy", "nonesuch",
        "--out", dir.path().join("x.rcv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_model_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "prune", "--model", dir.path().join("absent.rcv").to_str().unwrap(), "--sparsity", "0.5",
        "--out", dir.path().join("x.rcv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_model_exits_2_and_invalid_graph_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.rcv");
    std::fs::write(&bad, b"not a container").unwrap();
    let o = run(&[
        "prune", "--model", bad.to_str().unwrap(), "--sparsity", "0.5",
        "--out", dir.path().join("x.rcv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    // structurally broken graph: serialize a model whose conv expects the
    // wrong input channel count
    use reconvene_core::graph::{LayerKind, LayerSpec, ModelGraph};
    use reconvene_core::init::fresh_layer;
    let graph = ModelGraph {
        layers: vec![
            fresh_layer(LayerKind::Conv2d { out_channels: 4, in_channels: 5, kernel_size: 3, stride: 1, padding: 1 }, 0, 0),
            LayerSpec::parameterless(LayerKind::Flatten),
            fresh_layer(LayerKind::Linear { out_features: 2, in_features: 4 * 16 }, 0, 2),
        ],
        input_shape: (3, 4, 4),
        class_count: 2,
        seed_provenance: 0,
    };
    let invalid = dir.path().join("invalid.rcv");
    reconvene::format::save_model(&graph, &invalid).unwrap();
    let o = run(&[
        "prune", "--model", invalid.to_str().unwrap(), "--sparsity", "0.5",
        "--out", dir.path().join("y.rcv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn zero_sparsity_no_reinit_preserves_weights() {
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 3);
    let out = dir.path().join("id.rcv");
    let o = run(&[
        "prune", "--model", model.to_str().unwrap(), "--sparsity", "0", "--policy", "reconvene",
        "--no-reinit", "--seed", "3", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let before = reconvene::format::load_model(&model).unwrap();
    let after = reconvene::format::load_model(&out).unwrap();
    for (a, b) in before.layers.iter().zip(after.layers.iter()) {
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
    }
}

#[test]
fn prune_is_idempotent_given_identical_flags() {
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 9);
    let mut bytes = Vec::new();
    for name in ["a.rcv", "b.rcv"] {
        let out = dir.path().join(name);
        let o = run(&[
            "prune", "--model", model.to_str().unwrap(), "--sparsity", "0.9", "--policy", "random",
            "--seed", "42", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn gendata_then_train_produces_history_and_models() {
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 2);
    let tr = dir.path().join("tr.rcv");
    let te = dir.path().join("te.rcv");
    let o = run(&[
        "gendata", "--classes", "10", "--shape", "3,16,16", "--noise", "1.0", "--seed", "5",
        "--train-count", "200", "--test-count", "80",
        "--out-train", tr.to_str().unwrap(), "--out-test", te.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let hist = dir.path().join("h.jsonl");
    let outm = dir.path().join("trained.rcv");
    let o = run(&[
        "train", "--model", model.to_str().unwrap(), "--data", tr.to_str().unwrap(),
        "--test", te.to_str().unwrap(), "--epochs", "2", "--lr", "0.01", "--batch", "32",
        "--seed", "1", "--history", hist.to_str().unwrap(), "--out", outm.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = std::fs::read_to_string(&hist).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i);
        assert!(v["train_loss"].as_f64().unwrap().is_finite());
    }
    assert!(reconvene::format::load_model(&outm).unwrap().validate().is_ok());

    // swapped splits are a validation error
    let o = run(&[
        "train", "--model", model.to_str().unwrap(), "--data", te.to_str().unwrap(),
        "--test", tr.to_str().unwrap(), "--epochs", "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn compare_sweep_emits_sorted_rows_for_all_policies() {
    let dir = tempfile::tempdir().unwrap();
    let model = genmodel(dir.path(), "toy4", 4);
    let report = dir.path().join("table.json");
    let o = run(&[
        "compare", "--model", model.to_str().unwrap(), "--sparsity", "0.5,0.9", "--seed", "4",
        "--report", report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 10); // 2 sparsities x 5 policies
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let key = |r: &serde_json::Value| {
            (r["sparsity"].as_f64().unwrap(), r["policy"].as_str().unwrap().to_string())
        };
        assert!(key(a) <= key(b), "rows not sorted");
    }
    // upai rows pin compression to exactly 1
    for row in rows {
        if row["policy"] == "upai" {
            assert_eq!(row["compression"].as_f64().unwrap(), 1.0);
        }
    }
}

#[test]
fn help_is_exit_0() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("prune"));
}
