//! End-to-end runs of the `pfdiff` binary on small settings.

use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
case = "case6ww"
seed = 3
[train]
epochs = 15
hidden_width = 32
time_dim = 16
[sampler]
n_samples = 40
batch_size = 16
[bench]
sizes = [10, 20, 40]
[capacity]
widths = [8, 16]
epochs = 3
"#;

fn pfdiff(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_pfdiff"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "exp.toml"])
        .args(args)
        .output()
        .expect("binary runs");
    out.status.code().expect("exit code")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    assert_eq!(pfdiff(dir.path(), &["gen-data", "--out", "data", "--n-samples", "120"]), 0);
    assert_eq!(pfdiff(dir.path(), &["train", "--data", "data", "--out", "model"]), 0);
    dir
}

#[test]
fn pipeline_runs_and_reproduces() {
    let dir = setup();
    let d = dir.path();
    for f in ["data/dataset.csv", "data/norm.json", "data/meta.json", "data/manifest.json", "model/checkpoint.json", "model/train_log.csv"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    let sample = |out: &str| {
        pfdiff(d, &["sample", "--data", "data", "--checkpoint", "model/checkpoint.json", "--out", out, "--eta", "0"])
    };
    let files = ["samples.csv", "residuals.json", "manifest.json"];
    assert_eq!(sample("s1"), 0);
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(d.join("s1").join(f)).unwrap()).collect();
    assert_eq!(sample("s1"), 0);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(d.join("s1").join(f)).unwrap(), bytes, "{f} differs");
    }
    assert_eq!(sample("s2"), 0);
    assert_eq!(fs::read(d.join("s2/samples.csv")).unwrap(), first[0]);
    assert!(d.join("s1/timing.json").is_file());

    assert_eq!(pfdiff(d, &["eval", "--data", "data", "--samples", "s1", "--out", "ev"]), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ev/fidelity.json")).unwrap()).unwrap();
    assert_eq!(report["w1"].as_array().unwrap().len(), 24);
    assert!(d.join("ev/hist_theta_6.csv").is_file());
    assert!(d.join("ev/scatter_V_3__theta_3.csv").is_file());

    // Millisecond timings of tiny batches can miss the linearity bar (exit 3);
    // the files are written either way.
    let code = pfdiff(d, &["bench", "--data", "data", "--checkpoint", "model/checkpoint.json", "--out", "b"]);
    assert!(code == 0 || code == 3, "bench exited with {code}");
    assert!(d.join("b/bench_summary.json").is_file());
    let bench = fs::read_to_string(d.join("b/bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 7);
    assert!(bench.starts_with("method,n_samples,steps,seconds"));

    assert_eq!(pfdiff(d, &["capacity-sweep", "--data", "data", "--out", "cap"]), 0);
    assert_eq!(fs::read_to_string(d.join("cap/capacity.csv")).unwrap().lines().count(), 7);

    // regenerating the dataset is bit-identical
    assert_eq!(pfdiff(d, &["gen-data", "--out", "data2", "--n-samples", "120"]), 0);
    assert_eq!(fs::read(d.join("data/dataset.csv")).unwrap(), fs::read(d.join("data2/dataset.csv")).unwrap());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = setup();
    let d = dir.path();
    let ck = "model/checkpoint.json";
    assert_eq!(pfdiff(d, &["sample", "--data", "data", "--checkpoint", ck, "--out", "x", "--eta", "2"]), 2);
    assert_eq!(pfdiff(d, &["sample", "--data", "data", "--checkpoint", ck, "--out", "x", "--n-samples", "0"]), 2);
    assert_eq!(pfdiff(d, &["sample", "--checkpoint", ck, "--out", "x"]), 2);
    assert_eq!(pfdiff(d, &["sample", "--data", "data", "--checkpoint", ck, "--out", "x", "--ddim-steps", "1"]), 2);

    // a model bound to other statistics
    assert_eq!(pfdiff(d, &["gen-data", "--out", "other", "--n-samples", "50", "--seed", "99"]), 0);
    assert_eq!(pfdiff(d, &["sample", "--data", "other", "--checkpoint", ck, "--out", "x"]), 2);

    // tampered samples are refused by eval
    assert_eq!(pfdiff(d, &["sample", "--data", "data", "--checkpoint", ck, "--out", "s"]), 0);
    let csv = d.join("s/samples.csv");
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push_str(&vec!["0"; 24].join(","));
    text.push('\n');
    fs::write(&csv, text).unwrap();
    assert_eq!(pfdiff(d, &["eval", "--data", "data", "--samples", "s", "--out", "e"]), 2);

    // an unreachable load range exhausts the scenario budget
    fs::write(d.join("wide.toml"), "[data]\nload_scale_range = [30.0, 40.0]\nn_samples = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pfdiff"))
        .current_dir(d)
        .env("RUST_LOG", "off")
        .args(["--config", "wide.toml", "gen-data", "--out", "w"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    assert_eq!(pfdiff(d, &["bench", "--data", "data", "--checkpoint", ck, "--out", "b", "--n-samples", "0"]), 2);
}
