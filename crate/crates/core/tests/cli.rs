use std::path::Path;
use std::process::{Command, Output};

fn facetune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facetune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "[dataset]\nn = 32\nfeature_dim = 4\n[training]\nmax_rounds = 2\neval_samples = 8\n";

#[test]
fn validate_config_names_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), SMALL);
    let out = facetune(&["validate-config", &ok]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));

    let bad = write_config(dir.path(), "[degrpo]\ntau_keep = 2.0\n");
    let out = facetune(&["validate-config", &bad]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("degrpo.tau_keep"));
}

#[test]
fn gen_data_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("data");
    let out = facetune(&["gen-data", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["vocab.tsv", "annotations.tsv", "features.tsv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let features = std::fs::read_to_string(out_dir.join("features.tsv")).unwrap();
    assert_eq!(features.lines().count(), 32);
}

#[test]
fn train_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = facetune(&[
            "train",
            "--mode",
            "vanilla",
            "--config",
            &cfg,
            "--seed",
            "4",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["mode"], "vanilla");
        assert_eq!(summary["seed"], 4);
        assert!(out_dir.join("summary.json").is_file());
        assert!(out_dir.join("plot.csv").is_file());
        csvs.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}
