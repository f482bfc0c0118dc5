use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn murmur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_murmur")).args(args).env("RUST_LOG", "warn").output().expect("spawn murmur")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(command: &str, config: &Path, data: &Path, out: &Path) -> Output {
    murmur(&[
        command,
        "--config",
        config.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ])
}

fn assert_ok(o: &Output, what: &str) {
    assert!(o.status.success(), "{what} failed: {}\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn synth(dir: &Path, patients: usize, extra: &[&str]) {
    let n = patients.to_string();
    let mut args = vec!["synth", "--out", dir.to_str().unwrap(), "--patients", &n];
    args.extend_from_slice(extra);
    assert_ok(&murmur(&args), "synth");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seeed = 3\n").unwrap();
    let o = run("stats", &cfg, dir.path(), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "heldout_fraction = 1.5\n").unwrap();
    let o = run("stats", &cfg, dir.path(), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("stats", &smoke_config(), &dir.path().join("nowhere"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn evaluate_before_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    synth(&data, 20, &[]);
    assert_ok(&run("prepare", &smoke_config(), &data, &out), "prepare");
    let o = run("evaluate", &smoke_config(), &data, &out);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing model artifacts"));
}

#[test]
fn defaults_parse() {
    let o = murmur(&["defaults"]);
    assert_ok(&o, "defaults");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("defaults.toml");
    fs::write(&cfg, &o.stdout).unwrap();
    let data = dir.path().join("data");
    synth(&data, 20, &[]);
    assert_ok(&run("stats", &cfg, &data, &dir.path().join("out")), "stats with printed defaults");
}

#[test]
fn smoke_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    synth(&data, 20, &[]);
    let cfg = smoke_config();
    for command in ["stats", "prepare", "train-dbres", "train-fusion", "evaluate"] {
        assert_ok(&run(command, &cfg, &data, &out), command);
    }
    for f in ["reports/dbres.json", "reports/fusion.json", "reports/baseline.txt", "predictions/heldout_fusion.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let first: Vec<Vec<u8>> = ["reports/dbres.json", "reports/fusion.json", "predictions/heldout_dbres.csv", "manifests/evaluate.json"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();

    // rerun from the recorded manifest
    let manifest = out.join("manifests/evaluate.json");
    let copy = dir.path().join("evaluate-manifest.json");
    fs::copy(&manifest, &copy).unwrap();
    assert_ok(&murmur(&["evaluate", "--config", copy.to_str().unwrap()]), "evaluate from manifest");
    let second: Vec<Vec<u8>> = ["reports/dbres.json", "reports/fusion.json", "predictions/heldout_dbres.csv", "manifests/evaluate.json"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    assert_eq!(first, second);

    let unlabeled = dir.path().join("new");
    synth(&unlabeled, 4, &["--unlabeled", "--seed", "9"]);
    let o = murmur(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--data-dir",
        unlabeled.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_ok(&o, "predict");
    let csv = fs::read_to_string(out.join("predictions/predict_fusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("patient_id,label,"));
}
