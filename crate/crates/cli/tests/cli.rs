//! End-to-end runs of the `simreweight` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[simulator]
n_scenarios = 2

[simulator.ranges]
grid_rows = 5
grid_cols = 5
horizon = 72

[simulator.real]
grid_rows = 5
grid_cols = 5
horizon = 96
hotspot_centers = [[2, 2]]

[dataset]
l_in = 12
l_token = 6
l_out = 3
stride = 6

[model]
d_model = 8
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
cnn_channels = 2
mlp_hidden = 8

[train]
epochs = 2
batch_size = 8

[reweight]
t1 = 4
t_max = 6
delta = 2
monitor_every = 2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_simreweight"));
    c.env("SIMREWEIGHT_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    bin().args(args).output().expect("binary runs").status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    Fixture { _dir: dir, root, config }
}

/// simulate, train, reweight, evaluate into `tag`; returns the output root.
fn pipeline(f: &Fixture, tag: &str) -> PathBuf {
    let out = f.root.join(tag);
    let (data, ck, rw) = (out.join("data"), out.join("train"), out.join("reweight"));
    let cfg = s(&f.config);
    run(&["simulate", "--config", cfg, "--out", s(&data)]);
    run(&["train", "--config", cfg, "--data", s(&data), "--out", s(&ck)]);
    run(&["reweight", "--config", cfg, "--data", s(&data), "--out", s(&rw), "--checkpoint", s(&ck)]);
    run(&["evaluate", "--checkpoint", s(&rw), "--data", s(&data), "--out", s(&out.join("metrics.json"))]);
    out
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let f = fixture();
    let a = pipeline(&f, "a");
    let b = pipeline(&f, "b");
    let names = files(&a);
    assert_eq!(names, files(&b));
    for must in [
        "data/manifest.json",
        "train/checkpoint.json",
        "train/epochs.csv",
        "reweight/weights.csv",
        "reweight/history.csv",
        "metrics.json",
    ] {
        assert!(names.contains(&PathBuf::from(must)), "missing {must}");
    }
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{} differs", n.display());
    }
    let weights = std::fs::read_to_string(a.join("reweight/weights.csv")).unwrap();
    assert!(weights.starts_with("sample_id,raw_w,sigmoid_w\n"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert!(report.get("wall_clock_secs").is_none());
    assert!(report["metrics"]["test"]["call"]["mae"].as_f64().unwrap() > 0.0);
}

#[test]
fn learned_weights_feed_back_into_training() {
    let f = fixture();
    let out = pipeline(&f, "p");
    let ck = out.join("weighted");
    run(&[
        "train",
        "--config",
        s(&f.config),
        "--data",
        s(&out.join("data")),
        "--out",
        s(&ck),
        "--sample-weights",
        s(&out.join("reweight/weights.csv")),
        "--weighting",
        "average",
    ]);
    let m = std::fs::read_to_string(ck.join("checkpoint.json")).unwrap();
    assert!(m.contains("\"weighting_mode\": \"average\""));
    assert_ne!(std::fs::read(ck.join("params.bin")).unwrap(), std::fs::read(out.join("train/params.bin")).unwrap());
}

#[test]
fn existing_outputs_are_skipped_unless_forced() {
    let f = fixture();
    let data = f.root.join("data");
    run(&["simulate", "--config", s(&f.config), "--out", s(&data)]);
    let manifest = data.join("manifest.json");
    std::fs::write(&manifest, "sentinel").unwrap();
    run(&["simulate", "--config", s(&f.config), "--out", s(&data)]);
    assert_eq!(std::fs::read_to_string(&manifest).unwrap(), "sentinel");
    run(&["simulate", "--config", s(&f.config), "--out", s(&data), "--force"]);
    assert_ne!(std::fs::read_to_string(&manifest).unwrap(), "sentinel");
}

#[test]
fn single_task_checkpoint_reports_one_task() {
    let f = fixture();
    let data = f.root.join("data");
    let ck = f.root.join("sms");
    let cfg = s(&f.config);
    run(&["simulate", "--config", cfg, "--out", s(&data)]);
    run(&["train", "--config", cfg, "--data", s(&data), "--out", s(&ck), "--single-task", "sms"]);
    let report = f.root.join("m.json");
    let out = run(&["evaluate", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&report), "--timing"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("SMS") || stdout.contains("Sms") || stdout.contains("sms"), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let test = v["metrics"]["test"].as_object().unwrap();
    assert_eq!(test.keys().collect::<Vec<_>>(), ["sms"]);
    assert!(v["wall_clock_secs"].as_f64().is_some());
}

#[test]
fn ablate_writes_reports_and_aggregate() {
    let f = fixture();
    let data = f.root.join("data");
    let out = f.root.join("ablate");
    let cfg = s(&f.config);
    run(&["simulate", "--config", cfg, "--out", s(&data)]);
    let args = [
        "ablate",
        "--config",
        cfg,
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--seeds",
        "0,1",
        "--variants",
        "full,no_spatial",
        "--jobs",
        "2",
    ];
    run(&args);
    for n in ["full_seed0.json", "full_seed1.json", "no_spatial_seed0.json", "no_spatial_seed1.json"] {
        assert!(out.join(n).exists(), "missing {n}");
    }
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(agg.starts_with("variant,metric,call,sms,net\n"));
    assert!(agg.contains("\nfull,") && agg.contains("\nno_spatial,"), "{agg}");
    // A rerun reuses the per-run reports and rebuilds the same aggregate.
    run(&args);
    assert_eq!(std::fs::read_to_string(out.join("aggregate.csv")).unwrap(), agg);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let f = fixture();
    let missing = f.root.join("nope");
    assert_eq!(code(&["simulate", "--set", "train.epochs=0", "--out", s(&missing)]), 2);
    assert_eq!(code(&["simulate", "--set", "train.no_such_key=1", "--out", s(&missing)]), 2);
    assert_eq!(code(&["train", "--data", s(&missing), "--out", s(&f.root.join("t"))]), 3);
    let data = f.root.join("data");
    run(&["simulate", "--config", s(&f.config), "--out", s(&data)]);
    let d = f.root.join("d");
    let diverge =
        ["train", "--config", s(&f.config), "--data", s(&data), "--out", s(&d), "--set", "train.learning_rate=1e200"];
    assert_eq!(code(&diverge), 4);
}

#[test]
fn gradcheck_passes() {
    let out = run(&["gradcheck", "--seeds", "2", "--coords", "5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst end-to-end"));
}
