use std::path::Path;
use std::time::Instant;

use koopman_mpc::bench::cli::run;
use koopman_mpc::bench::{initial_model, ExperimentConfig};
use koopman_mpc::dataset::load_dir;
use koopman_mpc::koopman::Checkpoint;

const SMALL: [&str; 7] = [
    "data.records=6",
    "data.duration=2",
    "model.hidden=16,16",
    "stabilize.duration=1",
    "track.duration=1",
    "sweep.horizons=5,10",
    "sweep.duration=0.5",
];

fn dkmpc(cmd: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut argv = vec!["dkmpc".to_string(), cmd.to_string(), "-o".into(), out.display().to_string()];
    for kv in SMALL {
        argv.push("--set".into());
        argv.push(kv.into());
    }
    argv.extend(extra.iter().map(|s| s.to_string()));
    run(argv)
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(["dkmpc", "fly-to-the-moon"]), 1);
    assert_eq!(run(["dkmpc", "train", "-o", "x", "--data", "x", "--set", "nonsense"]), 1);
}

#[test]
fn unknown_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(["dkmpc", "generate-data", "-o", dir.path().to_str().unwrap(), "--set", "no.such=1"]), 2);
}

#[test]
fn zero_epochs_keeps_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(dkmpc("generate-data", out, &[]), 0);
    let data = out.join("data");
    assert_eq!(dkmpc("train", out, &["--data", data.to_str().unwrap(), "--epochs", "0"]), 0);

    let mut cfg = ExperimentConfig::default();
    for kv in SMALL {
        let (k, v) = kv.split_once('=').unwrap();
        cfg.set(k, v).unwrap();
    }
    let init = initial_model(&load_dir(&data).unwrap(), &cfg).unwrap();
    let saved = Checkpoint::load(&out.join("checkpoint.json")).unwrap().model;
    let a: Vec<f64> = init.params().iter().flat_map(|p| p.values().to_vec()).collect();
    let b: Vec<f64> = saved.params().iter().flat_map(|p| p.values().to_vec()).collect();
    assert_eq!(a, b);
    assert_eq!(init.normalizer, saved.normalizer);
}

#[test]
fn small_pipeline_completes() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let data = out.join("data");
    let ckpt = out.join("checkpoint.json");
    let (d, c) = (data.to_str().unwrap(), ckpt.to_str().unwrap());
    assert_eq!(dkmpc("generate-data", out, &[]), 0);
    assert_eq!(dkmpc("train", out, &["--data", d, "--epochs", "2"]), 0);
    assert_eq!(dkmpc("eval-model", out, &["--data", d, "--checkpoint", c]), 0);
    assert_eq!(dkmpc("stabilize", out, &["--checkpoint", c, "--controller", "both"]), 0);
    assert_eq!(dkmpc("track", out, &["--checkpoint", c, "--controller", "nmpc"]), 0);
    assert_eq!(dkmpc("sweep", out, &["--checkpoint", c]), 0);
    for f in [
        "losses.csv",
        "metrics.csv",
        "metrics.json",
        "sweep.csv",
        "manifest.json",
        "nmpc/trajectory.csv",
        "dk-mpc/metrics.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let losses = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.conf");
    let shipped = ExperimentConfig::load(&path).unwrap();
    assert_eq!(shipped.render(), ExperimentConfig::default().render());
}
