use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::experiment::{
    run_eval_model, run_horizon_sweep, run_stabilize, run_track, sweep_csv, test_records, ControllerKind,
};
use super::pipeline::{generate_data, train_on, write_file, Manifest};
use crate::dataset::{load_dir, write_dir};
use crate::error::{Error, Result};
use crate::koopman::{write_loss_log, Checkpoint, CheckpointMeta};

#[derive(Debug, Parser)]
#[command(name = "dkmpc", version, about = "Deep Koopman MPC experiments for a simulated quadrotor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = key_value)]
    overrides: Vec<(String, String)>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Force sequential execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate synthetic flights and write them as CSV.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a Koopman model on a CSV flight directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Open-loop rollout accuracy on the held-out records.
    EvalModel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Closed-loop step-schedule stabilization.
    Stabilize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// dk-mpc, nmpc, or both.
        #[arg(long, default_value = "dk-mpc")]
        controller: String,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Closed-loop tracking of the smooth reference.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "dk-mpc")]
        controller: String,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Accuracy and solve time over prediction horizons.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in &c.overrides {
        cfg.set(k, v)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.sequential {
        cfg.parallel = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn controllers(s: &str) -> Result<Vec<ControllerKind>> {
    if s == "both" {
        Ok(vec![ControllerKind::DkMpc, ControllerKind::Nmpc])
    } else {
        Ok(vec![ControllerKind::parse(s)?])
    }
}

fn closed_loop_command(
    name: &str,
    common: &Common,
    checkpoint: &Path,
    controller: &str,
    duration: Option<f64>,
) -> Result<()> {
    let start = Instant::now();
    let mut cfg = load_config(common)?;
    let kinds = controllers(controller)?;
    if let Some(d) = duration {
        if name == "stabilize" {
            cfg.stabilize_duration = d;
        } else {
            cfg.track_duration = d;
        }
        cfg.validate()?;
    }
    let model = Checkpoint::load(checkpoint)?.model;
    let mut manifest = Manifest::new(name, &cfg);
    for kind in kinds {
        let t0 = Instant::now();
        let (traj, metrics) =
            if name == "stabilize" { run_stabilize(&model, &cfg, kind)? } else { run_track(&model, &cfg, kind)? };
        let dir = common.out.join(kind.name());
        write_file(&dir.join("trajectory.csv"), &traj.to_csv())?;
        write_file(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
        write_file(&dir.join("metrics.csv"), &metrics.accuracy_csv())?;
        manifest.timings_s.insert(kind.name().to_string(), t0.elapsed().as_secs_f64());
        manifest.outputs.push(format!("{}/", kind.name()));
        if let Some(why) = &traj.aborted {
            eprintln!("{}: run aborted early: {why}", kind.name());
        }
        println!(
            "{} {}: R² = {}, median solve {} ms",
            name,
            kind.name(),
            metrics.r2_mean.map_or("n/a".into(), |v| format!("{v:.4}")),
            metrics.solve_median_ms.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
    }
    manifest.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
    manifest.write(&common.out)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common } => {
            let start = Instant::now();
            let cfg = load_config(&common)?;
            let records = generate_data(&cfg)?;
            write_dir(&records, &common.out.join("data"))?;
            let mut m = Manifest::new("generate-data", &cfg);
            m.outputs.push("data/".into());
            m.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
            m.write(&common.out)?;
            println!("wrote {} flights to {}", records.len(), common.out.join("data").display());
        }
        Command::Train { common, data, epochs } => {
            let start = Instant::now();
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let records = load_dir(&data)?;
            let out = train_on(&records, &cfg)?;
            let last = out.log.last();
            let meta = CheckpointMeta {
                seed: cfg.seed,
                epoch: out.best_epoch,
                train_total: out.log.get(out.best_epoch.wrapping_sub(1)).map(|e| e.train.total),
                val_total: out.log.get(out.best_epoch.wrapping_sub(1)).map(|e| e.val.total),
                architecture: Some(cfg.model.clone()),
            };
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            Checkpoint { model: out.best.clone(), meta: meta.clone() }.save(&common.out.join("checkpoint.json"))?;
            let final_meta = CheckpointMeta {
                epoch: out.log.len(),
                train_total: last.map(|e| e.train.total),
                val_total: last.map(|e| e.val.total),
                ..meta
            };
            Checkpoint { model: out.model.clone(), meta: final_meta }.save(&common.out.join("final.json"))?;
            out.best.normalizer.save(&common.out.join("normalizer.json"))?;
            write_loss_log(&common.out.join("losses.csv"), &out.log)?;
            let mut m = Manifest::new("train", &cfg);
            m.outputs =
                vec!["checkpoint.json".into(), "final.json".into(), "normalizer.json".into(), "losses.csv".into()];
            m.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
            m.write(&common.out)?;
            for e in &out.log {
                println!("epoch {:3}  train {:.6e}  val {:.6e}", e.epoch, e.train.total, e.val.total);
            }
        }
        Command::EvalModel { common, data, checkpoint } => {
            let start = Instant::now();
            let cfg = load_config(&common)?;
            let records = load_dir(&data)?;
            let model = Checkpoint::load(&checkpoint)?.model;
            let test = test_records(&records, &cfg)?;
            let metrics = run_eval_model(&model, &test, cfg.eval_window)?;
            write_file(&common.out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
            write_file(&common.out.join("metrics.csv"), &metrics.accuracy_csv())?;
            let mut m = Manifest::new("eval-model", &cfg);
            m.outputs = vec!["metrics.json".into(), "metrics.csv".into()];
            m.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
            m.write(&common.out)?;
            for (c, r) in metrics.channels.iter().zip(&metrics.r2) {
                println!("{c}: R² = {}", r.map_or("n/a".into(), |v| format!("{v:.4}")));
            }
        }
        Command::Stabilize { common, checkpoint, controller, duration } => {
            closed_loop_command("stabilize", &common, &checkpoint, &controller, duration)?
        }
        Command::Track { common, checkpoint, controller, duration } => {
            closed_loop_command("track", &common, &checkpoint, &controller, duration)?
        }
        Command::Sweep { common, checkpoint } => {
            let start = Instant::now();
            let cfg = load_config(&common)?;
            let model = Checkpoint::load(&checkpoint)?.model;
            let rows = run_horizon_sweep(&model, &cfg);
            write_file(&common.out.join("sweep.csv"), &sweep_csv(&rows))?;
            write_file(&common.out.join("sweep.json"), &serde_json::to_string_pretty(&rows)?)?;
            let mut m = Manifest::new("sweep", &cfg);
            m.outputs = vec!["sweep.csv".into(), "sweep.json".into()];
            m.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
            m.write(&common.out)?;
            print!("{}", sweep_csv(&rows));
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("H={} {}: {}", r.horizon, r.controller.name(), r.error.as_deref().unwrap_or(""));
            }
        }
    }
    Ok(())
}

/// Entry point shared by the binary and the tests. Returns the exit code:
/// 0 on success, 1 on usage errors, 2 on runtime failures.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
