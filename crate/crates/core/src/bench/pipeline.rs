use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::dataset::{prepare, FlightRecord};
use crate::error::{Error, Result};
use crate::koopman::{train, KoopmanModel, TrainConfig, TrainOutcome};
use crate::parallel::Execution;
use crate::plant::generate_flights;

pub fn execution(cfg: &ExperimentConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

pub fn generate_data(cfg: &ExperimentConfig) -> Result<Vec<FlightRecord>> {
    generate_flights(&cfg.plant, &cfg.data, cfg.seed, execution(cfg))
}

/// Untrained model with the normaliser fit on the training records.
pub fn initial_model(records: &[FlightRecord], cfg: &ExperimentConfig) -> Result<KoopmanModel> {
    let (norm, ..) = prepare(records, cfg.split)?;
    KoopmanModel::init(&cfg.model, norm, cfg.seed)
}

pub fn train_on(records: &[FlightRecord], cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let (norm, tr, va, _) = prepare(records, cfg.split)?;
    let init = KoopmanModel::init(&cfg.model, norm, cfg.seed)?;
    let tc = TrainConfig { seed: cfg.seed, exec: execution(cfg), ..cfg.train };
    train(&init, &tr, &va, &tc)
}

/// Run record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("parallel_feature".to_string(), cfg!(feature = "parallel").to_string());
        Manifest {
            command: command.to_string(),
            seed: cfg.seed,
            config: cfg.to_kv(),
            versions,
            timings_s: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(self)?)
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
