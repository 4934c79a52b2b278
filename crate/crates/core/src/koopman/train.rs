use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{compute_loss_with, loss_and_grads, LossBreakdown, LossWeights, ModelGrads};
use super::model::KoopmanModel;
use crate::dataset::TripleSet;
use crate::error::{Error, Result};
use crate::nnet::{AdamConfig, AdamState, Tensor};
use crate::parallel::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Seeds the minibatch shuffle.
    pub seed: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Batch-size weighted mean of the minibatch losses seen during the epoch.
    pub train: LossBreakdown,
    /// Loss on the whole validation split after the epoch.
    pub val: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KoopmanModel,
    /// Model after the epoch with the lowest validation total (the input model
    /// when no epoch ran).
    pub best: KoopmanModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

fn per_tensor(g: &ModelGrads) -> Vec<&Tensor> {
    let mut out = Vec::new();
    for mg in [&g.encoder, &g.decoder, &g.a, &g.b] {
        for (w, b) in mg.weights.iter().zip(&mg.biases) {
            out.push(w);
            out.extend(b.as_ref());
        }
    }
    out
}

fn apply(model: &mut KoopmanModel, opt: &mut AdamState, g: &ModelGrads) -> Result<()> {
    let grads = per_tensor(g);
    let mut params = model.params_mut();
    for (p, g) in params.iter_mut().zip(&grads) {
        p.zero_grad();
        p.accumulate_grad(g.values())?;
    }
    opt.step(&mut params)
}

/// Jointly trains encoder, decoder, A and B with Adam on shuffled minibatches.
pub fn train(
    model: &KoopmanModel,
    train_set: &TripleSet,
    val_set: &TripleSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = model.clone();
    let mut opt = AdamState::for_params(cfg.adam, &model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    let w = cfg.weights;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for idx in order.chunks(cfg.batch_size) {
            let (x, u, xn) = train_set.gather(idx);
            let (loss, g) = loss_and_grads(&model, &x, &u, &xn, w, cfg.exec)?;
            if !loss.total.is_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            let k = idx.len() as f64;
            sums[0] += k * loss.recon;
            sums[1] += k * loss.linear;
            sums[2] += k * loss.stability;
            sums[3] += k * loss.l2_reg;
            apply(&mut model, &mut opt, &g)?;
        }
        let n = train_set.len() as f64;
        let train_loss = LossBreakdown::from_terms(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, w);
        let val = compute_loss_with(&model, &val_set.x, &val_set.u, &val_set.x_next, w, cfg.exec)?;
        if !train_loss.total.is_finite() || !val.total.is_finite() {
            return Err(Error::DivergenceDetected { epoch });
        }
        if val.total < best_val {
            best_val = val.total;
            best = model.clone();
            best_epoch = epoch;
        }
        log.push(EpochLog { epoch, train: train_loss, val });
    }
    Ok(TrainOutcome { model, best, best_epoch, log })
}

/// Per-epoch log as `epoch,recon,linear,stability,l2,total,val_total`.
pub fn render_loss_log(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,recon,linear,stability,l2,total,val_total\n");
    for e in log {
        s.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            e.epoch, e.train.recon, e.train.linear, e.train.stability, e.train.l2_reg, e.train.total, e.val.total
        ));
    }
    s
}

pub fn write_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(render_loss_log(log).as_bytes()).map_err(|e| Error::io(path, e))
}
