//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::reference::{parse_list, Lissajous, StepSchedule};
use crate::error::{Error, Result};
use crate::koopman::{Architecture, TrainConfig};
use crate::nnet::Activation;
use crate::plant::{ExcitationConfig, PlantParams};

/// Parses `key = value` lines; `#` starts a comment. Later keys win.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{k}: cannot parse `{v}`")))
}

fn triple(k: &str, v: &str) -> Result<[f64; 3]> {
    parse_list(v)?.try_into().map_err(|_| Error::Config(format!("{k}: expected three numbers")))
}

fn pair(k: &str, v: &str) -> Result<[f64; 2]> {
    parse_list(v)?.try_into().map_err(|_| Error::Config(format!("{k}: expected two numbers")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Everything an experiment needs. Defaults reproduce the shipped
/// `configs/default.conf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub parallel: bool,
    pub plant: PlantParams,
    pub data: ExcitationConfig,
    pub split: [f64; 3],
    pub model: Architecture,
    pub train: TrainConfig,
    pub horizon: usize,
    pub q_weight: f64,
    pub r_weight: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
    pub warm_start: bool,
    pub nmpc_max_outer: usize,
    pub nmpc_max_inner: usize,
    /// Per-step wall-clock budget applied to both controllers; `None` = unlimited.
    pub budget_ms: Option<f64>,
    /// Steps excluded from timing statistics.
    pub warmup_steps: usize,
    pub stabilize_duration: f64,
    pub stabilize: StepSchedule,
    pub track_duration: f64,
    pub track: Lissajous,
    pub sweep_horizons: Vec<usize>,
    pub sweep_duration: f64,
    pub eval_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            parallel: true,
            plant: PlantParams::default(),
            data: ExcitationConfig::default(),
            split: [0.7, 0.15, 0.15],
            model: Architecture::default(),
            train: TrainConfig::default(),
            horizon: 25,
            q_weight: 1.0,
            r_weight: 1e-3,
            u_min: -1.0,
            u_max: 1.0,
            qp_tolerance: 1e-5,
            qp_max_iterations: 1000,
            warm_start: true,
            nmpc_max_outer: 30,
            nmpc_max_inner: 200,
            budget_ms: Some(5.0),
            warmup_steps: 10,
            stabilize_duration: 12.0,
            stabilize: StepSchedule {
                initial: [0.0, 0.0, 2.0, 0.0],
                steps: vec![(1.0, [1.0, 0.0, 2.0, 0.0]), (4.0, [1.0, 1.0, 2.5, 0.0]), (8.0, [0.0, 0.0, 2.0, 0.0])],
            },
            track_duration: 20.0,
            track: Lissajous::default(),
            sweep_horizons: vec![5, 10, 15, 20, 25],
            sweep_duration: 10.0,
            eval_window: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_kv(&parse_kv(&text)?)
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut plant = BTreeMap::new();
        for (k, v) in kv {
            if let Some(pk) = k.strip_prefix("plant.") {
                plant.insert(pk.to_string(), v.clone());
                continue;
            }
            c.set(k, v)?;
        }
        if !plant.is_empty() {
            c.plant = PlantParams::from_kv(&plant)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Applies one key; `plant.*` keys are handled here too.
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let t = &mut self.train;
        match k {
            "seed" => self.seed = num(k, v)?,
            "parallel" => self.parallel = num(k, v)?,
            "data.records" => d.records = num(k, v)?,
            "data.duration" => d.duration = num(k, v)?,
            "data.dt" => d.dt = num(k, v)?,
            "data.center" => d.center = triple(k, v)?,
            "data.half_box" => d.half_box = triple(k, v)?,
            "data.yaw_amplitude" => d.yaw_amplitude = num(k, v)?,
            "data.hold" => d.hold = pair(k, v)?,
            "data.frequency" => d.frequency = pair(k, v)?,
            "data.reference_bandwidth" => d.reference_bandwidth = num(k, v)?,
            "data.perturbation" => d.perturbation = num(k, v)?,
            "data.perturbation_hold" => {
                let [a, b] = pair(k, v)?;
                d.perturbation_hold = [a as usize, b as usize];
            }
            "data.max_attempts" => d.max_attempts = num(k, v)?,
            "data.split" => self.split = triple(k, v)?,
            "inner.pos_kp" => d.inner.pos_kp = num(k, v)?,
            "inner.pos_kd" => d.inner.pos_kd = num(k, v)?,
            "inner.att_kp" => d.inner.att_kp = num(k, v)?,
            "inner.att_kd" => d.inner.att_kd = num(k, v)?,
            "inner.yaw_kp" => d.inner.yaw_kp = num(k, v)?,
            "inner.yaw_kd" => d.inner.yaw_kd = num(k, v)?,
            "inner.max_tilt" => d.inner.max_tilt = num(k, v)?,
            "inner.max_horizontal_acc" => d.inner.max_horizontal_acc = num(k, v)?,
            "inner.max_vertical_acc" => d.inner.max_vertical_acc = num(k, v)?,
            "model.hidden" => {
                self.model.hidden =
                    if v.is_empty() { Vec::new() } else { parse_list(v)?.iter().map(|x| *x as usize).collect() }
            }
            "model.latent" => self.model.latent = num(k, v)?,
            "model.activation" => {
                self.model.activation = match v {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    _ => return Err(Error::Config(format!("{k}: unknown activation `{v}`"))),
                }
            }
            "model.a_diagonal" => self.model.a_diagonal = num(k, v)?,
            "model.a_noise" => self.model.a_noise = num(k, v)?,
            "model.b_scale" => self.model.b_scale = num(k, v)?,
            "train.epochs" => t.epochs = num(k, v)?,
            "train.batch_size" => t.batch_size = num(k, v)?,
            "train.learning_rate" => t.adam.learning_rate = num(k, v)?,
            "train.beta1" => t.adam.beta1 = num(k, v)?,
            "train.beta2" => t.adam.beta2 = num(k, v)?,
            "train.epsilon" => t.adam.epsilon = num(k, v)?,
            "train.lambda_recon" => t.weights.recon = num(k, v)?,
            "train.lambda_linear" => t.weights.linear = num(k, v)?,
            "train.lambda_stability" => t.weights.stability = num(k, v)?,
            "train.lambda_l2" => t.weights.l2 = num(k, v)?,
            "mpc.horizon" => self.horizon = num(k, v)?,
            "mpc.q" => self.q_weight = num(k, v)?,
            "mpc.r" => self.r_weight = num(k, v)?,
            "mpc.u_min" => self.u_min = num(k, v)?,
            "mpc.u_max" => self.u_max = num(k, v)?,
            "mpc.tolerance" => self.qp_tolerance = num(k, v)?,
            "mpc.max_iterations" => self.qp_max_iterations = num(k, v)?,
            "mpc.warm_start" => self.warm_start = num(k, v)?,
            "nmpc.max_outer" => self.nmpc_max_outer = num(k, v)?,
            "nmpc.max_inner" => self.nmpc_max_inner = num(k, v)?,
            "control.budget_ms" => {
                let b: f64 = num(k, v)?;
                self.budget_ms = (b > 0.0).then_some(b);
            }
            "control.warmup_steps" => self.warmup_steps = num(k, v)?,
            "stabilize.duration" => self.stabilize_duration = num(k, v)?,
            "stabilize.initial" => {
                self.stabilize.initial =
                    parse_list(v)?.try_into().map_err(|_| Error::Config(format!("{k}: expected x,y,z,phi")))?
            }
            "stabilize.steps" => self.stabilize.steps = StepSchedule::parse_steps(v)?,
            "track.duration" => self.track_duration = num(k, v)?,
            "track.center" => self.track.center = triple(k, v)?,
            "track.amplitude" => self.track.amplitude = triple(k, v)?,
            "track.frequency" => self.track.frequency = triple(k, v)?,
            "track.phase" => self.track.phase = triple(k, v)?,
            "track.yaw_amplitude" => self.track.yaw_amplitude = num(k, v)?,
            "track.yaw_frequency" => self.track.yaw_frequency = num(k, v)?,
            "sweep.horizons" => self.sweep_horizons = parse_list(v)?.iter().map(|x| *x as usize).collect(),
            "sweep.duration" => self.sweep_duration = num(k, v)?,
            "eval.window" => self.eval_window = num(k, v)?,
            _ => {
                if let Some(pk) = k.strip_prefix("plant.") {
                    let mut kv = self.plant.to_kv();
                    kv.insert(pk.to_string(), v.to_string());
                    self.plant = PlantParams::from_kv(&kv)?;
                } else {
                    return Err(Error::Config(format!("unknown key `{k}`")));
                }
            }
        }
        self.track.gravity = self.plant.gravity;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        crate::dataset::check_fractions(self.split)?;
        self.stabilize.validate()?;
        if self.horizon == 0 || self.sweep_horizons.contains(&0) {
            return Err(Error::Config("horizons must be at least 1".into()));
        }
        if !(self.u_min < self.u_max) {
            return Err(Error::Config("mpc.u_min must be below mpc.u_max".into()));
        }
        if !(self.stabilize_duration > 0.0 && self.track_duration > 0.0 && self.sweep_duration > 0.0) {
            return Err(Error::Config("durations must be positive".into()));
        }
        if self.model.latent == 0 || self.eval_window < 2 || self.train.batch_size == 0 {
            return Err(Error::Config("latent, eval.window and batch size must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its current value; feeding this back through
    /// [`ExperimentConfig::from_kv`] reproduces the config.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let d = &self.data;
        let t = &self.train;
        let f = |x: f64| format!("{x:e}");
        let act = match self.model.activation {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        let steps = self.stabilize.steps.iter().map(|(t, s)| format!("{t}:{}", join(s))).collect::<Vec<_>>().join("; ");
        let mut kv: BTreeMap<String, String> = [
            ("seed", self.seed.to_string()),
            ("parallel", self.parallel.to_string()),
            ("data.records", d.records.to_string()),
            ("data.duration", f(d.duration)),
            ("data.dt", f(d.dt)),
            ("data.center", join(&d.center)),
            ("data.half_box", join(&d.half_box)),
            ("data.yaw_amplitude", f(d.yaw_amplitude)),
            ("data.hold", join(&d.hold)),
            ("data.frequency", join(&d.frequency)),
            ("data.reference_bandwidth", f(d.reference_bandwidth)),
            ("data.perturbation", f(d.perturbation)),
            ("data.perturbation_hold", join(&d.perturbation_hold)),
            ("data.max_attempts", d.max_attempts.to_string()),
            ("data.split", join(&self.split)),
            ("inner.pos_kp", f(d.inner.pos_kp)),
            ("inner.pos_kd", f(d.inner.pos_kd)),
            ("inner.att_kp", f(d.inner.att_kp)),
            ("inner.att_kd", f(d.inner.att_kd)),
            ("inner.yaw_kp", f(d.inner.yaw_kp)),
            ("inner.yaw_kd", f(d.inner.yaw_kd)),
            ("inner.max_tilt", f(d.inner.max_tilt)),
            ("inner.max_horizontal_acc", f(d.inner.max_horizontal_acc)),
            ("inner.max_vertical_acc", f(d.inner.max_vertical_acc)),
            ("model.hidden", join(&self.model.hidden)),
            ("model.latent", self.model.latent.to_string()),
            ("model.activation", act.to_string()),
            ("model.a_diagonal", f(self.model.a_diagonal)),
            ("model.a_noise", f(self.model.a_noise)),
            ("model.b_scale", f(self.model.b_scale)),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", f(t.adam.learning_rate)),
            ("train.beta1", f(t.adam.beta1)),
            ("train.beta2", f(t.adam.beta2)),
            ("train.epsilon", f(t.adam.epsilon)),
            ("train.lambda_recon", f(t.weights.recon)),
            ("train.lambda_linear", f(t.weights.linear)),
            ("train.lambda_stability", f(t.weights.stability)),
            ("train.lambda_l2", f(t.weights.l2)),
            ("mpc.horizon", self.horizon.to_string()),
            ("mpc.q", f(self.q_weight)),
            ("mpc.r", f(self.r_weight)),
            ("mpc.u_min", f(self.u_min)),
            ("mpc.u_max", f(self.u_max)),
            ("mpc.tolerance", f(self.qp_tolerance)),
            ("mpc.max_iterations", self.qp_max_iterations.to_string()),
            ("mpc.warm_start", self.warm_start.to_string()),
            ("nmpc.max_outer", self.nmpc_max_outer.to_string()),
            ("nmpc.max_inner", self.nmpc_max_inner.to_string()),
            ("control.budget_ms", f(self.budget_ms.unwrap_or(0.0))),
            ("control.warmup_steps", self.warmup_steps.to_string()),
            ("stabilize.duration", f(self.stabilize_duration)),
            ("stabilize.initial", join(&self.stabilize.initial)),
            ("stabilize.steps", steps),
            ("track.duration", f(self.track_duration)),
            ("track.center", join(&self.track.center)),
            ("track.amplitude", join(&self.track.amplitude)),
            ("track.frequency", join(&self.track.frequency)),
            ("track.phase", join(&self.track.phase)),
            ("track.yaw_amplitude", f(self.track.yaw_amplitude)),
            ("track.yaw_frequency", f(self.track.yaw_frequency)),
            ("sweep.horizons", join(&self.sweep_horizons)),
            ("sweep.duration", f(self.sweep_duration)),
            ("eval.window", self.eval_window.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (k, v) in self.plant.to_kv() {
            kv.insert(format!("plant.{k}"), v);
        }
        kv
    }

    pub fn render(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let kv = parse_kv("# header\n\nseed = 3 # trailing\nmpc.horizon=10\n").unwrap();
        assert_eq!(kv["seed"], "3");
        assert_eq!(kv["mpc.horizon"], "10");
        assert!(parse_kv("nonsense").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = ExperimentConfig { seed: 11, budget_ms: Some(4.5), ..ExperimentConfig::default() };
        c.plant.mass = 1.7;
        let back = ExperimentConfig::from_kv(&parse_kv(&c.render()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut kv = BTreeMap::new();
        kv.insert("mpc.horizn".to_string(), "3".to_string());
        assert!(ExperimentConfig::from_kv(&kv).is_err());
    }
}
