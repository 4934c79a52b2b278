use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::Metrics;
use super::reference::Reference;
use crate::dataset::{split_records, FlightRecord, DEFAULT_INPUT_NAMES, DEFAULT_STATE_NAMES};
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::mpc::{DkMpc, MpcConfig};
use crate::plant::{clamp_rotors, step_vec, Nmpc, NmpcConfig, PlantParams, RigidBodyModel, StateVec};

/// Channels scored by R²: x, y, z and roll.
pub const SCORED: [(usize, &str); 4] = [(0, "px"), (1, "py"), (2, "pz"), (6, "phi")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    DkMpc,
    Nmpc,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::DkMpc => "dk-mpc",
            ControllerKind::Nmpc => "nmpc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dk-mpc" => Ok(ControllerKind::DkMpc),
            "nmpc" => Ok(ControllerKind::Nmpc),
            _ => Err(Error::Config(format!("unknown controller `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Stabilize,
    Track,
    HorizonSweep,
    EvalModel,
}

/// One closed-loop or evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub reference: Reference,
    pub duration: f64,
    pub controller: ControllerKind,
    pub horizon: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if let Reference::Steps(s) = &self.reference {
            s.validate()?;
        }
        Ok(())
    }
}

/// Builds either controller with the shared horizon, weights and bounds.
#[allow(clippy::large_enum_variant)]
pub enum Controller {
    Dk { inner: DkMpc, budget: Option<Duration> },
    Nmpc(Nmpc<RigidBodyModel>),
}

impl Controller {
    pub fn build(kind: ControllerKind, model: &KoopmanModel, cfg: &ExperimentConfig, horizon: usize) -> Result<Self> {
        let budget = cfg.budget_ms.map(|ms| Duration::from_secs_f64(ms * 1e-3));
        match kind {
            ControllerKind::DkMpc => {
                let mut m = MpcConfig::new(model.latent_dim(), model.input_dim(), horizon, cfg.q_weight, cfg.r_weight);
                m.u_min = DVector::from_element(model.input_dim(), cfg.u_min);
                m.u_max = DVector::from_element(model.input_dim(), cfg.u_max);
                m.solver.tolerance = cfg.qp_tolerance;
                m.solver.max_iterations = cfg.qp_max_iterations;
                let inner = DkMpc::new(model.clone(), m)?.with_warm_start(cfg.warm_start);
                Ok(Controller::Dk { inner, budget })
            }
            ControllerKind::Nmpc => {
                let mut n = NmpcConfig::from_normalizer(&model.normalizer, horizon, cfg.q_weight, cfg.r_weight);
                n.u_min = vec![cfg.u_min; model.input_dim()];
                n.u_max = vec![cfg.u_max; model.input_dim()];
                n.max_outer = cfg.nmpc_max_outer;
                n.qp.max_iterations = cfg.nmpc_max_inner;
                n.qp.tolerance = cfg.qp_tolerance;
                n.time_budget = budget;
                let plant = RigidBodyModel { params: cfg.plant, dt: cfg.data.dt };
                Ok(Controller::Nmpc(Nmpc::new(plant, n)?))
            }
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Controller::Dk { inner, .. } => inner.config().horizon,
            Controller::Nmpc(n) => n.config().horizon,
        }
    }

    /// Raw input and the number of saturated components.
    pub fn act(&mut self, x: &[f64], window: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
        match self {
            Controller::Dk { inner, budget } => {
                let deadline = budget.map(|b| Instant::now() + b);
                let (u, d) = inner.control_step_until(x, window, deadline)?;
                Ok((u, d.saturated_count))
            }
            Controller::Nmpc(n) => {
                let (u, d) = n.control_step(x, window)?;
                Ok((u, d.saturated_count))
            }
        }
    }
}

/// Logged closed-loop run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub refs: Vec<[f64; 12]>,
    pub states: Vec<[f64; 12]>,
    pub inputs: Vec<[f64; 4]>,
    pub solve_ms: Vec<f64>,
    pub saturated: Vec<usize>,
    /// Set when the plant failed before the end of the run.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t,ref_*,state_*,u_*,solve_ms`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for n in DEFAULT_STATE_NAMES {
            write!(s, ",ref_{n}").unwrap();
        }
        for n in DEFAULT_STATE_NAMES {
            write!(s, ",state_{n}").unwrap();
        }
        for n in DEFAULT_INPUT_NAMES {
            write!(s, ",{n}").unwrap();
        }
        s.push_str(",solve_ms\n");
        for k in 0..self.len() {
            write!(s, "{:.16e}", self.times[k]).unwrap();
            for v in self.refs[k].iter().chain(&self.states[k]).chain(&self.inputs[k]) {
                write!(s, ",{v:.16e}").unwrap();
            }
            writeln!(s, ",{:.6e}", self.solve_ms[k]).unwrap();
        }
        s
    }

    /// R² and MSE of state against reference on the scored channels, timing
    /// with the first `warmup` steps dropped.
    pub fn metrics(&self, warmup: usize) -> Result<Metrics> {
        let names: Vec<&str> = SCORED.iter().map(|(_, n)| *n).collect();
        let truth: Vec<Vec<f64>> = SCORED.iter().map(|(i, _)| self.refs.iter().map(|r| r[*i]).collect()).collect();
        let pred: Vec<Vec<f64>> = SCORED.iter().map(|(i, _)| self.states.iter().map(|r| r[*i]).collect()).collect();
        let timed = if self.solve_ms.len() > warmup { &self.solve_ms[warmup..] } else { &[][..] };
        let sat: usize = self.saturated.iter().sum();
        let rate = sat as f64 / (4 * self.len()).max(1) as f64;
        Metrics::from_series(&names, &truth, &pred, timed, rate, self.aborted.is_none())
    }
}

/// Plant ← controller loop at the sampling period `dt`, starting on the reference.
pub fn closed_loop(
    plant: &PlantParams,
    dt: f64,
    duration: f64,
    reference: &Reference,
    controller: &mut Controller,
) -> Result<Trajectory> {
    let steps = (duration / dt).round() as usize;
    let h = controller.horizon();
    let mut x = StateVec::from(reference.state(0.0));
    let mut log = Trajectory::default();
    for k in 0..steps {
        let t = k as f64 * dt;
        let window = reference.window(t, dt, h + 1);
        let start = Instant::now();
        let (u, sat) = controller.act(x.as_slice(), &window)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let u: [f64; 4] = u.try_into().map_err(|_| Error::dims("controller input length"))?;
        let (applied, _) = clamp_rotors(plant, &u);
        log.times.push(t);
        log.refs.push(reference.state(t));
        log.states.push(x.as_slice().try_into().expect("12 states"));
        log.inputs.push(applied);
        log.solve_ms.push(elapsed);
        log.saturated.push(sat);
        match step_vec(plant, &x, &applied, dt) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
            Ok(_) => {
                log.aborted = Some(format!("non-finite state at t = {t}"));
                break;
            }
            Err(e) => {
                log.aborted = Some(format!("{e} at t = {t}"));
                break;
            }
        }
    }
    Ok(log)
}

/// Closed-loop run of a step schedule or smooth reference.
pub fn run_scenario(
    spec: &ExperimentSpec,
    model: &KoopmanModel,
    cfg: &ExperimentConfig,
) -> Result<(Trajectory, Metrics)> {
    spec.validate()?;
    let mut ctl = Controller::build(spec.controller, model, cfg, spec.horizon)?;
    let traj = closed_loop(&cfg.plant, cfg.data.dt, spec.duration, &spec.reference, &mut ctl)?;
    let metrics = traj.metrics(cfg.warmup_steps)?;
    Ok((traj, metrics))
}

pub fn run_stabilize(
    model: &KoopmanModel,
    cfg: &ExperimentConfig,
    controller: ControllerKind,
) -> Result<(Trajectory, Metrics)> {
    let spec = ExperimentSpec {
        scenario: Scenario::Stabilize,
        reference: Reference::Steps(cfg.stabilize.clone()),
        duration: cfg.stabilize_duration,
        controller,
        horizon: cfg.horizon,
        seed: cfg.seed,
    };
    run_scenario(&spec, model, cfg)
}

pub fn run_track(
    model: &KoopmanModel,
    cfg: &ExperimentConfig,
    controller: ControllerKind,
) -> Result<(Trajectory, Metrics)> {
    let spec = ExperimentSpec {
        scenario: Scenario::Track,
        reference: Reference::Lissajous(cfg.track),
        duration: cfg.track_duration,
        controller,
        horizon: cfg.horizon,
        seed: cfg.seed,
    };
    run_scenario(&spec, model, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub controller: ControllerKind,
    pub r2: Option<f64>,
    pub median_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub completed: bool,
    /// Set when the cell failed; the sweep carries on.
    pub error: Option<String>,
}

/// Tracking runs for every horizon and both controllers. Cells run one after
/// another so that timings are not disturbed by each other.
pub fn run_horizon_sweep(model: &KoopmanModel, cfg: &ExperimentConfig) -> Vec<SweepRow> {
    // solve times are measured unconstrained
    let cfg = &ExperimentConfig { budget_ms: None, ..cfg.clone() };
    let mut rows = Vec::new();
    for &h in &cfg.sweep_horizons {
        for kind in [ControllerKind::DkMpc, ControllerKind::Nmpc] {
            let spec = ExperimentSpec {
                scenario: Scenario::HorizonSweep,
                reference: Reference::Lissajous(cfg.track),
                duration: cfg.sweep_duration,
                controller: kind,
                horizon: h,
                seed: cfg.seed,
            };
            rows.push(match run_scenario(&spec, model, cfg) {
                Ok((_, m)) => SweepRow {
                    horizon: h,
                    controller: kind,
                    r2: m.r2_mean,
                    median_ms: m.solve_median_ms,
                    p95_ms: m.solve_p95_ms,
                    completed: m.completed,
                    error: None,
                },
                Err(e) => SweepRow {
                    horizon: h,
                    controller: kind,
                    r2: None,
                    median_ms: None,
                    p95_ms: None,
                    completed: false,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    rows
}

/// `H,controller,r2,median_ms,p95_ms`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6e}"));
    let mut s = String::from("H,controller,r2,median_ms,p95_ms\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.horizon, r.controller.name(), opt(r.r2), opt(r.median_ms), opt(r.p95_ms))
            .unwrap();
    }
    s
}

/// Pooled open-loop accuracy: non-overlapping rollouts of `window` steps over
/// every record in `records`, scored on the R² channels.
pub fn run_eval_model(model: &KoopmanModel, records: &[&FlightRecord], window: usize) -> Result<Metrics> {
    if window < 2 {
        return Err(Error::Config("evaluation window must be at least 2".into()));
    }
    let mut truth: Vec<Vec<f64>> = vec![Vec::new(); SCORED.len()];
    let mut pred: Vec<Vec<f64>> = vec![Vec::new(); SCORED.len()];
    for r in records {
        let mut start = 0;
        while start + window <= r.len() {
            let roll = model.predict_rollout(&r.states[start], &r.inputs[start..start + window])?;
            for (c, (i, _)) in SCORED.iter().enumerate() {
                truth[c].extend(r.states[start..start + window].iter().map(|s| s[*i]));
                pred[c].extend(roll.iter().map(|s| s[*i]));
            }
            start += window;
        }
    }
    if truth[0].is_empty() {
        return Err(Error::EmptyDataset);
    }
    let names: Vec<&str> = SCORED.iter().map(|(_, n)| *n).collect();
    Metrics::from_series(&names, &truth, &pred, &[], 0.0, true)
}

/// Held-out records under the configured split.
pub fn test_records<'a>(records: &'a [FlightRecord], cfg: &ExperimentConfig) -> Result<Vec<&'a FlightRecord>> {
    let [_, _, test] = split_records(records, cfg.split)?;
    Ok(test.iter().map(|&i| &records[i]).collect())
}

/// Spectral radius bound independent of the Schur solver: Gelfand's formula
/// `ρ(A) = lim ‖A^(2^j)‖^(1/2^j)` evaluated by repeated squaring with
/// renormalisation. Every iterate is an upper bound.
pub fn gelfand_radius_bound(a: &DMatrix<f64>, squarings: usize) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0f64;
    let mut best = f64::INFINITY;
    for j in 0..=squarings {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let exponent = 2f64.powi(j as i32);
        best = best.min(((norm.ln() + log_scale) / exponent).exp());
        m /= norm;
        log_scale += norm.ln();
        m = &m * &m;
        log_scale *= 2.0;
    }
    best
}
