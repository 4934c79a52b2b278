//! Nonlinear MPC baseline: single-shooting SQP with Gauss-Newton Hessians.
//!
//! Each outer iteration rolls the model forward under the current input
//! sequence, linearises along that trajectory, solves the resulting box QP
//! with the same solver the latent controller uses, and backtracks on the
//! true cost.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use super::dynamics::{step_vec, step_with_jacobians, StateVec};
use super::PlantParams;
use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::mpc::{block_diag, forced_response, pad_window, shift_blocks, BoxQp, SolveStatus, SolverOptions};

/// Discrete-time model usable by the SQP.
pub trait DiscreteModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// Next state together with `∂x⁺/∂x` and `∂x⁺/∂u`.
    fn step_jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)>;
}

/// The rigid-body quadrotor discretised with RK4.
#[derive(Debug, Clone, Copy)]
pub struct RigidBodyModel {
    pub params: PlantParams,
    pub dt: f64,
}

fn rotors(u: &[f64]) -> Result<[f64; 4]> {
    u.try_into().map_err(|_| Error::dims(format!("rotor command of length {}", u.len())))
}

fn state(x: &[f64]) -> Result<StateVec> {
    if x.len() != 12 {
        return Err(Error::dims(format!("plant state of length {}", x.len())));
    }
    Ok(StateVec::from_column_slice(x))
}

impl DiscreteModel for RigidBodyModel {
    fn state_dim(&self) -> usize {
        12
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(step_vec(&self.params, &state(x)?, &rotors(u)?, self.dt)?.as_slice().to_vec())
    }

    fn step_jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (next, a, b) = step_with_jacobians(&self.params, &state(x)?, &rotors(u)?, self.dt)?;
        Ok((
            next.as_slice().to_vec(),
            DMatrix::from_column_slice(12, 12, a.as_slice()),
            DMatrix::from_column_slice(12, 4, b.as_slice()),
        ))
    }
}

/// `x⁺ = A·x + B·u`, for checking the SQP against a plain QP.
#[derive(Debug, Clone)]
pub struct LinearTestModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl DiscreteModel for LinearTestModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() {
            return Err(Error::dims("linear test model step"));
        }
        let next = &self.a * DVector::from_column_slice(x) + &self.b * DVector::from_column_slice(u);
        Ok(next.as_slice().to_vec())
    }

    fn step_jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.step(x, u)?, self.a.clone(), self.b.clone()))
    }
}

/// Tracking problem in scaled units: the cost is
/// `Σ_{k=1..H} eₖᵀQeₖ + Σ_{k=0..H} ũₖᵀRũₖ` with `eₖ = (xₖ − rₖ)/state_scale`
/// and raw input `u = input_center + input_scale·ũ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NmpcConfig {
    pub horizon: usize,
    pub state_weight: DMatrix<f64>,
    pub input_weight: DMatrix<f64>,
    pub state_scale: Vec<f64>,
    pub input_center: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Bounds on ũ.
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub max_outer: usize,
    pub qp: SolverOptions,
    /// Stop once an accepted step moves ũ by less than this (∞-norm).
    pub step_tolerance: f64,
    /// Wall-clock budget per control step.
    pub time_budget: Option<Duration>,
}

impl NmpcConfig {
    /// Weights `Q = q·I`, `R = r·I` with scales taken from a normaliser, so
    /// the cost is expressed in the same units as the latent controller's.
    pub fn from_normalizer(n: &Normalizer, horizon: usize, q: f64, r: f64) -> Self {
        let (nx, nu) = (n.state_dim(), n.input_dim());
        NmpcConfig {
            horizon,
            state_weight: DMatrix::identity(nx, nx) * q,
            input_weight: DMatrix::identity(nu, nu) * r,
            state_scale: n.state_half_range(),
            input_center: (0..nu).map(|i| 0.5 * (n.input_min[i] + n.input_max[i])).collect(),
            input_scale: n.input_half_range(),
            u_min: vec![-1.0; nu],
            u_max: vec![1.0; nu],
            max_outer: 30,
            qp: SolverOptions { tolerance: 1e-5, max_iterations: 200 },
            step_tolerance: 1e-6,
            time_budget: None,
        }
    }

    pub fn validate(&self, nx: usize, nu: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.state_weight.shape() != (nx, nx)
            || self.input_weight.shape() != (nu, nu)
            || self.state_scale.len() != nx
            || self.input_center.len() != nu
            || self.input_scale.len() != nu
            || self.u_min.len() != nu
            || self.u_max.len() != nu
        {
            return Err(Error::dims("NMPC config does not match the model"));
        }
        if self.state_scale.iter().chain(&self.input_scale).any(|s| !(*s > 0.0)) {
            return Err(Error::Config("NMPC scales must be positive".into()));
        }
        if self.u_min.iter().zip(&self.u_max).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("input bounds need u_min < u_max".into()));
        }
        crate::mpc::check_psd(&self.state_weight, "state weight")?;
        crate::mpc::check_psd(&self.input_weight, "input weight")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcDiagnostics {
    pub solve_ms: f64,
    /// Accepted SQP steps.
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub saturated_count: usize,
    pub status: SolveStatus,
}

/// Receding-horizon SQP controller over any [`DiscreteModel`].
#[derive(Debug, Clone)]
pub struct Nmpc<M> {
    model: M,
    cfg: NmpcConfig,
    previous: Option<DVector<f64>>,
}

struct Rollout {
    states: Vec<Vec<f64>>,
    cost: f64,
}

impl<M: DiscreteModel> Nmpc<M> {
    pub fn new(model: M, cfg: NmpcConfig) -> Result<Self> {
        cfg.validate(model.state_dim(), model.input_dim())?;
        Ok(Nmpc { model, cfg, previous: None })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    fn raw_input(&self, scaled: &[f64]) -> Vec<f64> {
        scaled.iter().enumerate().map(|(i, v)| self.cfg.input_center[i] + self.cfg.input_scale[i] * v).collect()
    }

    fn input_cost(&self, u: &DVector<f64>) -> f64 {
        let m = self.model.input_dim();
        (0..=self.cfg.horizon)
            .map(|k| {
                let uk = u.rows(k * m, m);
                uk.dot(&(&self.cfg.input_weight * uk))
            })
            .sum()
    }

    fn scaled_error(&self, x: &[f64], r: &[f64]) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| (x[i] - r[i]) / self.cfg.state_scale[i])
    }

    /// Forward simulation and true cost; `None` when the model fails.
    fn rollout(&self, x0: &[f64], u: &DVector<f64>, refs: &[Vec<f64>]) -> Option<Rollout> {
        let m = self.model.input_dim();
        let mut x = x0.to_vec();
        let mut states = Vec::with_capacity(self.cfg.horizon);
        let mut cost = self.input_cost(u);
        for k in 0..self.cfg.horizon {
            let uk: Vec<f64> = u.rows(k * m, m).iter().copied().collect();
            x = self.model.step(&x, &self.raw_input(&uk)).ok()?;
            let e = self.scaled_error(&x, &refs[k + 1]);
            cost += e.dot(&(&self.cfg.state_weight * &e));
            states.push(x.clone());
        }
        cost.is_finite().then_some(Rollout { states, cost })
    }

    /// One control step from raw state `x` toward a raw reference window
    /// (padded to `H + 1`). Returns the first raw input.
    pub fn control_step(&mut self, x: &[f64], window: &[Vec<f64>]) -> Result<(Vec<f64>, NmpcDiagnostics)> {
        let start = Instant::now();
        let deadline = self.cfg.time_budget.map(|b| start + b);
        let (nx, m, h) = (self.model.state_dim(), self.model.input_dim(), self.cfg.horizon);
        if x.len() != nx {
            return Err(Error::dims(format!("state of length {} for model with {nx}", x.len())));
        }
        let refs = pad_window(window, h + 1)?;
        let dim = (h + 1) * m;
        let lower = DVector::from_fn(dim, |i, _| self.cfg.u_min[i % m]);
        let upper = DVector::from_fn(dim, |i, _| self.cfg.u_max[i % m]);
        let mut u = match &self.previous {
            Some(p) => shift_blocks(p, m),
            None => DVector::zeros(dim),
        };
        let mut current = match self.rollout(x, &u, &refs) {
            Some(r) => r,
            None => {
                u = DVector::zeros(dim);
                self.rollout(x, &u, &refs).ok_or_else(|| Error::NonFinite("NMPC initial rollout".into()))?
            }
        };
        let q_bar = block_diag(&self.cfg.state_weight, h);
        let r_bar = block_diag(&self.cfg.input_weight, h + 1);
        let inv_scale: Vec<f64> = self.cfg.state_scale.iter().map(|s| 1.0 / s).collect();
        let mut outer = 0;
        let mut inner = 0;
        let mut status = SolveStatus::MaxIterations;

        for _ in 0..self.cfg.max_outer {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                status = SolveStatus::TimeBudget;
                break;
            }
            // linearise along the current trajectory, in scaled units
            let mut a_seq = Vec::with_capacity(h);
            let mut b_seq = Vec::with_capacity(h);
            let mut xk = x.to_vec();
            for k in 0..h {
                let uk: Vec<f64> = u.rows(k * m, m).iter().copied().collect();
                let (next, a, b) = self.model.step_jacobians(&xk, &self.raw_input(&uk))?;
                let a_s = DMatrix::from_fn(nx, nx, |i, j| a[(i, j)] * inv_scale[i] * self.cfg.state_scale[j]);
                let b_s = DMatrix::from_fn(nx, m, |i, j| b[(i, j)] * inv_scale[i] * self.cfg.input_scale[j]);
                a_seq.push(a_s);
                b_seq.push(b_s);
                xk = next;
            }
            let gamma = forced_response(&a_seq, &b_seq)?;
            let resid = DVector::from_iterator(
                h * nx,
                (0..h).flat_map(|k| self.scaled_error(&current.states[k], &refs[k + 1]).data.as_vec().clone()),
            );
            let gt_q = gamma.transpose() * &q_bar;
            let mut hess = (&gt_q * &gamma + &r_bar) * 2.0;
            hess = (&hess + hess.transpose()) * 0.5;
            let q = &gt_q * (resid - &gamma * &u) * 2.0;
            let qp = BoxQp::new(hess, lower.clone(), upper.clone())?;
            let sol = qp.solve(&q, Some(&u), &self.cfg.qp, deadline)?;
            inner += sol.iterations;
            let dir = &sol.u - &u;
            if dir.amax() <= self.cfg.step_tolerance {
                status = SolveStatus::Converged;
                break;
            }
            // backtracking on the true cost
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let trial = &u + &dir * alpha;
                if let Some(r) = self.rollout(x, &trial, &refs) {
                    if r.cost < current.cost {
                        accepted = Some((trial, r));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((trial, r)) = accepted else {
                status = SolveStatus::Converged;
                break;
            };
            let moved = (&trial - &u).amax();
            u = trial;
            current = r;
            outer += 1;
            if moved <= self.cfg.step_tolerance {
                status = SolveStatus::Converged;
                break;
            }
        }

        let first: Vec<f64> = u.rows(0, m).iter().copied().collect();
        let saturated_count =
            first.iter().enumerate().filter(|(i, v)| **v <= self.cfg.u_min[*i] || **v >= self.cfg.u_max[*i]).count();
        let raw = self.raw_input(&first);
        let diag = NmpcDiagnostics {
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
            outer_iterations: outer,
            inner_iterations: inner,
            objective: current.cost,
            saturated_count,
            status,
        };
        self.previous = Some(u);
        Ok((raw, diag))
    }
}

/// Stateless single step on the rigid-body plant (cold start).
pub fn nmpc_control_step(
    params: &PlantParams,
    dt: f64,
    cfg: &NmpcConfig,
    x: &[f64],
    window: &[Vec<f64>],
) -> Result<(Vec<f64>, NmpcDiagnostics)> {
    Nmpc::new(RigidBodyModel { params: *params, dt }, cfg.clone())?.control_step(x, window)
}
