//! Latent-space receding-horizon control: condensation of the linear latent
//! dynamics into a box-constrained QP, and a warm-started controller around it.
//!
//! The decision vector stacks `H + 1` inputs `u₀ … u_H`. The state term at
//! `k = 0` does not depend on the inputs and is dropped; `u_H` only carries
//! its input penalty.

mod qp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

pub use qp::{power_iteration, BoxQp, QpSolution, SolveStatus, SolverOptions};

use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::nnet::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// n×n latent tracking weight.
    pub state_weight: DMatrix<f64>,
    /// m×m input weight, normalised units.
    pub input_weight: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub solver: SolverOptions,
}

impl MpcConfig {
    /// `Q̂ = q·I`, `R̂ = r·I`, bounds ±1.
    pub fn new(latent: usize, inputs: usize, horizon: usize, q: f64, r: f64) -> Self {
        MpcConfig {
            horizon,
            state_weight: DMatrix::identity(latent, latent) * q,
            input_weight: DMatrix::identity(inputs, inputs) * r,
            u_min: DVector::from_element(inputs, -1.0),
            u_max: DVector::from_element(inputs, 1.0),
            solver: SolverOptions { tolerance: 1e-5, max_iterations: 1000 },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.state_weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weight.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let m = self.input_dim();
        if self.u_min.len() != m || self.u_max.len() != m {
            return Err(Error::dims("input bounds do not match input weight"));
        }
        if self.u_min.iter().zip(self.u_max.iter()).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("input bounds need u_min < u_max".into()));
        }
        check_psd(&self.state_weight, "state weight")?;
        check_psd(&self.input_weight, "input weight")
    }
}

/// Symmetric with no eigenvalue below a small negative tolerance.
pub fn check_psd(w: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !w.is_square() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd(what));
    }
    let scale = w.amax().max(1.0);
    if (w - w.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotPsd(what));
    }
    if w.nrows() > 0 && w.clone().symmetric_eigen().eigenvalues.min() < -1e-12 * scale {
        return Err(Error::NotPsd(what));
    }
    Ok(())
}

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.values())
}

/// Block-diagonal matrix with `count` copies of `w`.
pub fn block_diag(w: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = w.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(w);
    }
    out
}

/// Forced-response map of a time-varying linear system: row block `k`
/// (`k = 1 … H`) gives `∂z_k/∂U` for `z_{k} = A_{k−1} z_{k−1} + B_{k−1} u_{k−1}`.
/// The result has `H + 1` input block columns; the last one is zero.
pub fn forced_response(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let h = a.len();
    if h == 0 || b.len() != h {
        return Err(Error::dims("forced response needs H ≥ 1 matching A and B sequences"));
    }
    let (n, m) = b[0].shape();
    let mut gamma = DMatrix::zeros(h * n, (h + 1) * m);
    for k in 1..=h {
        // block (k, k−1) = B_{k−1}; block (k, j) = A_{k−1}·block(k−1, j)
        gamma.view_mut(((k - 1) * n, (k - 1) * m), (n, m)).copy_from(&b[k - 1]);
        if k >= 2 {
            let prev = gamma.view(((k - 2) * n, 0), (n, (k - 1) * m)).into_owned();
            let cur = &a[k - 1] * prev;
            gamma.view_mut(((k - 1) * n, 0), (n, (k - 1) * m)).copy_from(&cur);
        }
    }
    Ok(gamma)
}

/// Condensed QP for a fixed linear latent model.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub horizon: usize,
    pub latent: usize,
    pub inputs: usize,
    /// Free response: stacked `A^k` for `k = 1 … H` (Hn×n).
    pub free: DMatrix<f64>,
    /// Forced response (Hn×(H+1)m).
    pub forced: DMatrix<f64>,
    /// `q = q_from_state·z₀ + q_from_ref·(r₁ … r_H)`.
    pub q_from_state: DMatrix<f64>,
    pub q_from_ref: DMatrix<f64>,
    pub qp: BoxQp,
    pub solver: SolverOptions,
}

impl MpcProblem {
    pub fn from_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &MpcConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m, h) = (a.nrows(), b.ncols(), cfg.horizon);
        if !a.is_square() || b.nrows() != n || cfg.latent_dim() != n || cfg.input_dim() != m {
            return Err(Error::dims(format!(
                "A {:?}, B {:?} against weights of size {} and {}",
                a.shape(),
                b.shape(),
                cfg.latent_dim(),
                cfg.input_dim()
            )));
        }
        let mut free = DMatrix::zeros(h * n, n);
        let mut pow = a.clone();
        for k in 0..h {
            free.view_mut((k * n, 0), (n, n)).copy_from(&pow);
            pow = a * pow;
        }
        let forced = forced_response(&vec![a.clone(); h], &vec![b.clone(); h])?;
        let q_bar = block_diag(&cfg.state_weight, h);
        let r_bar = block_diag(&cfg.input_weight, h + 1);
        let gt_q = forced.transpose() * &q_bar;
        let mut hessian = (&gt_q * &forced + r_bar) * 2.0;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        let q_from_state = &gt_q * &free * 2.0;
        let q_from_ref = gt_q * -2.0;
        let lower = DVector::from_fn((h + 1) * m, |i, _| cfg.u_min[i % m]);
        let upper = DVector::from_fn((h + 1) * m, |i, _| cfg.u_max[i % m]);
        Ok(MpcProblem {
            horizon: h,
            latent: n,
            inputs: m,
            free,
            forced,
            q_from_state,
            q_from_ref,
            qp: BoxQp::new(hessian, lower, upper)?,
            solver: cfg.solver,
        })
    }

    pub fn dim(&self) -> usize {
        (self.horizon + 1) * self.inputs
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.qp.hessian
    }

    /// Linear term for initial latent `z0` and `H + 1` reference latents.
    pub fn linear_term(&self, z0: &[f64], z_ref: &[Vec<f64>]) -> Result<DVector<f64>> {
        let n = self.latent;
        if z0.len() != n || z_ref.len() != self.horizon + 1 || z_ref.iter().any(|r| r.len() != n) {
            return Err(Error::dims(format!("MPC needs a latent of {n} and {} reference latents", self.horizon + 1)));
        }
        let refs = DVector::from_iterator(self.horizon * n, z_ref[1..].iter().flatten().copied());
        Ok(&self.q_from_state * DVector::from_column_slice(z0) + &self.q_from_ref * refs)
    }

    pub fn solve(&self, z0: &[f64], z_ref: &[Vec<f64>]) -> Result<QpSolution> {
        self.solve_warm(z0, z_ref, None, None)
    }

    pub fn solve_warm(
        &self,
        z0: &[f64],
        z_ref: &[Vec<f64>],
        warm: Option<&DVector<f64>>,
        deadline: Option<Instant>,
    ) -> Result<QpSolution> {
        let q = self.linear_term(z0, z_ref)?;
        let sol = self.qp.solve(&q, warm, &self.solver, deadline)?;
        if sol.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MPC solution".into()));
        }
        Ok(sol)
    }
}

pub fn build_problem(model: &KoopmanModel, cfg: &MpcConfig) -> Result<MpcProblem> {
    if cfg.latent_dim() != model.latent_dim() || cfg.input_dim() != model.input_dim() {
        return Err(Error::dims(format!(
            "config for latent {} / input {} against model with {} / {}",
            cfg.latent_dim(),
            cfg.input_dim(),
            model.latent_dim(),
            model.input_dim()
        )));
    }
    MpcProblem::from_matrices(&to_dmatrix(model.a_matrix()), &to_dmatrix(model.b_matrix()), cfg)
}

/// Per-step controller diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub solve_ms: f64,
    pub iterations: usize,
    pub objective: f64,
    /// Components of the applied input sitting on a bound.
    pub saturated_count: usize,
    pub status: SolveStatus,
}

/// Pads a reference window to `len` by repeating its last entry.
pub fn pad_window(window: &[Vec<f64>], len: usize) -> Result<Vec<Vec<f64>>> {
    let last = window.last().ok_or(Error::dims("empty reference window"))?;
    let mut out: Vec<Vec<f64>> = window.iter().take(len).cloned().collect();
    out.resize(len, last.clone());
    Ok(out)
}

/// Shifts a stacked input sequence one block forward, repeating the last block.
pub fn shift_blocks(u: &DVector<f64>, block: usize) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(n, |i, _| if i + block < n { u[i + block] } else { u[i] })
}

/// Receding-horizon controller around a trained Koopman model. The condensed
/// problem is built once per model/config pair.
#[derive(Debug, Clone)]
pub struct DkMpc {
    model: KoopmanModel,
    cfg: MpcConfig,
    problem: MpcProblem,
    warm_start: bool,
    previous: Option<DVector<f64>>,
}

impl DkMpc {
    pub fn new(model: KoopmanModel, cfg: MpcConfig) -> Result<Self> {
        let problem = build_problem(&model, &cfg)?;
        Ok(DkMpc { model, cfg, problem, warm_start: true, previous: None })
    }

    pub fn with_warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    pub fn set_config(&mut self, cfg: MpcConfig) -> Result<()> {
        self.problem = build_problem(&self.model, &cfg)?;
        self.cfg = cfg;
        self.previous = None;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// One receding-horizon step from raw state `x` toward the raw reference
    /// window (padded to `H + 1`). Returns the first raw input.
    pub fn control_step(&mut self, x: &[f64], window: &[Vec<f64>]) -> Result<(Vec<f64>, StepDiagnostics)> {
        self.control_step_until(x, window, None)
    }

    pub fn control_step_until(
        &mut self,
        x: &[f64],
        window: &[Vec<f64>],
        deadline: Option<Instant>,
    ) -> Result<(Vec<f64>, StepDiagnostics)> {
        let start = Instant::now();
        let h = self.problem.horizon;
        let refs = pad_window(window, h + 1)?;
        let z0 = self.model.encode(x, false)?;
        let zr = self.model.encode_batch(&refs)?;
        let z_ref: Vec<Vec<f64>> = (0..=h).map(|k| zr.row(k).to_vec()).collect();
        let warm = match (&self.previous, self.warm_start) {
            (Some(p), true) => Some(shift_blocks(p, self.problem.inputs)),
            _ => None,
        };
        let sol = self.problem.solve_warm(&z0, &z_ref, warm.as_ref(), deadline)?;
        let m = self.problem.inputs;
        let first: Vec<f64> = sol.u.rows(0, m).iter().copied().collect();
        let saturated_count =
            first.iter().enumerate().filter(|(i, v)| **v <= self.cfg.u_min[*i] || **v >= self.cfg.u_max[*i]).count();
        let u = self.model.normalizer.denormalize_input(&first)?;
        let diag = StepDiagnostics {
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
            iterations: sol.iterations,
            objective: sol.objective,
            saturated_count,
            status: sol.status,
        };
        self.previous = Some(sol.u);
        Ok((u, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cfg(lo: f64, hi: f64) -> MpcConfig {
        let mut c = MpcConfig::new(1, 1, 1, 1.0, 1e-12);
        c.u_min[0] = lo;
        c.u_max[0] = hi;
        c.solver.tolerance = 1e-12;
        c.solver.max_iterations = 10_000;
        c
    }

    fn one() -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    #[test]
    fn scalar_deadbeat() {
        let p = MpcProblem::from_matrices(&one(), &one(), &scalar_cfg(-1e6, 1e6)).unwrap();
        let s = p.solve(&[0.3], &[vec![0.0], vec![1.0]]).unwrap();
        assert!((s.u[0] - 0.7).abs() < 1e-6);
        assert!(s.u[1].abs() < 1e-6);
    }

    #[test]
    fn scalar_clipped() {
        let p = MpcProblem::from_matrices(&one(), &one(), &scalar_cfg(-0.5, 0.5)).unwrap();
        let s = p.solve(&[0.0], &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(s.u[0], 0.5);
    }

    #[test]
    fn no_actuation_gives_zero_input() {
        let mut cfg = MpcConfig::new(2, 1, 4, 1.0, 0.1);
        cfg.solver.tolerance = 1e-12;
        let a = DMatrix::identity(2, 2) * 0.9;
        let p = MpcProblem::from_matrices(&a, &DMatrix::zeros(2, 1), &cfg).unwrap();
        let s = p.solve(&[1.0, -1.0], &vec![vec![3.0, 2.0]; 5]).unwrap();
        assert!(s.u.amax() < 1e-9);
    }

    #[test]
    fn hessian_symmetric_and_sized() {
        let cfg = MpcConfig::new(3, 2, 6, 1.0, 0.1);
        let a = DMatrix::from_fn(3, 3, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64) + if i == j { 0.9 } else { 0.0 });
        let b = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.1);
        let p = MpcProblem::from_matrices(&a, &b, &cfg).unwrap();
        let hs = p.hessian();
        assert_eq!(hs.shape(), (14, 14));
        assert!((hs - hs.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn point_box_replicated() {
        // the config requires u_min < u_max, so pin the box on the condensed QP
        let cfg = MpcConfig::new(2, 1, 3, 1.0, 0.1);
        let p = MpcProblem::from_matrices(&DMatrix::identity(2, 2), &DMatrix::from_element(2, 1, 1.0), &cfg).unwrap();
        let c = DVector::from_element(p.dim(), 0.25);
        let qp = BoxQp::new(p.hessian().clone(), c.clone(), c.clone()).unwrap();
        for z0 in [[5.0, -2.0], [-1.0, 0.0]] {
            let q = p.linear_term(&z0, &vec![vec![0.0, 0.0]; 4]).unwrap();
            let s = qp.solve(&q, None, &p.solver, None).unwrap();
            assert_eq!(s.u, c);
        }
    }

    #[test]
    fn rejects_indefinite_weight() {
        let mut cfg = MpcConfig::new(2, 1, 3, 1.0, 0.1);
        cfg.state_weight[(1, 1)] = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::NotPsd(_))));
    }

    #[test]
    fn forced_response_blocks() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 3.0);
        let g = forced_response(&[a.clone(), a.clone(), a], &[b.clone(), b.clone(), b]).unwrap();
        // z3 = 2·2·3·u0 + 2·3·u1 + 3·u2
        assert_eq!(g.row(2).iter().copied().collect::<Vec<_>>(), vec![12.0, 6.0, 3.0, 0.0]);
    }

    #[test]
    fn window_padding_and_shift() {
        let w = pad_window(&[vec![1.0], vec![2.0]], 4).unwrap();
        assert_eq!(w, vec![vec![1.0], vec![2.0], vec![2.0], vec![2.0]]);
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(shift_blocks(&u, 2).as_slice(), &[3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    }
}
