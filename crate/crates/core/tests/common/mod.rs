//! Independent oracles shared by the focused tests and the acceptance suite.
//! Each check returns its measured figure so callers decide how to report it.

use koopman_mpc::dataset::Normalizer;
use koopman_mpc::koopman::{compute_loss_with, loss_and_grads, Architecture, KoopmanModel, LossWeights};
use koopman_mpc::mpc::{MpcConfig, MpcProblem, SolverOptions};
use koopman_mpc::nnet::Tensor;
use koopman_mpc::plant::{step_vec, DiscreteModel, PlantParams, RigidBodyModel, StateVec};
use koopman_mpc::Execution;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, v).unwrap()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), the usual whole-gradient relative error.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

// ---- total loss gradient ----

pub struct GradientReport {
    /// Largest relative error over all seeds, with the seed it came from.
    pub worst: (f64, u64),
    /// Seeds where the stability hinge was active.
    pub active: usize,
    pub seeds: usize,
}

fn toy_model(seed: u64) -> KoopmanModel {
    let arch = Architecture {
        hidden: vec![5],
        latent: 2,
        // alternate between an active and an inactive stability hinge
        a_diagonal: if seed.is_multiple_of(2) { 1.2 } else { 0.6 },
        a_noise: 0.05,
        b_scale: 0.5,
        ..Architecture::default()
    };
    let mut m = KoopmanModel::init(&arch, Normalizer::unit(3, 2), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for p in m.params_mut() {
        for v in p.values_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    m
}

/// Analytic total-loss gradient against central differences on a
/// 3-state, 2-latent toy model for seeds `0..seeds`.
pub fn loss_gradient_check(seeds: u64) -> GradientReport {
    let w = LossWeights { l2: 1e-2, ..LossWeights::default() };
    let mut report = GradientReport { worst: (0.0, 0), active: 0, seeds: seeds as usize };
    for seed in 0..seeds {
        let mut m = toy_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let x = random_tensor(&mut rng, 2, 3);
        let u = random_tensor(&mut rng, 2, 2);
        let xn = random_tensor(&mut rng, 2, 3);

        let (loss, grads) = loss_and_grads(&m, &x, &u, &xn, w, Execution::Sequential).unwrap();
        if loss.stability > 0.0 {
            report.active += 1;
        }
        let analytic = grads.flatten();
        let total = |m: &KoopmanModel| compute_loss_with(m, &x, &u, &xn, w, Execution::Sequential).unwrap().total;

        let lens: Vec<usize> = m.params().iter().map(|p| p.len()).collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for (pi, &len) in lens.iter().enumerate() {
            for k in 0..len {
                let orig = m.params()[pi].values()[k];
                m.params_mut()[pi].values_mut()[k] = orig + FD_STEP;
                let up = total(&m);
                m.params_mut()[pi].values_mut()[k] = orig - FD_STEP;
                let down = total(&m);
                m.params_mut()[pi].values_mut()[k] = orig;
                numeric.push((up - down) / (2.0 * FD_STEP));
            }
        }
        let err = rel_error(&analytic, &numeric);
        if err > report.worst.0 {
            report.worst = (err, seed);
        }
    }
    report
}

// ---- condensed QP ----

pub struct QpReport {
    pub worst_gap: f64,
    pub infeasible: usize,
    pub enumerated: usize,
    pub instances: usize,
}

/// Exact minimum of a strictly convex box QP by trying every assignment of
/// each coordinate to {free, lower, upper}.
pub fn enumerate_box_qp(p: &DMatrix<f64>, q: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let n = q.len();
    let mut best = f64::INFINITY;
    let mut code = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| code[i] == 0).collect();
        let mut u = DVector::from_fn(n, |i, _| match code[i] {
            1 => lo[i],
            2 => hi[i],
            _ => 0.0,
        });
        let mut feasible = true;
        if !free.is_empty() {
            let pff = DMatrix::from_fn(free.len(), free.len(), |a, b| p[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                let i = free[a];
                -(q[i] + (0..n).filter(|&j| code[j] != 0).map(|j| p[(i, j)] * u[j]).sum::<f64>())
            });
            let sol = pff.cholesky().expect("positive definite").solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                if sol[a] < lo[i] - 1e-12 || sol[a] > hi[i] + 1e-12 {
                    feasible = false;
                    break;
                }
                u[i] = sol[a];
            }
        }
        if feasible {
            best = best.min(0.5 * u.dot(&(p * &u)) + q.dot(&u));
        }
        // next base-3 code
        let mut k = 0;
        while k < n && code[k] == 2 {
            code[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
        code[k] += 1;
    }
}

fn random_instance(rng: &mut ChaCha8Rng, enumerable: bool) -> (MpcProblem, Vec<f64>, Vec<Vec<f64>>) {
    let (m, h) = loop {
        let m = rng.random_range(1..=4);
        let h = rng.random_range(1..=10);
        if ((h + 1) * m <= 12) == enumerable {
            break (m, h);
        }
    };
    let n = rng.random_range(1..=8);
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let radius = a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    a *= rng.random_range(0.5..1.1) / radius.max(1e-9);
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let mut cfg = MpcConfig::new(n, m, h, 1.0, 0.1);
    cfg.state_weight = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0)));
    cfg.input_weight = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0)));
    if enumerable {
        let lo = DVector::from_fn(m, |_, _| rng.random_range(-1.0..-0.05));
        cfg.u_max = DVector::from_fn(m, |i, _| lo[i] + rng.random_range(0.1..1.5));
        cfg.u_min = lo;
    } else {
        cfg.u_min = DVector::from_element(m, -1e6);
        cfg.u_max = DVector::from_element(m, 1e6);
    }
    cfg.solver = SolverOptions { tolerance: 1e-10, max_iterations: 500_000 };
    let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let refs = (0..=h).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (MpcProblem::from_matrices(&a, &b, &cfg).unwrap(), z0, refs)
}

/// Random condensed MPC problems with latent ≤ 8, inputs ≤ 4, horizon ≤ 10.
/// Even instances are small enough for exhaustive active-set enumeration;
/// odd ones have effectively unbounded boxes and use the closed form.
pub fn qp_oracle_check(instances: usize) -> QpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut report = QpReport { worst_gap: 0.0, infeasible: 0, enumerated: 0, instances };
    for case in 0..instances {
        let enumerable = case % 2 == 0;
        let (problem, z0, refs) = random_instance(&mut rng, enumerable);
        let q = problem.linear_term(&z0, &refs).unwrap();
        let qp = &problem.qp;
        let sol = problem.solve(&z0, &refs).unwrap();
        if (0..qp.dim()).any(|i| sol.u[i] < qp.lower[i] || sol.u[i] > qp.upper[i]) {
            report.infeasible += 1;
        }
        let oracle = if enumerable {
            report.enumerated += 1;
            enumerate_box_qp(&qp.hessian, &q, &qp.lower, &qp.upper)
        } else {
            let u = qp.hessian.clone().cholesky().expect("positive definite").solve(&(-&q));
            0.5 * u.dot(&(&qp.hessian * &u)) + q.dot(&u)
        };
        report.worst_gap = report.worst_gap.max((sol.objective - oracle).abs());
    }
    report
}

// ---- plant ----

pub fn hover_state() -> StateVec {
    let mut x = StateVec::zeros();
    x[2] = 2.0;
    x
}

pub fn tumbling_state() -> StateVec {
    StateVec::from_iterator([0.3, -0.2, 1.5, 0.4, -0.1, 0.2, 0.15, -0.25, 0.6, 0.5, -0.7, 0.3])
}

pub const UNEVEN_ROTORS: [f64; 4] = [480.0, 520.0, 505.0, 470.0];

/// Largest per-step state change over `steps` steps from hover at hover thrust.
pub fn hover_drift(steps: usize) -> f64 {
    let p = PlantParams::default();
    let u = [p.hover_speed(); 4];
    let mut x = hover_state();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let next = step_vec(&p, &x, &u, 0.01).unwrap();
        worst = worst.max((next - x).amax());
        x = next;
    }
    worst
}

/// Empirical RK4 order from step doubling: least-squares slope of
/// log‖x(dt) − x(dt/2, dt/2)‖ against log dt.
pub fn rk4_order() -> f64 {
    let p = PlantParams::default();
    let x0 = tumbling_state();
    let u = UNEVEN_ROTORS;
    let steps = [0.08, 0.04, 0.02, 0.01];
    let lx: Vec<f64> = steps.iter().map(|d: &f64| d.ln()).collect();
    let ly: Vec<f64> = steps
        .iter()
        .map(|&dt| {
            let full = step_vec(&p, &x0, &u, dt).unwrap();
            let half = step_vec(&p, &step_vec(&p, &x0, &u, dt / 2.0).unwrap(), &u, dt / 2.0).unwrap();
            (full - half).norm().ln()
        })
        .collect();
    let n = steps.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

/// Five-point central difference of `f` along one coordinate.
fn stencil(f: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let (p2, p1, m1, m2) = (f(2.0 * h), f(h), f(-h), f(-2.0 * h));
    (0..p1.len()).map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h)).collect()
}

fn column_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
}

/// Largest column-wise relative error of the discrete-step Jacobians used by
/// NMPC, against finite differences of the integrator.
pub fn jacobian_error() -> f64 {
    let model = RigidBodyModel { params: PlantParams::default(), dt: 0.01 };
    let x: Vec<f64> = tumbling_state().iter().copied().collect();
    let u = UNEVEN_ROTORS.to_vec();
    let (_, a, b) = model.step_jacobians(&x, &u).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..12 {
        let fd = stencil(
            |d| {
                let mut xs = x.clone();
                xs[j] += d;
                model.step(&xs, &u).unwrap()
            },
            1e-4,
        );
        let col: Vec<f64> = a.column(j).iter().copied().collect();
        worst = worst.max(column_error(&col, &fd));
    }
    for j in 0..4 {
        let fd = stencil(
            |d| {
                let mut us = u.clone();
                us[j] += d;
                model.step(&x, &us).unwrap()
            },
            1e-2,
        );
        let col: Vec<f64> = b.column(j).iter().copied().collect();
        worst = worst.max(column_error(&col, &fd));
    }
    worst
}
