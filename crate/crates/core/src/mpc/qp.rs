//! Box-constrained convex QP `min ½UᵀPU + qᵀU  s.t.  lo ≤ U ≤ hi` solved by an
//! accelerated projected gradient method with a monotone restart.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on ‖U − Π(U − ∇f(U))‖∞ at termination.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-6, max_iterations: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Iteration cap reached; the best iterate is returned.
    MaxIterations,
    /// Deadline reached; the best iterate is returned.
    TimeBudget,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub residual: f64,
    pub status: SolveStatus,
}

/// Hessian and bounds of a box QP. Immutable once built; `solve` only reads it.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub hessian: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Upper estimate of λ_max(P).
    pub lipschitz: f64,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(p: &DMatrix<f64>, iterations: usize) -> f64 {
    let n = p.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = p * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

impl BoxQp {
    pub fn new(hessian: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let n = hessian.nrows();
        if hessian.ncols() != n || lower.len() != n || upper.len() != n {
            return Err(Error::dims("QP hessian and bounds disagree"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config("QP bounds need lower ≤ upper".into()));
        }
        // power iteration approaches λ_max from below; pad it
        let lipschitz = (power_iteration(&hessian, 2000) * 1.01).max(1e-12);
        Ok(BoxQp { hessian, lower, upper, lipschitz })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, u: &mut DVector<f64>) {
        for i in 0..u.len() {
            u[i] = u[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn objective(&self, q: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + q.dot(u)
    }

    /// ‖U − Π(U − ∇f(U))‖∞ for gradient `g` at `u`.
    fn residual(&self, u: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..u.len() {
            let stepped = (u[i] - g[i]).clamp(self.lower[i], self.upper[i]);
            r = r.max((u[i] - stepped).abs());
        }
        r
    }

    pub fn solve(
        &self,
        q: &DVector<f64>,
        warm: Option<&DVector<f64>>,
        opts: &SolverOptions,
        deadline: Option<Instant>,
    ) -> Result<QpSolution> {
        self.solve_traced(q, warm, opts, deadline, None)
    }

    /// As [`BoxQp::solve`], optionally recording the objective of every
    /// accepted iterate (a non-increasing sequence).
    pub fn solve_traced(
        &self,
        q: &DVector<f64>,
        warm: Option<&DVector<f64>>,
        opts: &SolverOptions,
        deadline: Option<Instant>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<QpSolution> {
        let n = self.dim();
        if q.len() != n {
            return Err(Error::dims(format!("linear term of length {} for QP of {n}", q.len())));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP linear term".into()));
        }
        let step = 1.0 / self.lipschitz;
        let mut x = match warm {
            Some(w) if w.len() == n => w.clone(),
            Some(_) => return Err(Error::dims("warm start length")),
            None => DVector::zeros(n),
        };
        self.project(&mut x);
        let mut gx = &self.hessian * &x + q;
        let mut fx = 0.5 * x.dot(&(&gx + q));
        if let Some(t) = trace.as_deref_mut() {
            t.push(fx);
        }
        let mut residual = self.residual(&x, &gx);
        if residual <= opts.tolerance {
            return Ok(QpSolution { u: x, iterations: 0, objective: fx, residual, status: SolveStatus::Converged });
        }
        let mut y = x.clone();
        let mut gy = gx.clone();
        let mut t = 1.0f64;
        let mut status = SolveStatus::MaxIterations;
        let mut iterations = 0;
        for it in 1..=opts.max_iterations {
            iterations = it;
            if let Some(d) = deadline {
                if Instant::now() >= d {
                    status = SolveStatus::TimeBudget;
                    iterations = it - 1;
                    break;
                }
            }
            let mut xn = &y - &gy * step;
            self.project(&mut xn);
            let mut gn = &self.hessian * &xn + q;
            let mut fnew = 0.5 * xn.dot(&(&gn + q));
            let mut restarted = false;
            if !(fnew <= fx) {
                // momentum overshot: restart from x with a plain projected step
                restarted = true;
                xn = &x - &gx * step;
                self.project(&mut xn);
                gn = &self.hessian * &xn + q;
                fnew = 0.5 * xn.dot(&(&gn + q));
                if !(fnew <= fx) {
                    if !fnew.is_finite() {
                        return Err(Error::NonFinite("QP objective".into()));
                    }
                    // no representable descent left at x
                    status = SolveStatus::Converged;
                    break;
                }
            }
            let t_next = if restarted { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
            let beta = if restarted { 0.0 } else { (t - 1.0) / t_next };
            y = &xn * (1.0 + beta) - &x * beta;
            gy = &gn * (1.0 + beta) - &gx * beta;
            x = xn;
            gx = gn;
            fx = fnew;
            t = t_next;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(fx);
            }
            residual = self.residual(&x, &gx);
            if residual <= opts.tolerance {
                status = SolveStatus::Converged;
                break;
            }
        }
        residual = self.residual(&x, &gx);
        Ok(QpSolution { u: x, iterations, objective: fx, residual, status })
    }
}
