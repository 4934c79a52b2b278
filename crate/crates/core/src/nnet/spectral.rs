//! Spectral radius of a square matrix and its gradient with respect to the
//! matrix entries.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Below this |wᴴv| (unit-norm eigenvectors) the eigenpair sensitivity is
/// treated as degenerate and the top singular pair is used instead.
const DEGENERATE_PAIRING: f64 = 1e-10;

fn to_dmatrix(a: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.values())
}

/// Eigenvalues of a square matrix.
pub fn eigenvalues(a: &Tensor) -> Result<Vec<Complex64>> {
    if a.rows() != a.cols() {
        return Err(Error::dims(format!("eigenvalues of {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix for eigen-decomposition".into()));
    }
    let schur = Schur::try_new(to_dmatrix(a), f64::EPSILON, 10_000).ok_or(Error::ConvergenceFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// ρ(A) = max |λᵢ| together with ∂ρ/∂A.
///
/// The gradient uses the dominant eigenpair: with right eigenvector `v` and
/// left eigenvector `w`, ∂λ/∂Aᵢⱼ = conj(wᵢ)·vⱼ / (wᴴv) and
/// ∂ρ = Re(conj(λ)/|λ| · ∂λ). Both vectors come from inverse iteration on
/// `A − λI`.
pub fn spectral_radius(a: &Tensor) -> Result<(f64, Tensor)> {
    let eig = eigenvalues(a)?;
    let n = a.rows();
    let (lambda, rho) = eig.iter().map(|l| (*l, l.norm())).fold((Complex64::new(0.0, 0.0), -1.0), |best, cur| {
        if cur.1 > best.1 {
            cur
        } else {
            best
        }
    });
    if n == 0 {
        return Ok((0.0, Tensor::zeros(0, 0)));
    }

    // nudge the shift so the LU factors stay finite
    let nudge = Complex64::new(1e-10 * rho.max(1.0), 1e-10 * rho.max(1.0));
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a.get(i, j), 0.0);
        if i == j {
            v - lambda - nudge
        } else {
            v
        }
    });
    let right = inverse_iteration(&shifted).ok_or(Error::ConvergenceFailure)?;
    let left = inverse_iteration(&shifted.adjoint()).ok_or(Error::ConvergenceFailure)?;
    let pairing: Complex64 = left.iter().zip(&right).map(|(w, v)| w.conj() * v).sum();

    let mut grad = Tensor::zeros(n, n);
    if rho > 0.0 && pairing.norm() >= DEGENERATE_PAIRING {
        let phase = lambda.conj() / rho;
        for (i, w) in left.iter().enumerate() {
            for (j, v) in right.iter().enumerate() {
                grad.set(i, j, (phase * w.conj() * v / pairing).re);
            }
        }
    } else {
        top_singular_gradient(a, &mut grad)?;
    }
    if !grad.is_finite() {
        return Err(Error::ConvergenceFailure);
    }
    Ok((rho, grad))
}

/// Null vector of a nearly singular matrix by a few steps of inverse iteration.
fn inverse_iteration(m: &DMatrix<Complex64>) -> Option<Vec<Complex64>> {
    let n = m.nrows();
    let lu = m.clone().lu();
    let mut x = DVector::from_fn(n, |i, _| Complex64::new(1.0, 0.1 * i as f64));
    for _ in 0..3 {
        x = lu.solve(&x)?;
        let norm = x.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        x /= Complex64::new(norm, 0.0);
    }
    Some(x.iter().copied().collect())
}

/// ∂σ₁/∂A = u₁v₁ᵀ, an upper-bound surrogate for ρ at defective matrices.
fn top_singular_gradient(a: &Tensor, grad: &mut Tensor) -> Result<()> {
    let svd = to_dmatrix(a).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::ConvergenceFailure),
    };
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .ok_or(Error::ConvergenceFailure)?;
    let n = a.rows();
    for i in 0..n {
        for j in 0..n {
            grad.set(i, j, u[(i, k)] * v_t[(k, j)]);
        }
    }
    Ok(())
}
