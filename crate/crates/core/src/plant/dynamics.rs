use nalgebra::{SMatrix, SVector, Vector3};

use super::{PlantParams, PlantState};
use crate::error::{Error, Result};

pub type StateVec = SVector<f64, 12>;
pub type StateJacobian = SMatrix<f64, 12, 12>;
pub type InputJacobian = SMatrix<f64, 12, 4>;

/// |θ| at or beyond this raises [`Error::EulerSingularity`].
pub const PITCH_GUARD: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;

// state layout
const POS: usize = 0;
const VEL: usize = 3;
const EUL: usize = 6;
const RATE: usize = 9;

/// Rotor commands clamped to the rotor limits, plus whether clamping occurred.
pub fn clamp_rotors(p: &PlantParams, u: &[f64; 4]) -> ([f64; 4], bool) {
    let mut out = *u;
    let mut clamped = false;
    for v in &mut out {
        let c = v.clamp(p.rotor_min, p.rotor_max);
        clamped |= c != *v;
        *v = c;
    }
    (out, clamped)
}

/// Collective thrust and body torques `[T, τx, τy, τz]` for rotor speeds `u`
/// (X configuration; rotors 1 and 3 spin in the positive yaw sense).
pub fn wrench(p: &PlantParams, u: &[f64; 4]) -> [f64; 4] {
    let f: Vec<f64> = u.iter().map(|w| p.k_f * w * w).collect();
    let d = p.moment_arm();
    let c = p.k_m / p.k_f;
    [f.iter().sum(), d * (f[0] + f[1] - f[2] - f[3]), d * (-f[0] + f[1] + f[2] - f[3]), c * (f[0] - f[1] + f[2] - f[3])]
}

/// Rotor speeds producing a wrench `[T, τx, τy, τz]`; negative per-rotor
/// forces are floored at zero.
pub fn mix(p: &PlantParams, w: [f64; 4]) -> [f64; 4] {
    let d = p.moment_arm();
    let c = p.k_m / p.k_f;
    let [t, tx, ty, tz] = w;
    let f = [
        t / 4.0 + tx / (4.0 * d) - ty / (4.0 * d) + tz / (4.0 * c),
        t / 4.0 + tx / (4.0 * d) + ty / (4.0 * d) - tz / (4.0 * c),
        t / 4.0 - tx / (4.0 * d) + ty / (4.0 * d) + tz / (4.0 * c),
        t / 4.0 - tx / (4.0 * d) - ty / (4.0 * d) - tz / (4.0 * c),
    ];
    f.map(|fi| (fi.max(0.0) / p.k_f).sqrt())
}

fn check_pitch(x: &StateVec) -> Result<()> {
    let theta = x[EUL + 1];
    if !theta.is_finite() || theta.abs() >= PITCH_GUARD {
        return Err(Error::EulerSingularity(theta));
    }
    Ok(())
}

/// Third column of R = Rz(ψ)·Ry(θ)·Rx(φ), the body z-axis in the world frame.
fn body_z(phi: f64, theta: f64, psi: f64) -> Vector3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Vector3::new(cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf)
}

/// Continuous-time state derivative for clamped rotor commands.
pub fn derivative(p: &PlantParams, x: &StateVec, u: &[f64; 4]) -> Result<StateVec> {
    check_pitch(x)?;
    let (u, _) = clamp_rotors(p, u);
    let [thrust, tx, ty, tz] = wrench(p, &u);
    let (phi, theta, psi) = (x[EUL], x[EUL + 1], x[EUL + 2]);
    let (wp, wq, wr) = (x[RATE], x[RATE + 1], x[RATE + 2]);
    let [jx, jy, jz] = p.inertia;

    let mut dx = StateVec::zeros();
    for i in 0..3 {
        dx[POS + i] = x[VEL + i];
    }
    let acc = body_z(phi, theta, psi) * (thrust / p.mass) - Vector3::new(0.0, 0.0, p.gravity);
    for i in 0..3 {
        dx[VEL + i] = acc[i];
    }
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let tt = st / ct;
    dx[EUL] = wp + (sf * wq + cf * wr) * tt;
    dx[EUL + 1] = cf * wq - sf * wr;
    dx[EUL + 2] = (sf * wq + cf * wr) / ct;
    dx[RATE] = (tx - (jz - jy) * wq * wr) / jx;
    dx[RATE + 1] = (ty - (jx - jz) * wp * wr) / jy;
    dx[RATE + 2] = (tz - (jy - jx) * wp * wq) / jz;
    Ok(dx)
}

/// Derivative for a [`PlantState`]; also reports whether `u` was clamped.
pub fn dynamics(p: &PlantParams, s: &PlantState, u: &[f64; 4]) -> Result<(StateVec, bool)> {
    let (_, clamped) = clamp_rotors(p, u);
    Ok((derivative(p, &s.to_vector(), u)?, clamped))
}

/// Analytic Jacobians ∂f/∂x and ∂f/∂u of [`derivative`]. Components of `u`
/// outside the rotor limits have zero sensitivity.
pub fn derivative_jacobians(p: &PlantParams, x: &StateVec, u: &[f64; 4]) -> Result<(StateJacobian, InputJacobian)> {
    check_pitch(x)?;
    let (uc, _) = clamp_rotors(p, u);
    let [thrust, ..] = wrench(p, &uc);
    let (phi, theta, psi) = (x[EUL], x[EUL + 1], x[EUL + 2]);
    let (wp, wq, wr) = (x[RATE], x[RATE + 1], x[RATE + 2]);
    let [jx, jy, jz] = p.inertia;
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let tt = st / ct;

    let mut fx = StateJacobian::zeros();
    for i in 0..3 {
        fx[(POS + i, VEL + i)] = 1.0;
    }
    let k = thrust / p.mass;
    let d_phi = Vector3::new(-cp * st * sf + sp * cf, -sp * st * sf - cp * cf, -ct * sf);
    let d_theta = Vector3::new(cp * ct * cf, sp * ct * cf, -st * cf);
    let d_psi = Vector3::new(-sp * st * cf + cp * sf, cp * st * cf + sp * sf, 0.0);
    for i in 0..3 {
        fx[(VEL + i, EUL)] = k * d_phi[i];
        fx[(VEL + i, EUL + 1)] = k * d_theta[i];
        fx[(VEL + i, EUL + 2)] = k * d_psi[i];
    }

    let a = sf * wq + cf * wr;
    let b = cf * wq - sf * wr;
    fx[(EUL, EUL)] = b * tt;
    fx[(EUL, EUL + 1)] = a / (ct * ct);
    fx[(EUL, RATE)] = 1.0;
    fx[(EUL, RATE + 1)] = sf * tt;
    fx[(EUL, RATE + 2)] = cf * tt;
    fx[(EUL + 1, EUL)] = -a;
    fx[(EUL + 1, RATE + 1)] = cf;
    fx[(EUL + 1, RATE + 2)] = -sf;
    fx[(EUL + 2, EUL)] = b / ct;
    fx[(EUL + 2, EUL + 1)] = a * st / (ct * ct);
    fx[(EUL + 2, RATE + 1)] = sf / ct;
    fx[(EUL + 2, RATE + 2)] = cf / ct;

    fx[(RATE, RATE + 1)] = -(jz - jy) * wr / jx;
    fx[(RATE, RATE + 2)] = -(jz - jy) * wq / jx;
    fx[(RATE + 1, RATE)] = -(jx - jz) * wr / jy;
    fx[(RATE + 1, RATE + 2)] = -(jx - jz) * wp / jy;
    fx[(RATE + 2, RATE)] = -(jy - jx) * wq / jz;
    fx[(RATE + 2, RATE + 1)] = -(jy - jx) * wp / jz;

    // ∂F_i/∂u_i = 2·k_f·u_i, then through the thrust direction and mixer.
    let mut fu = InputJacobian::zeros();
    let z = body_z(phi, theta, psi);
    let d = p.moment_arm();
    let c = p.k_m / p.k_f;
    let mix_rows = [[d, d, -d, -d], [-d, d, d, -d], [c, -c, c, -c]];
    for i in 0..4 {
        let inside = u[i] >= p.rotor_min && u[i] <= p.rotor_max;
        if !inside {
            continue;
        }
        let df = 2.0 * p.k_f * uc[i];
        for r in 0..3 {
            fu[(VEL + r, i)] = z[r] * df / p.mass;
        }
        fu[(RATE, i)] = mix_rows[0][i] * df / jx;
        fu[(RATE + 1, i)] = mix_rows[1][i] * df / jy;
        fu[(RATE + 2, i)] = mix_rows[2][i] * df / jz;
    }
    Ok((fx, fu))
}

/// One classical RK4 step with the input held over the interval.
pub fn step_vec(p: &PlantParams, x: &StateVec, u: &[f64; 4], dt: f64) -> Result<StateVec> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let k1 = derivative(p, x, u)?;
    let k2 = derivative(p, &(x + k1 * (0.5 * dt)), u)?;
    let k3 = derivative(p, &(x + k2 * (0.5 * dt)), u)?;
    let k4 = derivative(p, &(x + k3 * dt), u)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    check_pitch(&next)?;
    Ok(next)
}

pub fn step_rk4(p: &PlantParams, s: &PlantState, u: &[f64; 4], dt: f64) -> Result<PlantState> {
    Ok(PlantState::from_vector(&step_vec(p, &s.to_vector(), u, dt)?))
}

/// RK4 step together with its exact Jacobians with respect to the state and
/// the held input, obtained by differentiating each stage.
pub fn step_with_jacobians(
    p: &PlantParams,
    x: &StateVec,
    u: &[f64; 4],
    dt: f64,
) -> Result<(StateVec, StateJacobian, InputJacobian)> {
    let h = dt;
    let eye = StateJacobian::identity();
    let k1 = derivative(p, x, u)?;
    let (f1x, f1u) = derivative_jacobians(p, x, u)?;
    let x2 = x + k1 * (0.5 * h);
    let k2 = derivative(p, &x2, u)?;
    let (f2x, f2u) = derivative_jacobians(p, &x2, u)?;
    let x3 = x + k2 * (0.5 * h);
    let k3 = derivative(p, &x3, u)?;
    let (f3x, f3u) = derivative_jacobians(p, &x3, u)?;
    let x4 = x + k3 * h;
    let k4 = derivative(p, &x4, u)?;
    let (f4x, f4u) = derivative_jacobians(p, &x4, u)?;

    let d1x = f1x;
    let d1u = f1u;
    let d2x = f2x * (eye + d1x * (0.5 * h));
    let d2u = f2x * d1u * (0.5 * h) + f2u;
    let d3x = f3x * (eye + d2x * (0.5 * h));
    let d3u = f3x * d2u * (0.5 * h) + f3u;
    let d4x = f4x * (eye + d3x * h);
    let d4u = f4x * d3u * h + f4u;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    check_pitch(&next)?;
    let ax = eye + (d1x + d2x * 2.0 + d3x * 2.0 + d4x) * (h / 6.0);
    let bu = (d1u + d2u * 2.0 + d3u * 2.0 + d4u) * (h / 6.0);
    Ok((next, ax, bu))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover_state() -> StateVec {
        let mut x = StateVec::zeros();
        x[2] = 2.0;
        x
    }

    #[test]
    fn hover_balances_forces() {
        let p = PlantParams::default();
        let u = [p.hover_speed(); 4];
        let dx = derivative(&p, &hover_state(), &u).unwrap();
        assert!(dx.norm() < 1e-12, "{dx}");
        assert!((p.hover_speed() - 0.5 * p.rotor_max).abs() < 1e-9);
    }

    #[test]
    fn zero_input_free_fall() {
        let p = PlantParams::default();
        let dx = derivative(&p, &hover_state(), &[0.0; 4]).unwrap();
        assert_eq!((dx[3], dx[4]), (0.0, 0.0));
        assert!((dx[5] + p.gravity).abs() < 1e-15);
    }

    #[test]
    fn diagonal_increase_is_pure_yaw() {
        let p = PlantParams::default();
        let h = p.hover_speed();
        let u = [h + 50.0, h, h + 50.0, h];
        let dx = derivative(&p, &hover_state(), &u).unwrap();
        assert!(dx[RATE].abs() < 1e-12 && dx[RATE + 1].abs() < 1e-12);
        // rotors 1 and 3 carry the positive yaw-torque sign
        let expect = p.k_m * 2.0 * ((h + 50.0).powi(2) - h * h) / p.inertia[2];
        assert!((dx[RATE + 2] - expect).abs() < 1e-9);
        assert!(dx[RATE + 2] > 0.0);
    }

    #[test]
    fn mixer_inverts_wrench() {
        let p = PlantParams::default();
        let u = [480.0, 510.0, 530.0, 470.0];
        let back = mix(&p, wrench(&p, &u));
        for (a, b) in u.iter().zip(back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pitch_guard() {
        let p = PlantParams::default();
        let mut x = hover_state();
        x[EUL + 1] = PITCH_GUARD + 1e-6;
        assert!(matches!(derivative(&p, &x, &[500.0; 4]), Err(Error::EulerSingularity(_))));
    }

    #[test]
    fn clamping_reported() {
        let p = PlantParams::default();
        let s = PlantState::from_vector(&hover_state());
        let (_, clamped) = dynamics(&p, &s, &[2000.0, 500.0, 500.0, 500.0]).unwrap();
        assert!(clamped);
        let (_, clamped) = dynamics(&p, &s, &[500.0; 4]).unwrap();
        assert!(!clamped);
    }

    #[test]
    fn derivative_jacobian_matches_differences() {
        let p = PlantParams::default();
        let mut x = StateVec::zeros();
        let vals = [0.3, -0.2, 1.5, 0.4, -0.1, 0.2, 0.15, -0.25, 0.6, 0.5, -0.7, 0.3];
        for i in 0..12 {
            x[i] = vals[i];
        }
        let u = [480.0, 520.0, 505.0, 470.0];
        let (fx, fu) = derivative_jacobians(&p, &x, &u).unwrap();
        let h = 1e-6;
        for j in 0..12 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let col = (derivative(&p, &xp, &u).unwrap() - derivative(&p, &xm, &u).unwrap()) / (2.0 * h);
            for i in 0..12 {
                assert!((col[i] - fx[(i, j)]).abs() < 1e-6 * (1.0 + col[i].abs()), "fx[{i},{j}]");
            }
        }
        for j in 0..4 {
            let mut up = u;
            let mut um = u;
            up[j] += 1e-3;
            um[j] -= 1e-3;
            let col = (derivative(&p, &x, &up).unwrap() - derivative(&p, &x, &um).unwrap()) / 2e-3;
            for i in 0..12 {
                assert!((col[i] - fu[(i, j)]).abs() < 1e-6 * (1.0 + col[i].abs()), "fu[{i},{j}]");
            }
        }
    }
}
