//! Synthetic flight data: a PD attitude/thrust inner loop flies randomized
//! waypoint and sinusoid maneuvers while the rotor commands are perturbed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{clamp_rotors, mix, step_vec, StateVec};
use super::PlantParams;
use crate::dataset::FlightRecord;
use crate::error::{Error, Result};
use crate::parallel::{map_ordered, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManeuverKind {
    Waypoints,
    Sinusoid,
}

/// Gains of the stabilizing loop used only for data generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerLoop {
    pub pos_kp: f64,
    pub pos_kd: f64,
    pub att_kp: f64,
    pub att_kd: f64,
    pub yaw_kp: f64,
    pub yaw_kd: f64,
    pub max_tilt: f64,
    pub max_horizontal_acc: f64,
    pub max_vertical_acc: f64,
}

impl Default for InnerLoop {
    fn default() -> Self {
        InnerLoop {
            pos_kp: 4.0,
            pos_kd: 3.5,
            att_kp: 144.0,
            att_kd: 24.0,
            yaw_kp: 16.0,
            yaw_kd: 8.0,
            max_tilt: 0.5,
            max_horizontal_acc: 4.0,
            max_vertical_acc: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub records: usize,
    pub duration: f64,
    pub dt: f64,
    /// Centre of the waypoint box (m).
    pub center: [f64; 3],
    /// Half extents of the waypoint box (m).
    pub half_box: [f64; 3],
    /// Yaw references are drawn from ±this (rad).
    pub yaw_amplitude: f64,
    /// Waypoint hold time range (s).
    pub hold: [f64; 2],
    /// Sinusoid frequency range (Hz).
    pub frequency: [f64; 2],
    /// Natural frequency of the waypoint smoothing filter (rad/s).
    pub reference_bandwidth: f64,
    /// Peak rotor-command perturbation (rad/s).
    pub perturbation: f64,
    /// Perturbation hold range in samples.
    pub perturbation_hold: [usize; 2],
    pub max_attempts: usize,
    pub inner: InnerLoop,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            records: 40,
            duration: 5.0,
            dt: 0.01,
            center: [0.0, 0.0, 2.0],
            half_box: [1.2, 1.2, 0.4],
            yaw_amplitude: 0.25,
            hold: [1.0, 2.5],
            frequency: [0.05, 0.25],
            reference_bandwidth: 1.5,
            perturbation: 10.0,
            perturbation_hold: [5, 30],
            max_attempts: 20,
            inner: InnerLoop::default(),
        }
    }
}

impl ExcitationConfig {
    pub fn samples_per_record(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.duration >= self.dt) || self.records == 0 {
            return Err(Error::Config("excitation needs records > 0 and duration ≥ dt > 0".into()));
        }
        if self.hold[0] <= 0.0 || self.hold[1] < self.hold[0] {
            return Err(Error::Config("bad waypoint hold range".into()));
        }
        if self.frequency[0] <= 0.0 || self.frequency[1] < self.frequency[0] {
            return Err(Error::Config("bad sinusoid frequency range".into()));
        }
        if self.perturbation_hold[0] == 0 || self.perturbation_hold[1] < self.perturbation_hold[0] {
            return Err(Error::Config("bad perturbation hold range".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Position/yaw reference generator.
struct Reference {
    kind: ManeuverKind,
    // waypoint state
    target: [f64; 4],
    pos: [f64; 4],
    vel: [f64; 4],
    next_switch: f64,
    // sinusoid parameters per axis (x, y, z, yaw)
    amp: [f64; 4],
    omega: [f64; 4],
    phase: [f64; 4],
}

impl Reference {
    fn new(cfg: &ExcitationConfig, start: [f64; 3], rng: &mut ChaCha8Rng) -> Self {
        let kind = if rng.random_bool(0.5) { ManeuverKind::Waypoints } else { ManeuverKind::Sinusoid };
        let pos = [start[0], start[1], start[2], 0.0];
        let mut amp = [0.0; 4];
        let mut omega = [0.0; 4];
        let mut phase = [0.0; 4];
        for i in 0..4 {
            let limit = if i < 3 { cfg.half_box[i] } else { cfg.yaw_amplitude };
            amp[i] = uniform(rng, 0.2, 0.8) * limit;
            omega[i] = 2.0 * std::f64::consts::PI * uniform(rng, cfg.frequency[0], cfg.frequency[1]);
            phase[i] = uniform(rng, 0.0, 2.0 * std::f64::consts::PI);
        }
        let mut r = Reference { kind, target: pos, pos, vel: [0.0; 4], next_switch: 0.0, amp, omega, phase };
        if kind == ManeuverKind::Sinusoid {
            // centre the oscillation so it starts at the initial position
            for (i, s) in start.iter().enumerate() {
                r.pos[i] = s - r.amp[i] * r.phase[i].sin();
            }
            r.pos[3] = -r.amp[3] * r.phase[3].sin();
        }
        r
    }

    /// Returns (position+yaw, velocity+yaw-rate) references at time `t`.
    fn sample(&mut self, cfg: &ExcitationConfig, t: f64, rng: &mut ChaCha8Rng) -> ([f64; 4], [f64; 4]) {
        match self.kind {
            ManeuverKind::Waypoints => {
                if t >= self.next_switch {
                    for i in 0..3 {
                        let lo = cfg.center[i] - cfg.half_box[i];
                        let hi = cfg.center[i] + cfg.half_box[i];
                        self.target[i] = uniform(rng, lo, hi);
                    }
                    self.target[3] = uniform(rng, -cfg.yaw_amplitude, cfg.yaw_amplitude);
                    self.next_switch = t + uniform(rng, cfg.hold[0], cfg.hold[1]);
                }
                let w = cfg.reference_bandwidth;
                let out = (self.pos, self.vel);
                for i in 0..4 {
                    let acc = w * w * (self.target[i] - self.pos[i]) - 2.0 * w * self.vel[i];
                    self.pos[i] += cfg.dt * self.vel[i];
                    self.vel[i] += cfg.dt * acc;
                }
                out
            }
            ManeuverKind::Sinusoid => {
                let mut p = [0.0; 4];
                let mut v = [0.0; 4];
                for i in 0..4 {
                    let a = self.omega[i] * t + self.phase[i];
                    p[i] = self.pos[i] + self.amp[i] * a.sin();
                    v[i] = self.amp[i] * self.omega[i] * a.cos();
                }
                (p, v)
            }
        }
    }
}

/// Inner-loop rotor commands tracking a position/yaw reference.
fn inner_loop(p: &PlantParams, g: &InnerLoop, x: &StateVec, pos: [f64; 4], vel: [f64; 4]) -> [f64; 4] {
    let mut acc = [0.0; 3];
    for i in 0..3 {
        acc[i] = g.pos_kp * (pos[i] - x[i]) + g.pos_kd * (vel[i] - x[3 + i]);
    }
    let h = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
    if h > g.max_horizontal_acc {
        acc[0] *= g.max_horizontal_acc / h;
        acc[1] *= g.max_horizontal_acc / h;
    }
    acc[2] = acc[2].clamp(-g.max_vertical_acc, g.max_vertical_acc);
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let (sp, cp) = psi.sin_cos();
    let theta_d = ((cp * acc[0] + sp * acc[1]) / p.gravity).clamp(-g.max_tilt, g.max_tilt);
    let phi_d = ((sp * acc[0] - cp * acc[1]) / p.gravity).clamp(-g.max_tilt, g.max_tilt);
    let thrust = p.mass * (p.gravity + acc[2]) / (phi.cos() * theta.cos()).max(0.5);
    let [jx, jy, jz] = p.inertia;
    let tx = jx * (g.att_kp * (phi_d - phi) - g.att_kd * x[9]);
    let ty = jy * (g.att_kp * (theta_d - theta) - g.att_kd * x[10]);
    let tz = jz * (g.yaw_kp * (pos[3] - psi) + g.yaw_kd * (vel[3] - x[11]));
    mix(p, [thrust, tx, ty, tz])
}

fn record_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (attempt as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn fly_once(p: &PlantParams, cfg: &ExcitationConfig, rng: &mut ChaCha8Rng) -> Result<FlightRecord> {
    let n = cfg.samples_per_record();
    let start: [f64; 3] = std::array::from_fn(|i| cfg.center[i] + uniform(rng, -0.5, 0.5) * cfg.half_box[i]);
    let mut x = StateVec::zeros();
    for i in 0..3 {
        x[i] = start[i];
    }
    let mut reference = Reference::new(cfg, start, rng);
    let mut perturb = [0.0; 4];
    let mut perturb_left = 0usize;
    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * cfg.dt;
        let (pos, vel) = reference.sample(cfg, t, rng);
        if perturb_left == 0 {
            for v in &mut perturb {
                *v = uniform(rng, -cfg.perturbation, cfg.perturbation);
            }
            perturb_left = rng.random_range(cfg.perturbation_hold[0]..=cfg.perturbation_hold[1]);
        }
        perturb_left -= 1;
        let mut u = inner_loop(p, &cfg.inner, &x, pos, vel);
        for i in 0..4 {
            u[i] += perturb[i];
        }
        let (u, _) = clamp_rotors(p, &u);
        states.push(x.as_slice().to_vec());
        inputs.push(u.to_vec());
        if k + 1 < n {
            x = step_vec(p, &x, &u, cfg.dt)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("simulated state".into()));
            }
        }
    }
    FlightRecord::with_default_names(cfg.dt, states, inputs)
}

/// Simulates `cfg.records` flights. Records are independent (one RNG stream
/// per record), so parallel and sequential execution give identical output.
pub fn generate_flights(
    p: &PlantParams,
    cfg: &ExcitationConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<FlightRecord>> {
    p.validate()?;
    cfg.validate()?;
    let indices: Vec<usize> = (0..cfg.records).collect();
    map_ordered(exec, &indices, |&i| {
        for attempt in 0..cfg.max_attempts {
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, i, attempt));
            match fly_once(p, cfg, &mut rng) {
                Ok(r) => return Ok(r),
                Err(Error::EulerSingularity(_)) | Err(Error::NonFinite(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::GenerationFailed(cfg.max_attempts))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExcitationConfig {
        ExcitationConfig { records: 4, duration: 2.0, ..Default::default() }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = PlantParams::default();
        let a = generate_flights(&p, &small(), 7, Execution::Sequential).unwrap();
        let b = generate_flights(&p, &small(), 7, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let c = generate_flights(&p, &small(), 8, Execution::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn records_respect_limits() {
        let p = PlantParams::default();
        let cfg = small();
        let recs = generate_flights(&p, &cfg, 1, Execution::Parallel).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert_eq!(r.len(), cfg.samples_per_record());
            assert_eq!(r.state_dim(), 12);
            for (x, u) in r.states.iter().zip(&r.inputs) {
                assert!(x[7].abs() < super::super::PITCH_GUARD);
                assert!(u.iter().all(|v| (p.rotor_min..=p.rotor_max).contains(v)));
            }
        }
    }
}
