//! Reference trajectories as full 12-dimensional plant states.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant hover setpoints in (x, y, z, φ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: [f64; 4],
    /// `(switch time, setpoint)` pairs in increasing time order.
    pub steps: Vec<(f64, [f64; 4])>,
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for (t, _) in &self.steps {
            if !(*t > last) || !t.is_finite() {
                return Err(Error::Config("step times must be finite and increasing".into()));
            }
            last = *t;
        }
        Ok(())
    }

    pub fn setpoint(&self, t: f64) -> [f64; 4] {
        self.steps.iter().take_while(|(ts, _)| *ts <= t).last().map_or(self.initial, |(_, s)| *s)
    }

    /// Parses `t:x,y,z,phi; t:x,y,z,phi; …`.
    pub fn parse_steps(s: &str) -> Result<Vec<(f64, [f64; 4])>> {
        let bad = || Error::Config(format!("bad step schedule `{s}`"));
        s.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                let (t, v) = p.split_once(':').ok_or_else(bad)?;
                let vals = parse_list(v)?;
                let sp: [f64; 4] = vals.try_into().map_err(|_| bad())?;
                Ok((t.trim().parse().map_err(|_| bad())?, sp))
            })
            .collect()
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse().map_err(|_| Error::Config(format!("not a number list: `{s}`")))).collect()
}

/// Sinusoidal position curve with slow yaw; attitude and rates are those a
/// rigid body needs to follow it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lissajous {
    pub center: [f64; 3],
    pub amplitude: [f64; 3],
    /// Hz per axis.
    pub frequency: [f64; 3],
    /// rad per axis.
    pub phase: [f64; 3],
    pub yaw_amplitude: f64,
    pub yaw_frequency: f64,
    pub gravity: f64,
}

impl Default for Lissajous {
    fn default() -> Self {
        Lissajous {
            center: [0.0, 0.0, 2.0],
            amplitude: [1.0, 1.0, 0.3],
            frequency: [0.1, 0.2, 0.1],
            phase: [0.0, 0.0, 0.0],
            yaw_amplitude: 0.2,
            yaw_frequency: 0.05,
            gravity: 9.81,
        }
    }
}

impl Lissajous {
    fn kinematics(&self, t: f64) -> ([f64; 3], [f64; 3], [f64; 3], f64) {
        let mut p = [0.0; 3];
        let mut v = [0.0; 3];
        let mut a = [0.0; 3];
        for i in 0..3 {
            let w = TAU * self.frequency[i];
            let arg = w * t + self.phase[i];
            p[i] = self.center[i] + self.amplitude[i] * arg.sin();
            v[i] = self.amplitude[i] * w * arg.cos();
            a[i] = -self.amplitude[i] * w * w * arg.sin();
        }
        let psi = self.yaw_amplitude * (TAU * self.yaw_frequency * t).sin();
        (p, v, a, psi)
    }

    /// Roll, pitch, yaw aligning the body z-axis with the required thrust.
    fn euler(&self, t: f64) -> [f64; 3] {
        let (_, _, a, psi) = self.kinematics(t);
        let f = [a[0], a[1], a[2] + self.gravity];
        let norm = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
        let (sp, cp) = psi.sin_cos();
        // thrust direction expressed in the yaw-rotated frame
        let bx = (cp * f[0] + sp * f[1]) / norm;
        let by = (-sp * f[0] + cp * f[1]) / norm;
        let bz = f[2] / norm;
        let phi = (-by).asin();
        let theta = bx.atan2(bz);
        [phi, theta, psi]
    }

    pub fn state(&self, t: f64) -> [f64; 12] {
        let (p, v, _, _) = self.kinematics(t);
        let e = self.euler(t);
        let h = 1e-4;
        let (ep, em) = (self.euler(t + h), self.euler(t - h));
        let de: Vec<f64> = (0..3).map(|i| (ep[i] - em[i]) / (2.0 * h)).collect();
        let (sf, cf) = e[0].sin_cos();
        let (st, ct) = e[1].sin_cos();
        let rates = [de[0] - de[2] * st, cf * de[1] + sf * ct * de[2], -sf * de[1] + cf * ct * de[2]];
        let mut x = [0.0; 12];
        x[..3].copy_from_slice(&p);
        x[3..6].copy_from_slice(&v);
        x[6..9].copy_from_slice(&e);
        x[9..].copy_from_slice(&rates);
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reference {
    Steps(StepSchedule),
    Lissajous(Lissajous),
}

impl Reference {
    pub fn state(&self, t: f64) -> [f64; 12] {
        match self {
            Reference::Steps(s) => {
                let [x, y, z, phi] = s.setpoint(t);
                let mut out = [0.0; 12];
                out[..3].copy_from_slice(&[x, y, z]);
                out[6] = phi;
                out
            }
            Reference::Lissajous(l) => l.state(t),
        }
    }

    /// States at `t₀ + k·dt` for `k = 0 … len−1`.
    pub fn window(&self, t0: f64, dt: f64, len: usize) -> Vec<Vec<f64>> {
        (0..len).map(|k| self.state(t0 + k as f64 * dt).to_vec()).collect()
    }
}
