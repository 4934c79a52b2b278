//! Rigid-body quadrotor used as ground truth: dynamics, RK4 integration,
//! synthetic flight generation, and the nonlinear MPC baseline.

mod dynamics;
mod generate;
mod nmpc;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use dynamics::{
    clamp_rotors, derivative, derivative_jacobians, dynamics, mix, step_rk4, step_vec, step_with_jacobians, wrench,
    InputJacobian, StateJacobian, StateVec, PITCH_GUARD,
};
pub use generate::{generate_flights, ExcitationConfig, InnerLoop, ManeuverKind};
pub use nmpc::{nmpc_control_step, DiscreteModel, LinearTestModel, Nmpc, NmpcConfig, NmpcDiagnostics, RigidBodyModel};

use crate::error::{Error, Result};

/// Physical parameters in SI units.
///
/// Mass and arm length describe a Pelican-class airframe (about 1.6 kg,
/// 85 cm motor-to-motor diagonal). Inertia, `k_f`, and `k_m` are invented:
/// `k_f` places hover at half of `rotor_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub mass: f64,
    /// Centre-to-rotor distance (half the motor-to-motor diagonal).
    pub arm_length: f64,
    pub inertia: [f64; 3],
    /// Thrust per rotor: `k_f·u²` with `u` in rad/s.
    pub k_f: f64,
    /// Reaction torque per rotor: `k_m·u²`.
    pub k_m: f64,
    pub gravity: f64,
    pub rotor_min: f64,
    pub rotor_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let mass = 1.6;
        let gravity = 9.81;
        let rotor_max = 1000.0;
        let hover = 0.5 * rotor_max;
        let k_f = mass * gravity / (4.0 * hover * hover);
        PlantParams {
            mass,
            arm_length: 0.425,
            inertia: [0.01, 0.01, 0.02],
            k_f,
            k_m: 0.016 * k_f,
            gravity,
            rotor_min: 0.0,
            rotor_max,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mass,
            self.arm_length,
            self.inertia[0],
            self.inertia[1],
            self.inertia[2],
            self.k_f,
            self.k_m,
            self.gravity,
            self.rotor_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("plant parameters must be strictly positive".into()));
        }
        if !(self.rotor_min >= 0.0 && self.rotor_min < self.rotor_max) {
            return Err(Error::Config("rotor limits must satisfy 0 ≤ min < max".into()));
        }
        Ok(())
    }

    /// Lever arm of each rotor about the body x and y axes (X configuration).
    pub fn moment_arm(&self) -> f64 {
        self.arm_length / std::f64::consts::SQRT_2
    }

    /// Rotor speed at which four rotors balance gravity.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.k_f)).sqrt()
    }

    /// Reads `key = value` pairs; unknown keys are rejected, missing keys keep defaults.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut p = PlantParams::default();
        for (k, v) in kv {
            let x: f64 = v.parse().map_err(|_| Error::Config(format!("plant.{k}: not a number: {v}")))?;
            match k.as_str() {
                "mass" => p.mass = x,
                "arm_length" => p.arm_length = x,
                "inertia_x" => p.inertia[0] = x,
                "inertia_y" => p.inertia[1] = x,
                "inertia_z" => p.inertia[2] = x,
                "k_f" => p.k_f = x,
                "k_m" => p.k_m = x,
                "gravity" => p.gravity = x,
                "rotor_min" => p.rotor_min = x,
                "rotor_max" => p.rotor_max = x,
                other => return Err(Error::Config(format!("unknown plant key `{other}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("mass", self.mass),
            ("arm_length", self.arm_length),
            ("inertia_x", self.inertia[0]),
            ("inertia_y", self.inertia[1]),
            ("inertia_z", self.inertia[2]),
            ("k_f", self.k_f),
            ("k_m", self.k_m),
            ("gravity", self.gravity),
            ("rotor_min", self.rotor_min),
            ("rotor_max", self.rotor_max),
        ];
        pairs.iter().map(|(k, v)| (k.to_string(), format!("{v:e}"))).collect()
    }
}

/// Rigid-body quadrotor state: world-frame position and velocity, Z-Y-X
/// Euler angles (φ, θ, ψ), and body rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub euler: Vector3<f64>,
    pub rates: Vector3<f64>,
}

impl PlantState {
    pub fn hover_at(position: [f64; 3]) -> Self {
        PlantState { position: Vector3::from(position), ..Default::default() }
    }

    pub fn to_vector(&self) -> StateVec {
        let mut v = StateVec::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.euler);
        v.fixed_rows_mut::<3>(9).copy_from(&self.rates);
        v
    }

    pub fn from_vector(v: &StateVec) -> Self {
        PlantState {
            position: v.fixed_rows::<3>(0).into(),
            velocity: v.fixed_rows::<3>(3).into(),
            euler: v.fixed_rows::<3>(6).into(),
            rates: v.fixed_rows::<3>(9).into(),
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::dims(format!("plant state needs 12 values, got {}", v.len())));
        }
        Ok(PlantState::from_vector(&StateVec::from_column_slice(v)))
    }

    pub fn to_array(&self) -> [f64; 12] {
        let v = self.to_vector();
        let mut out = [0.0; 12];
        out.copy_from_slice(v.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_match_airframe() {
        let p = PlantParams::default();
        p.validate().unwrap();
        assert_eq!(p.mass, 1.6);
        assert_eq!(p.arm_length, 0.425);
        assert!((p.hover_speed() - 500.0).abs() < 1e-9);
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let p = PlantParams::default();
        let back = PlantParams::from_kv(&p.to_kv()).unwrap();
        assert_eq!(p, back);
        let mut kv = BTreeMap::new();
        kv.insert("mass".to_string(), "-1".to_string());
        assert!(PlantParams::from_kv(&kv).is_err());
        let mut kv = BTreeMap::new();
        kv.insert("colour".to_string(), "1".to_string());
        assert!(PlantParams::from_kv(&kv).is_err());
    }

    #[test]
    fn state_vector_layout() {
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        let s = PlantState::from_slice(&v).unwrap();
        assert_eq!(s.velocity, Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(s.to_array().to_vec(), v);
    }
}
