use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment accumulators for a fixed, ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Tensor]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        AdamState::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update of every parameter from its grad slot.
    /// Parameters without a gradient are treated as having zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::dims(format!("optimizer tracks {} tensors, got {}", self.first.len(), params.len())));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first[i].len() {
                return Err(Error::dims(format!(
                    "parameter {i} has {} entries, moments have {}",
                    p.len(),
                    self.first[i].len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.values_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::from_vec(1, values.len(), values.to_vec()).unwrap();
        t.accumulate_grad(grad).unwrap();
        t
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(&[1.0, -2.0], &[0.0, 0.0]);
        let mut st = AdamState::for_params(AdamConfig::default(), &[&p]);
        st.step(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
        for g in [3.0, -0.002, 1e-3] {
            let mut p = param(&[0.5], &[g]);
            let cfg = AdamConfig::default();
            let mut st = AdamState::for_params(cfg, &[&p]);
            st.step(&mut [&mut p]).unwrap();
            let expect = 0.5 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((p.values()[0] - expect).abs() < 1e-18);
            assert!(((0.5 - p.values()[0]).abs() - cfg.learning_rate).abs() < 1e-8);
        }
    }

    #[test]
    fn second_identical_gradient_does_not_grow_step() {
        // Hand-computed with g = 1, β1 = 0.9, β2 = 0.999: step 2 has
        // m̂ = 0.19/0.19 and v̂ = 0.001999/0.001999, so its magnitude matches
        // step 1 and never exceeds it.
        let cfg = AdamConfig::default();
        let mut p = param(&[0.0], &[1.0]);
        let mut st = AdamState::for_params(cfg, &[&p]);
        st.step(&mut [&mut p]).unwrap();
        let after1 = p.values()[0];
        st.step(&mut [&mut p]).unwrap();
        let step2 = p.values()[0] - after1;
        let m = 0.9 * 0.1 + 0.1;
        let v: f64 = 0.999 * 0.001 + 0.001;
        let expect = -cfg.learning_rate * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.998001)).sqrt() + 1e-8);
        assert!((step2 - expect).abs() < 1e-15);
        assert!(step2.abs() <= after1.abs() + 1e-15);
    }

    #[test]
    fn mismatched_params_rejected() {
        let mut p = param(&[0.0, 1.0], &[1.0, 1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        assert!(matches!(st.step(&mut [&mut p]), Err(Error::DimensionMismatch(_))));
    }
}
