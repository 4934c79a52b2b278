use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FlightRecord;
use crate::error::{Error, Result};

/// Per-feature min-max scaling onto [-1, 1]:
/// `x' = 2·(x − min)/(max − min) − 1`.
///
/// Values outside the fitted range map outside [-1, 1]; nothing is clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
}

fn scale_into(min: &[f64], max: &[f64], v: &[f64], what: &str) -> Result<Vec<f64>> {
    if v.len() != min.len() {
        return Err(Error::dims(format!("{what} vector of length {} for {} features", v.len(), min.len())));
    }
    Ok(v.iter().zip(min.iter().zip(max)).map(|(&x, (&lo, &hi))| 2.0 * (x - lo) / (hi - lo) - 1.0).collect())
}

fn unscale(min: &[f64], max: &[f64], v: &[f64], what: &str) -> Result<Vec<f64>> {
    if v.len() != min.len() {
        return Err(Error::dims(format!("{what} vector of length {} for {} features", v.len(), min.len())));
    }
    Ok(v.iter().zip(min.iter().zip(max)).map(|(&x, (&lo, &hi))| lo + (x + 1.0) * 0.5 * (hi - lo)).collect())
}

impl Normalizer {
    /// Validates that every feature has `max > min`.
    pub fn new(state_min: Vec<f64>, state_max: Vec<f64>, input_min: Vec<f64>, input_max: Vec<f64>) -> Result<Self> {
        if state_min.len() != state_max.len() || input_min.len() != input_max.len() {
            return Err(Error::dims("min/max vectors differ in length"));
        }
        let n = Normalizer { state_min, state_max, input_min, input_max };
        let pairs = n.state_min.iter().zip(&n.state_max).chain(n.input_min.iter().zip(&n.input_max));
        for (i, (lo, hi)) in pairs.enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::ConstantFeature(i));
            }
        }
        Ok(n)
    }

    /// Identity-like map used where data is already in normalised units.
    pub fn unit(state_dim: usize, input_dim: usize) -> Self {
        Normalizer {
            state_min: vec![-1.0; state_dim],
            state_max: vec![1.0; state_dim],
            input_min: vec![-1.0; input_dim],
            input_max: vec![1.0; input_dim],
        }
    }

    /// Pooled per-feature extrema over every sample of every record.
    /// Feature indices in `ConstantFeature` count states first, then inputs.
    pub fn fit(records: &[&FlightRecord]) -> Result<Self> {
        let first = records.iter().find(|r| !r.states.is_empty()).ok_or(Error::EmptyDataset)?;
        let (nx, nu) = (first.state_dim(), first.input_dim());
        let mut smin = vec![f64::INFINITY; nx];
        let mut smax = vec![f64::NEG_INFINITY; nx];
        let mut imin = vec![f64::INFINITY; nu];
        let mut imax = vec![f64::NEG_INFINITY; nu];
        for r in records {
            if r.state_dim() != nx || r.input_dim() != nu {
                return Err(Error::dims("records disagree on state/input dimension"));
            }
            for (x, u) in r.states.iter().zip(&r.inputs) {
                for i in 0..nx {
                    smin[i] = smin[i].min(x[i]);
                    smax[i] = smax[i].max(x[i]);
                }
                for i in 0..nu {
                    imin[i] = imin[i].min(u[i]);
                    imax[i] = imax[i].max(u[i]);
                }
            }
        }
        Normalizer::new(smin, smax, imin, imax)
    }

    pub fn state_dim(&self) -> usize {
        self.state_min.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_min.len()
    }

    pub fn normalize_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        scale_into(&self.state_min, &self.state_max, x, "state")
    }

    pub fn denormalize_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        unscale(&self.state_min, &self.state_max, x, "state")
    }

    pub fn normalize_input(&self, u: &[f64]) -> Result<Vec<f64>> {
        scale_into(&self.input_min, &self.input_max, u, "input")
    }

    pub fn denormalize_input(&self, u: &[f64]) -> Result<Vec<f64>> {
        unscale(&self.input_min, &self.input_max, u, "input")
    }

    /// Raw units per normalised unit, `(max − min)/2`, for each state feature.
    pub fn state_half_range(&self) -> Vec<f64> {
        self.state_min.iter().zip(&self.state_max).map(|(lo, hi)| 0.5 * (hi - lo)).collect()
    }

    pub fn input_half_range(&self) -> Vec<f64> {
        self.input_min.iter().zip(&self.input_max).map(|(lo, hi)| 0.5 * (hi - lo)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let n: Normalizer = serde_json::from_str(&s)?;
        Normalizer::new(n.state_min, n.state_max, n.input_min, n.input_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(values: &[f64]) -> FlightRecord {
        FlightRecord::new(
            0.01,
            vec!["a".into()],
            vec!["u_1".into()],
            values.iter().map(|&v| vec![v]).collect(),
            values.iter().map(|&v| vec![v * 2.0 + 1.0]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn fit_extrema_single_record() {
        let r = rec(&[0.0, 10.0]);
        let n = Normalizer::fit(&[&r]).unwrap();
        assert_eq!(n.state_min, vec![0.0]);
        assert_eq!(n.state_max, vec![10.0]);
    }

    #[test]
    fn fit_pools_records() {
        let a = rec(&[0.0, 4.0]);
        let b = rec(&[2.0, 10.0]);
        let n = Normalizer::fit(&[&a, &b]).unwrap();
        assert_eq!((n.state_min[0], n.state_max[0]), (0.0, 10.0));
    }

    #[test]
    fn constant_feature_rejected() {
        let r = rec(&[3.3, 3.3, 3.3]);
        assert!(matches!(Normalizer::fit(&[&r]), Err(Error::ConstantFeature(0))));
        assert!(matches!(Normalizer::fit(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn normalize_examples() {
        let n = Normalizer::new(vec![0.0, -2.0], vec![10.0, 2.0], vec![0.0], vec![1.0]).unwrap();
        assert_eq!(n.normalize_state(&[5.0, -2.0]).unwrap(), vec![0.0, -1.0]);
        assert_eq!(n.normalize_state(&[10.0, 2.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(n.denormalize_state(&[0.0, 0.0]).unwrap(), vec![5.0, 0.0]);
        assert_eq!(n.denormalize_state(&[1.0, 1.0]).unwrap(), vec![10.0, 2.0]);
        assert!(matches!(n.normalize_state(&[1.0]), Err(Error::DimensionMismatch(_))));
        assert!(n.denormalize_input(&[1.0, 2.0]).is_err());
        // out-of-range values are not clipped
        assert_eq!(n.normalize_state(&[20.0, 0.0]).unwrap(), vec![3.0, 0.0]);
    }

    #[test]
    fn json_schema() {
        let n = Normalizer::new(vec![0.0], vec![1.0], vec![-1.0], vec![2.0]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&n).unwrap();
        for key in ["state_min", "state_max", "input_min", "input_max"] {
            assert!(v.get(key).unwrap().is_array());
        }
    }
}
