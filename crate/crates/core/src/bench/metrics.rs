use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of determination `1 − SS_res/SS_tot` about the truth mean.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.len() < 2 {
        return Err(Error::dims(format!(
            "R² needs equal series of length ≥ 2, got {} and {}",
            truth.len(),
            pred.len()
        )));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantTruth);
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Unweighted mean of per-channel R² over column-major channel series.
pub fn r_squared_multi(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::dims("R² needs the same non-zero number of channels"));
    }
    let mut sum = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        sum += r_squared(t, p)?;
    }
    Ok(sum / truth.len() as f64)
}

pub fn mse(truth: &[f64], pred: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / truth.len() as f64
}

/// Linearly interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Accuracy and timing summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub channels: Vec<String>,
    /// `None` when the truth on that channel is constant.
    pub r2: Vec<Option<f64>>,
    pub mse: Vec<f64>,
    /// Mean over the channels that have an R².
    pub r2_mean: Option<f64>,
    pub solve_median_ms: Option<f64>,
    pub solve_p95_ms: Option<f64>,
    /// Fraction of applied input components sitting on a bound.
    pub saturation_rate: f64,
    pub steps: usize,
    pub completed: bool,
}

impl Metrics {
    /// `truth` and `pred` are column-major: one series per channel.
    pub fn from_series(
        channels: &[&str],
        truth: &[Vec<f64>],
        pred: &[Vec<f64>],
        solve_ms: &[f64],
        saturation_rate: f64,
        completed: bool,
    ) -> Result<Self> {
        if truth.len() != channels.len() || pred.len() != channels.len() {
            return Err(Error::dims("metrics channel count"));
        }
        let mut r2 = Vec::new();
        let mut err = Vec::new();
        for (t, p) in truth.iter().zip(pred) {
            r2.push(match r_squared(t, p) {
                Ok(v) => Some(v),
                Err(Error::ConstantTruth) => None,
                Err(e) => return Err(e),
            });
            err.push(mse(t, p));
        }
        let scored: Vec<f64> = r2.iter().flatten().copied().collect();
        let r2_mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
        Ok(Metrics {
            channels: channels.iter().map(|c| c.to_string()).collect(),
            r2,
            mse: err,
            r2_mean,
            solve_median_ms: percentile(solve_ms, 50.0),
            solve_p95_ms: percentile(solve_ms, 95.0),
            saturation_rate,
            steps: truth.first().map_or(0, |t| t.len()),
            completed,
        })
    }

    /// Accuracy-only CSV (`channel,r2,mse`); timing is left out so the file
    /// is reproducible.
    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("channel,r2,mse\n");
        for (i, c) in self.channels.iter().enumerate() {
            let r2 = self.r2[i].map_or("nan".to_string(), |v| format!("{v:.16e}"));
            s.push_str(&format!("{c},{r2},{:.16e}\n", self.mse[i]));
        }
        let mean = self.r2_mean.map_or("nan".to_string(), |v| format!("{v:.16e}"));
        s.push_str(&format!("mean,{mean},{:.16e}\n", self.mse.iter().sum::<f64>() / self.mse.len().max(1) as f64));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&t, &[1.0; 3]).unwrap(), 0.0);
        assert_eq!(r_squared(&t, &[0.0; 3]).unwrap(), -1.5);
        assert!(matches!(r_squared(&[2.0; 4], &[2.0; 4]), Err(Error::ConstantTruth)));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn multi_channel_is_mean() {
        let t = vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]];
        let p = vec![vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]];
        assert_eq!(r_squared_multi(&t, &p).unwrap(), (1.0 - 1.5) / 2.0);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0), Some(2.0));
        assert_eq!(percentile(&[0.0, 10.0], 95.0), Some(9.5));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn constant_channel_excluded_from_mean() {
        let t = vec![vec![0.0, 1.0], vec![5.0, 5.0]];
        let p = vec![vec![0.0, 1.0], vec![5.0, 4.0]];
        let m = Metrics::from_series(&["x", "phi"], &t, &p, &[1.0], 0.0, true).unwrap();
        assert_eq!(m.r2, vec![Some(1.0), None]);
        assert_eq!(m.r2_mean, Some(1.0));
        assert!(m.mse.iter().all(|v| *v >= 0.0));
    }
}
