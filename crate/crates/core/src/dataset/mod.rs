//! Flight records, their CSV form, min-max normalisation, and segmentation
//! into `(x_k, u_k, x_{k+1})` training triples.

mod csv;
mod normalizer;

use serde::{Deserialize, Serialize};

pub use self::csv::{load_csv, load_dir, parse_csv, write_csv, write_dir};
pub use normalizer::Normalizer;

use crate::error::{Error, Result};
use crate::nnet::Tensor;

/// Default state channels: position, velocity, Z-Y-X Euler angles, body rates.
pub const DEFAULT_STATE_NAMES: [&str; 12] =
    ["px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi", "wx", "wy", "wz"];
/// Default inputs: the four rotor speed commands.
pub const DEFAULT_INPUT_NAMES: [&str; 4] = ["u_1", "u_2", "u_3", "u_4"];

/// A uniformly sampled state/input trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightRecord {
    pub dt: f64,
    pub start_time: f64,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl FlightRecord {
    pub fn new(
        dt: f64,
        state_names: Vec<String>,
        input_names: Vec<String>,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let r = FlightRecord { dt, start_time: 0.0, state_names, input_names, states, inputs };
        r.validate()?;
        Ok(r)
    }

    /// Record with the default 12-state / 4-input channel names.
    pub fn with_default_names(dt: f64, states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        FlightRecord::new(
            dt,
            DEFAULT_STATE_NAMES.iter().map(|s| s.to_string()).collect(),
            DEFAULT_INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
            states,
            inputs,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.states.len() != self.inputs.len() {
            return Err(Error::dims(format!("{} states but {} inputs", self.states.len(), self.inputs.len())));
        }
        if self.states.len() < 2 {
            return Err(Error::dims("a flight record needs at least two samples"));
        }
        let (nx, nu) = (self.state_names.len(), self.input_names.len());
        if self.states.iter().any(|x| x.len() != nx) || self.inputs.iter().any(|u| u.len() != nu) {
            return Err(Error::dims("sample length disagrees with channel names"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.dt
    }

    pub fn channel(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Normalised `(x_k, u_k, x_{k+1})` triples stored one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSet {
    pub split: Split,
    pub x: Tensor,
    pub u: Tensor,
    pub x_next: Tensor,
    /// Index of the source record (in the original record list) for each triple.
    pub record_of: Vec<usize>,
}

impl TripleSet {
    fn empty(split: Split, nx: usize, nu: usize) -> Self {
        TripleSet {
            split,
            x: Tensor::zeros(0, nx),
            u: Tensor::zeros(0, nu),
            x_next: Tensor::zeros(0, nx),
            record_of: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    /// Gathers the rows in `idx` into a batch `(x, u, x_next)`.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Tensor, Tensor) {
        let pick = |t: &Tensor| {
            let mut v = Vec::with_capacity(idx.len() * t.cols());
            for &i in idx {
                v.extend_from_slice(t.row(i));
            }
            Tensor::from_vec(idx.len(), t.cols(), v).expect("gather shape")
        };
        (pick(&self.x), pick(&self.u), pick(&self.x_next))
    }
}

/// Validates split fractions: finite, non-negative, summing to one.
pub fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::BadSplit(format!("{fractions:?} has a negative entry")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplit(format!("{fractions:?} sums to {sum}")));
    }
    Ok(())
}

/// Assigns whole records to (train, validation, test), in order. A record goes
/// to the split whose cumulative boundary lies beyond the record's midpoint in
/// transition count, so each split is within one record of its target size.
pub fn split_records(records: &[FlightRecord], fractions: [f64; 3]) -> Result<[Vec<usize>; 3]> {
    check_fractions(fractions)?;
    let total: usize = records.iter().map(|r| r.len().saturating_sub(1)).sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let b1 = fractions[0] * total as f64;
    let b2 = (fractions[0] + fractions[1]) * total as f64;
    let mut out: [Vec<usize>; 3] = Default::default();
    let mut cum = 0usize;
    for (i, r) in records.iter().enumerate() {
        let n = r.len().saturating_sub(1);
        let mid = cum as f64 + 0.5 * n as f64;
        let which = if mid < b1 {
            0
        } else if mid < b2 {
            1
        } else {
            2
        };
        out[which].push(i);
        cum += n;
    }
    Ok(out)
}

/// Builds normalised triples for the given records.
pub fn triples(records: &[FlightRecord], which: &[usize], n: &Normalizer, split: Split) -> Result<TripleSet> {
    let (nx, nu) = (n.state_dim(), n.input_dim());
    let mut set = TripleSet::empty(split, nx, nu);
    let (mut xs, mut us, mut xn) = (Vec::new(), Vec::new(), Vec::new());
    for &ri in which {
        let r = &records[ri];
        if r.state_dim() != nx || r.input_dim() != nu {
            return Err(Error::dims("record dims disagree with normaliser"));
        }
        let norm_states: Vec<Vec<f64>> = r.states.iter().map(|x| n.normalize_state(x)).collect::<Result<_>>()?;
        for k in 0..r.len() - 1 {
            xs.extend_from_slice(&norm_states[k]);
            us.extend_from_slice(&n.normalize_input(&r.inputs[k])?);
            xn.extend_from_slice(&norm_states[k + 1]);
            set.record_of.push(ri);
        }
    }
    let rows = set.record_of.len();
    set.x = Tensor::from_vec(rows, nx, xs)?;
    set.u = Tensor::from_vec(rows, nu, us)?;
    set.x_next = Tensor::from_vec(rows, nx, xn)?;
    Ok(set)
}

/// Segments records into normalised (train, validation, test) triple sets.
pub fn segment(
    records: &[FlightRecord],
    n: &Normalizer,
    fractions: [f64; 3],
) -> Result<(TripleSet, TripleSet, TripleSet)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let [a, b, c] = split_records(records, fractions)?;
    Ok((
        triples(records, &a, n, Split::Train)?,
        triples(records, &b, n, Split::Validation)?,
        triples(records, &c, n, Split::Test)?,
    ))
}

/// Splits by record, fits the normaliser on the training records only, and
/// segments all three splits with it.
pub fn prepare(records: &[FlightRecord], fractions: [f64; 3]) -> Result<(Normalizer, TripleSet, TripleSet, TripleSet)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let [a, b, c] = split_records(records, fractions)?;
    let train_refs: Vec<&FlightRecord> = a.iter().map(|&i| &records[i]).collect();
    let n = Normalizer::fit(&train_refs)?;
    Ok((
        n.clone(),
        triples(records, &a, &n, Split::Train)?,
        triples(records, &b, &n, Split::Validation)?,
        triples(records, &c, &n, Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, offset: f64) -> FlightRecord {
        FlightRecord::new(
            0.01,
            vec!["a".into(), "b".into()],
            vec!["u_1".into()],
            (0..t).map(|k| vec![offset + k as f64, -(k as f64)]).collect(),
            (0..t).map(|k| vec![(k % 2) as f64]).collect(),
        )
        .unwrap()
    }

    fn unit_norm() -> Normalizer {
        Normalizer::new(vec![-100.0, -100.0], vec![100.0, 100.0], vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn record_invariants() {
        assert!(FlightRecord::new(0.01, vec!["a".into()], vec![], vec![vec![0.0]], vec![vec![]]).is_err());
        assert!(FlightRecord::new(0.0, vec!["a".into()], vec![], vec![vec![0.0]; 2], vec![vec![]; 2]).is_err());
        assert!(FlightRecord::new(0.01, vec!["a".into()], vec![], vec![vec![0.0]; 3], vec![vec![]; 2]).is_err());
    }

    #[test]
    fn one_record_gives_t_minus_one_triples() {
        let r = ramp(5, 0.0);
        let (tr, va, te) = segment(&[r], &unit_norm(), [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (4, 0, 0));
    }

    #[test]
    fn fractions_over_unit_records() {
        let recs: Vec<_> = (0..100).map(|i| ramp(2, i as f64)).collect();
        let (tr, va, te) = segment(&recs, &unit_norm(), [0.7, 0.15, 0.15]).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (70, 15, 15));
    }

    #[test]
    fn two_records_chain_within_each() {
        let recs = vec![ramp(3, 0.0), ramp(3, 50.0)];
        let (tr, _, _) = segment(&recs, &unit_norm(), [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(tr.len(), 4);
        // triples: (0→1), (1→2) from record 0; (50→51), (51→52) from record 1
        let firsts: Vec<f64> = (0..4).map(|i| tr.x.get(i, 0) * 100.0).collect();
        let expect = [0.0, 1.0, 50.0, 51.0];
        for (a, e) in firsts.iter().zip(expect) {
            assert!((a - e).abs() < 1e-9);
        }
        for j in 0..3 {
            if tr.record_of[j] == tr.record_of[j + 1] {
                assert_eq!(tr.x_next.row(j), tr.x.row(j + 1));
            }
        }
        assert_eq!(tr.record_of, vec![0, 0, 1, 1]);
    }

    #[test]
    fn bad_splits() {
        let recs = vec![ramp(3, 0.0)];
        assert!(matches!(segment(&recs, &unit_norm(), [0.5, 0.2, 0.2]), Err(Error::BadSplit(_))));
        assert!(matches!(segment(&recs, &unit_norm(), [1.2, -0.2, 0.0]), Err(Error::BadSplit(_))));
        assert!(matches!(segment(&[], &unit_norm(), [1.0, 0.0, 0.0]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn prepare_fits_on_train_only() {
        let recs: Vec<_> = (0..10).map(|i| ramp(4, 10.0 * i as f64)).collect();
        let (n, tr, _, te) = prepare(&recs, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!(n.state_max[0], 53.0);
        assert!(tr.x.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(te.x.values().iter().any(|v| *v > 1.0));
    }
}
