//! Flight CSV files: header `t,<state names...>,<input names...>`, input
//! columns prefixed `u_`, one row per sample at a constant step.
//!
//! Quaternion columns `qw,qx,qy,qz` are converted to Z-Y-X Euler angles
//! `phi,theta,psi` on load.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::FlightRecord;
use crate::error::{Error, Result};

const INPUT_PREFIX: &str = "u_";
const QUAT: [&str; 4] = ["qw", "qx", "qy", "qz"];

/// Relative tolerance on the sampling step.
const STEP_TOL: f64 = 1e-6;

fn quat_to_euler(qw: f64, qx: f64, qy: f64, qz: f64) -> [f64; 3] {
    let norm = (qw * qw + qx * qx + qy * qy + qz * qz).sqrt();
    let (qw, qx, qy, qz) = (qw / norm, qx / norm, qy / norm, qz / norm);
    let phi = (2.0 * (qw * qx + qy * qz)).atan2(1.0 - 2.0 * (qx * qx + qy * qy));
    let theta = (2.0 * (qw * qy - qz * qx)).clamp(-1.0, 1.0).asin();
    let psi = (2.0 * (qw * qz + qx * qy)).atan2(1.0 - 2.0 * (qy * qy + qz * qz));
    [phi, theta, psi]
}

/// Parses CSV text into a record. Line numbers in errors are 1-based.
pub fn parse_csv(text: &str) -> Result<FlightRecord> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::ParseError { line: 1, msg: "missing header".into() })?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if cols.first().map(String::as_str) != Some("t") {
        return Err(Error::ParseError { line: 1, msg: "first column must be `t`".into() });
    }
    let first_input = cols.iter().position(|c| c.starts_with(INPUT_PREFIX)).unwrap_or(cols.len());
    if cols[first_input..].iter().any(|c| !c.starts_with(INPUT_PREFIX)) {
        return Err(Error::ParseError { line: 1, msg: "input columns must follow all state columns".into() });
    }
    let raw_states: Vec<String> = cols[1..first_input].to_vec();
    let input_names: Vec<String> = cols[first_input..].to_vec();

    let mut times: Vec<f64> = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::ParseError {
                line: line_no,
                msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut row: Vec<f64> = Vec::with_capacity(fields.len());
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::ParseError { line: line_no, msg: format!("not a number: {f:?}") })?;
            row.push(v);
        }
        let t: f64 = row[0];
        if let Some(&t_prev) = times.last() {
            let step = t - t_prev;
            if times.len() == 1 {
                if step <= 0.0 {
                    return Err(Error::NonUniformTimestep(line_no));
                }
            } else {
                let dt: f64 = times[1] - times[0];
                if (step - dt).abs() > STEP_TOL * dt {
                    return Err(Error::NonUniformTimestep(line_no));
                }
            }
        }
        times.push(t);
        states.push(row[1..first_input].to_vec());
        inputs.push(row[first_input..].to_vec());
    }
    if times.len() < 2 {
        return Err(Error::ParseError { line: times.len() + 1, msg: "need at least two samples".into() });
    }

    let quat_idx: Option<Vec<usize>> = QUAT.iter().map(|q| raw_states.iter().position(|c| c == q)).collect();
    let (state_names, states) = match quat_idx {
        Some(idx) => {
            let at = *idx.iter().min().expect("four indices");
            let mut names = Vec::new();
            for (i, c) in raw_states.iter().enumerate() {
                if i == at {
                    names.extend(["phi", "theta", "psi"].map(String::from));
                } else if !idx.contains(&i) {
                    names.push(c.clone());
                }
            }
            let converted = states
                .into_iter()
                .map(|s| {
                    let e = quat_to_euler(s[idx[0]], s[idx[1]], s[idx[2]], s[idx[3]]);
                    let mut out = Vec::with_capacity(s.len() - 1);
                    for (i, v) in s.iter().enumerate() {
                        if i == at {
                            out.extend_from_slice(&e);
                        } else if !idx.contains(&i) {
                            out.push(*v);
                        }
                    }
                    out
                })
                .collect();
            (names, converted)
        }
        None => (raw_states, states),
    };

    let mut rec = FlightRecord::new(times[1] - times[0], state_names, input_names, states, inputs)?;
    rec.start_time = times[0];
    Ok(rec)
}

pub fn load_csv(path: &Path) -> Result<FlightRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Renders a record with 17 significant digits per value.
pub fn render_csv(record: &FlightRecord) -> String {
    let mut out = String::new();
    out.push('t');
    for n in record.state_names.iter().chain(&record.input_names) {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for k in 0..record.len() {
        let _ = write!(out, "{:.16e}", record.time(k));
        for v in record.states[k].iter().chain(&record.inputs[k]) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(record: &FlightRecord, path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(record)).map_err(|e| Error::io(path, e))
}

/// Writes `flight_000.csv`, `flight_001.csv`, ... into `dir`.
pub fn write_dir(records: &[FlightRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = dir.join(format!("flight_{i:03}.csv"));
            write_csv(r, &p)?;
            Ok(p)
        })
        .collect()
}

/// Loads every `*.csv` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<FlightRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    paths.iter().map(|p| load_csv(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_infer_dt() {
        let r = parse_csv("t,px,u_1\n0.00,1,2\n0.01,2,3\n0.02,3,4\n").unwrap();
        assert!((r.dt - 0.01).abs() < 1e-15);
        assert_eq!(r.len(), 3);
        assert_eq!(r.state_names, vec!["px"]);
        assert_eq!(r.inputs[2], vec![4.0]);
    }

    #[test]
    fn non_uniform_step_rejected() {
        let e = parse_csv("t,px,u_1\n0.00,1,2\n0.01,2,3\n0.03,3,4\n").unwrap_err();
        assert!(matches!(e, Error::NonUniformTimestep(4)));
        let e = parse_csv("t,px,u_1\n0.01,1,2\n0.00,2,3\n").unwrap_err();
        assert!(matches!(e, Error::NonUniformTimestep(3)));
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = parse_csv("t,px,u_1\n0.00,1,2\n0.01,x,3\n").unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 3, .. }));
        let e = parse_csv("t,px,u_1\n0.00,1\n").unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 2, .. }));
        assert!(parse_csv("time,px\n").is_err());
        assert!(parse_csv("t,u_1,px\n0,1,2\n0.1,1,2\n").is_err());
    }

    #[test]
    fn quaternions_become_euler() {
        // 90° yaw: q = (cos 45°, 0, 0, sin 45°)
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let text = format!("t,px,qw,qx,qy,qz,wx,u_1\n0,0,{h},0,0,{h},0,1\n0.01,0,{h},0,0,{h},0,1\n");
        let r = parse_csv(&text).unwrap();
        assert_eq!(r.state_names, vec!["px", "phi", "theta", "psi", "wx"]);
        let s = &r.states[0];
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
        assert!((s[3] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn write_then_load_is_identical() {
        let states: Vec<Vec<f64>> =
            (0..5).map(|k| (0..12).map(|i| (k * 12 + i) as f64 * 0.1f64.sqrt() - 1.0 / 3.0).collect()).collect();
        let inputs: Vec<Vec<f64>> = (0..5).map(|k| vec![500.0 + k as f64 / 7.0; 4]).collect();
        let rec = FlightRecord::with_default_names(0.01, states, inputs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&rec, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.states, rec.states);
        assert_eq!(back.inputs, rec.inputs);
        assert_eq!(back.state_names, rec.state_names);
        assert_eq!(back.dt, rec.dt);
    }
}
