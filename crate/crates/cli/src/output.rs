//! CSV and JSON writers for run directories.

use std::fs;
use std::path::Path;

use rsoc::{ControlLaw64, EstimatorPass64, Mat64, Trajectory64, Vect64};
use serde::{Deserialize, Serialize};

use crate::config::rows_of;
use crate::CliError;

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// `k, t, x_1..x_n, u_1..u_m`; the final row has empty controls.
pub fn write_trajectory(path: &Path, traj: &Trajectory64) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let n = traj.states()[0].len();
    let m = traj.controls()[0].len();
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    w.write_record(&header).map_err(io)?;
    for (k, x) in traj.states().iter().enumerate() {
        let mut row = vec![k.to_string(), num(traj.time(k))];
        row.extend(x.iter().map(|v| num(*v)));
        match traj.controls().get(k) {
            Some(u) => row.extend(u.iter().map(|v| num(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `sample, k, t, x_1..x_n` for a set of rollouts.
pub fn write_samples(path: &Path, trajectories: &[(usize, &Trajectory64)]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let n = trajectories.first().map_or(0, |(_, t)| t.states()[0].len());
    let mut header = vec!["sample".to_string(), "k".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(io)?;
    for (s, traj) in trajectories {
        for (k, x) in traj.states().iter().enumerate() {
            let mut row = vec![s.to_string(), k.to_string(), num(traj.time(k))];
            row.extend(x.iter().map(|v| num(*v)));
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// `k, t, frobenius_L, l_1..l_m, L_11..L_mn` (row-major `L`).
pub fn write_gains(path: &Path, law: &ControlLaw64, dt: f64) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let (m, n) = law.feedback[0].shape();
    let mut header = vec!["k".to_string(), "t".to_string(), "frobenius_L".to_string()];
    header.extend((1..=m).map(|i| format!("l_{i}")));
    for i in 1..=m {
        header.extend((1..=n).map(|j| format!("L_{i}{j}")));
    }
    w.write_record(&header).map_err(io)?;
    for (k, (l, big_l)) in law.feedforward.iter().zip(&law.feedback).enumerate() {
        let mut row = vec![k.to_string(), num(k as f64 * dt), num(big_l.norm())];
        row.extend(l.iter().map(|v| num(*v)));
        for i in 0..m {
            row.extend((0..n).map(|j| num(big_l[(i, j)])));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `k, t, frobenius_K, trace_Sigma`.
pub fn write_estimation_gains(path: &Path, est: &EstimatorPass64, dt: f64) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "t", "frobenius_K", "trace_Sigma"]).map_err(io)?;
    for (k, g) in est.gains.iter().enumerate() {
        w.write_record([k.to_string(), num(k as f64 * dt), num(g.norm()), num(est.error_covs[k].trace())])
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One row of a force record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceRow {
    pub k: usize,
    pub t: f64,
    pub force: [f64; 2],
    pub target: f64,
    pub phi: f64,
}

/// `[sample,] k, t, lambda_x, lambda_y, lambda_norm, lambda_des_norm, phi`.
pub fn write_forces(path: &Path, rows: &[(Option<usize>, ForceRow)]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let with_sample = rows.first().is_some_and(|(s, _)| s.is_some());
    let mut header: Vec<&str> = if with_sample { vec!["sample"] } else { vec![] };
    header.extend(["k", "t", "lambda_x", "lambda_y", "lambda_norm", "lambda_des_norm", "phi"]);
    w.write_record(&header).map_err(io)?;
    for (s, r) in rows {
        let mut row: Vec<String> = s.map(|s| s.to_string()).into_iter().collect();
        let norm = (r.force[0] * r.force[0] + r.force[1] * r.force[1]).sqrt();
        row.extend([r.k.to_string(), num(r.t), num(r.force[0]), num(r.force[1]), num(norm), num(r.target), num(r.phi)]);
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Everything needed to replay a solved law: nominal, law and filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawFile {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub feedforward: Vec<Vec<f64>>,
    pub feedback: Vec<Vec<Vec<f64>>>,
    pub estimation_gains: Vec<Vec<Vec<f64>>>,
    pub error_covs: Vec<Vec<Vec<f64>>>,
}

fn vec_of(v: &Vect64) -> Vec<f64> {
    v.iter().copied().collect()
}

fn mat_from(rows: &[Vec<f64>]) -> Result<Mat64, CliError> {
    crate::config::matrix(rows, "law file").map_err(|e| CliError::Io(e.to_string()))
}

impl LawFile {
    pub fn new(nominal: &Trajectory64, law: &ControlLaw64, est: &EstimatorPass64) -> Self {
        Self {
            dt: nominal.dt(),
            states: nominal.states().iter().map(vec_of).collect(),
            controls: nominal.controls().iter().map(vec_of).collect(),
            feedforward: law.feedforward.iter().map(vec_of).collect(),
            feedback: law.feedback.iter().map(rows_of).collect(),
            estimation_gains: est.gains.iter().map(rows_of).collect(),
            error_covs: est.error_covs.iter().map(rows_of).collect(),
        }
    }

    pub fn nominal(&self) -> Result<Trajectory64, CliError> {
        Trajectory64::new(
            self.dt,
            self.states.iter().map(|s| Vect64::from_column_slice(s)).collect(),
            self.controls.iter().map(|u| Vect64::from_column_slice(u)).collect(),
        )
        .map_err(|e| CliError::Io(format!("law file: {e}")))
    }

    pub fn law(&self) -> Result<ControlLaw64, CliError> {
        Ok(ControlLaw64 {
            feedforward: self.feedforward.iter().map(|l| Vect64::from_column_slice(l)).collect(),
            feedback: self.feedback.iter().map(|m| mat_from(m)).collect::<Result<_, _>>()?,
        })
    }

    pub fn estimator(&self) -> Result<EstimatorPass64, CliError> {
        Ok(EstimatorPass64 {
            gains: self.estimation_gains.iter().map(|m| mat_from(m)).collect::<Result<_, _>>()?,
            error_covs: self.error_covs.iter().map(|m| mat_from(m)).collect::<Result<_, _>>()?,
            floored_steps: Vec::new(),
        })
    }
}
