//! Noise-sweep driver for the viapoint task and the wall-contact driver.

use std::path::Path;

use rsoc::eval::{Policy, RolloutRecord};
use rsoc::models::ContactProblem;
use rsoc::{Problem, Termination, Trajectory64, Vect64};
use serde::Serialize;

use crate::config::{Config, CovSpec, Model, NoiseSpec, ProblemSpec};
use crate::output::{self, ForceRow};
use crate::run::{self, argmax, gain_norms, local_maxima, rollout_options, rollouts, Solved};
use crate::CliError;

/// Nominal force record, one row per control step.
pub fn nominal_forces(p: &ContactProblem<f64>, traj: &Trajectory64) -> Vec<(Option<usize>, ForceRow)> {
    force_rows(p, traj, None)
}

fn force_rows(p: &ContactProblem<f64>, traj: &Trajectory64, sample: Option<usize>) -> Vec<(Option<usize>, ForceRow)> {
    (0..traj.len())
        .map(|k| {
            let x = &traj.states()[k];
            let t = traj.time(k);
            let f = p.contact_force(x, &traj.controls()[k], t).unwrap_or_else(|| Vect64::zeros(2));
            let target = if p.cost.in_window(t) { p.cost.force_target } else { 0.0 };
            (sample, ForceRow { k, t, force: [f[0], f[1]], target, phi: x[4] })
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn with_noise(cfg: &Config, noise: NoiseSpec) -> Config {
    let mut c = cfg.clone();
    c.noise = noise;
    c
}

fn strictly(values: &[f64], cmp: impl Fn(f64, f64) -> bool) -> bool {
    values.windows(2).all(|w| cmp(w[0], w[1]))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub omega: f64,
    pub gamma: f64,
    pub dir: String,
    pub termination: Option<String>,
    pub error: Option<String>,
    pub peak_gain: Option<f64>,
    pub peak_step: Option<usize>,
    /// Local maxima of `‖L_k‖` above half the peak.
    pub prominent_maxima: Vec<usize>,
    pub cost_history_monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViapointSummary {
    pub sigma: f64,
    pub steps: usize,
    pub viapoint_steps: Vec<usize>,
    /// Allowed distance, in steps, between a target time and a gain maximum.
    pub maxima_tolerance: usize,
    pub omega_sweep: Vec<SweepCell>,
    pub gamma_sweep: Vec<SweepCell>,
    pub single: Option<SweepCell>,
    /// Peaks strictly increase with process noise.
    pub omega_gains_increase: Option<bool>,
    /// Peaks strictly decrease with measurement noise.
    pub gamma_gains_decrease: Option<bool>,
    /// Every solved cell has a prominent maximum near each viapoint and the end.
    pub maxima_near_targets: bool,
}

fn monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0])
}

fn sweep_cell(
    cfg: &Config,
    out: &Path,
    name: &str,
    noise: NoiseSpec,
    omega: f64,
    gamma: f64,
    controls: &[Vect64],
) -> Result<SweepCell, CliError> {
    let dir = out.join(name);
    let cell_cfg = with_noise(cfg, noise);
    let mut cell = SweepCell {
        omega,
        gamma,
        dir: name.to_string(),
        termination: None,
        error: None,
        peak_gain: None,
        peak_step: None,
        prominent_maxima: Vec::new(),
        cost_history_monotone: false,
    };
    match run::solve_config(&cell_cfg, controls) {
        Ok(solved) => {
            let s = run::write_run(&dir, &cell_cfg, &solved, cfg.experiment.seed)?;
            let norms = gain_norms(&solved.result);
            cell.prominent_maxima = local_maxima(&norms).into_iter().filter(|&k| norms[k] > 0.5 * s.peak_gain).collect();
            cell.termination = Some(s.termination);
            cell.peak_gain = Some(s.peak_gain);
            cell.peak_step = Some(s.peak_step);
            cell.cost_history_monotone = monotone(&s.cost_history);
        }
        Err(e) => {
            log::warn!("{name}: {e}");
            create_dir(&dir)?;
            output::write_json(&dir.join("config.json"), &cell_cfg)?;
            cell.error = Some(e.to_string());
        }
    }
    Ok(cell)
}

/// Solves the viapoint task over the configured noise grids and writes one
/// run directory per cell plus `summary.json`.
pub fn run_viapoint(cfg: &Config, out: &Path) -> Result<ViapointSummary, CliError> {
    let ProblemSpec::Viapoint(spec) = &cfg.problem else {
        return Err(CliError::Config("viapoint experiment needs a viapoint problem".into()));
    };
    let (model, _) = cfg.problem.build()?;
    let Model::Viapoint(problem) = &model else { unreachable!() };
    create_dir(out)?;
    output::write_json(&out.join("config.json"), &cfg.resolved()?)?;
    let controls = run::initial_controls(cfg)?;
    let exp = &cfg.experiment;

    let mut omega_sweep = Vec::new();
    if let Some(sw) = &exp.omega_sweep {
        for (i, &level) in sw.levels.iter().enumerate() {
            let noise = NoiseSpec { process: CovSpec::Scale(level), measurement: CovSpec::Scale(sw.fixed) };
            omega_sweep.push(sweep_cell(cfg, out, &format!("omega_{i}"), noise, level, sw.fixed, &controls)?);
        }
    }
    let mut gamma_sweep = Vec::new();
    if let Some(sw) = &exp.gamma_sweep {
        for (i, &level) in sw.levels.iter().enumerate() {
            let noise = NoiseSpec { process: CovSpec::Scale(sw.fixed), measurement: CovSpec::Scale(level) };
            gamma_sweep.push(sweep_cell(cfg, out, &format!("gamma_{i}"), noise, sw.fixed, level, &controls)?);
        }
    }
    let single = if omega_sweep.is_empty() && gamma_sweep.is_empty() {
        Some(sweep_cell(cfg, out, "run", cfg.noise.clone(), f64::NAN, f64::NAN, &controls)?)
    } else {
        None
    };

    let peaks = |cells: &[SweepCell]| -> Option<Vec<f64>> {
        (!cells.is_empty()).then(|| cells.iter().map(|c| c.peak_gain).collect::<Option<Vec<f64>>>()).flatten()
    };
    let viapoint_steps: Vec<usize> = problem.cost.viapoints.iter().map(|v| v.step).collect();
    let tolerance = (spec.steps / 20).max(1);
    let mut targets = viapoint_steps.clone();
    targets.push(spec.steps - 1);
    let maxima_near_targets = omega_sweep.iter().chain(&gamma_sweep).chain(&single).all(|c| {
        c.error.is_none() && targets.iter().all(|&t| c.prominent_maxima.iter().any(|&k| k.abs_diff(t) <= tolerance))
    });
    let summary = ViapointSummary {
        sigma: cfg.solver.build(4)?.sigma,
        steps: spec.steps,
        viapoint_steps,
        maxima_tolerance: tolerance,
        omega_gains_increase: peaks(&omega_sweep).map(|p| strictly(&p, |a, b| b > a)),
        gamma_gains_decrease: peaks(&gamma_sweep).map(|p| strictly(&p, |a, b| b < a)),
        omega_sweep,
        gamma_sweep,
        single,
        maxima_near_targets,
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaRun {
    pub gamma: f64,
    pub dir: String,
    pub termination: Option<String>,
    pub converged: bool,
    pub error: Option<String>,
    pub first_contact_step: Option<usize>,
    /// Steps searched for the near-contact peaks.
    pub near_contact: [usize; 2],
    pub peak_gain: Option<f64>,
    pub peak_gain_near_contact: Option<f64>,
    pub peak_estimation_gain_near_contact: Option<f64>,
    pub cost_history_monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainComparison {
    pub smaller_gamma: f64,
    pub larger_gamma: f64,
    pub smaller_gamma_peak: Option<f64>,
    pub larger_gamma_peak: Option<f64>,
    pub both_converged: bool,
    /// The smaller-γ law has the strictly larger near-contact peak.
    pub smaller_gamma_higher: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftResult {
    pub law: String,
    pub gamma: f64,
    pub shift: f64,
    pub dir: String,
    pub rollouts: usize,
    pub diverged: usize,
    /// Diverged rollouts count as an unbounded peak.
    pub median_peak_force: Option<f64>,
    pub mean_window_force: Option<f64>,
    pub contact_maintained: usize,
    pub contact_maintained_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationVerdict {
    /// At every nonzero shift, the sensitive law keeps contact in at least
    /// 90% of rollouts.
    pub sensitive_maintains_contact: bool,
    /// At every nonzero shift, the sensitive law's median peak force is
    /// strictly below the insensitive law's.
    pub sensitive_lower_median_peak: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContactSummary {
    pub sigma: f64,
    pub omega: f64,
    pub joint_gamma: f64,
    pub gains: Vec<GammaRun>,
    pub comparison: Option<GainComparison>,
    pub shifts: Vec<ShiftResult>,
    pub perturbation: Option<PerturbationVerdict>,
}

/// Contact from the first step with `x′ ≤ 0`, which must come no later than
/// `end`, through `end` without separating.
pub fn contact_maintained(traj: &Trajectory64, end: usize) -> bool {
    let states = traj.states();
    let end = end.min(states.len() - 1);
    match (0..=end).find(|&k| states[k][4] <= 0.0) {
        Some(first) => (first..=end).all(|k| states[k][4] <= 0.0),
        None => false,
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn contact_noise(omega: f64, joint_gamma: f64, gamma: f64) -> NoiseSpec {
    NoiseSpec {
        process: CovSpec::Scale(omega),
        measurement: CovSpec::Diagonal { diagonal: vec![joint_gamma, joint_gamma, joint_gamma, joint_gamma, gamma] },
    }
}

fn window_max(values: &[f64], range: [usize; 2]) -> Option<f64> {
    let hi = range[1].min(values.len().saturating_sub(1));
    (range[0] <= hi).then(|| values[range[0]..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Solves the contact task for each configured measurement-noise level on
/// the wall distance, compares their gains near contact and evaluates the
/// sensitive and insensitive laws against shifted walls.
pub fn run_contact(cfg: &Config, out: &Path) -> Result<ContactSummary, CliError> {
    let (model, x0) = cfg.problem.build()?;
    let Model::Contact(problem) = &model else {
        return Err(CliError::Config("contact experiment needs a contact problem".into()));
    };
    let ProblemSpec::Contact(spec) = &cfg.problem else { unreachable!() };
    let exp = &cfg.experiment;
    let (Some(omega), Some(joint_gamma)) = (exp.omega, exp.joint_gamma) else {
        return Err(CliError::Config("contact experiment needs experiment.omega and experiment.joint_gamma".into()));
    };
    let mut levels: Vec<f64> = exp.gammas.clone();
    levels.extend(exp.sensitive_gamma);
    levels.extend(exp.insensitive_gamma);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.is_empty() {
        return Err(CliError::Config("contact experiment needs at least one γ level".into()));
    }
    create_dir(out)?;
    output::write_json(&out.join("config.json"), &cfg.resolved()?)?;
    let controls = run::initial_controls(cfg)?;
    let dt = problem.dt();
    let half = (exp.near_contact / dt).round() as usize;
    let window_start = problem.step_index(spec.window[0]);
    let window_end = problem.step_index(spec.window[1]).min(spec.steps);

    let mut gains = Vec::new();
    let mut solved: Vec<(f64, Solved)> = Vec::new();
    for (i, &gamma) in levels.iter().enumerate() {
        let name = format!("gamma_{i}");
        let dir = out.join(&name);
        let cell_cfg = with_noise(cfg, contact_noise(omega, joint_gamma, gamma));
        let mut g = GammaRun {
            gamma,
            dir: name.clone(),
            termination: None,
            converged: false,
            error: None,
            first_contact_step: None,
            near_contact: [0, 0],
            peak_gain: None,
            peak_gain_near_contact: None,
            peak_estimation_gain_near_contact: None,
            cost_history_monotone: false,
        };
        match run::solve_config(&cell_cfg, &controls) {
            Ok(s) => {
                let summary = run::write_run(&dir, &cell_cfg, &s, exp.seed)?;
                let r = &s.result;
                g.first_contact_step = r.nominal.states().iter().position(|x| x[4] <= 0.0);
                let centre = g.first_contact_step.unwrap_or(window_start);
                g.near_contact = [centre.saturating_sub(half), centre + half];
                let norms = gain_norms(r);
                let est: Vec<f64> = r.estimator.gains.iter().map(|k| k.norm()).collect();
                g.peak_gain = Some(argmax(&norms).1);
                g.peak_gain_near_contact = window_max(&norms, g.near_contact);
                g.peak_estimation_gain_near_contact = window_max(&est, g.near_contact);
                g.converged = r.termination == Termination::Converged;
                g.termination = Some(summary.termination);
                g.cost_history_monotone = monotone(&r.cost_history);
                solved.push((gamma, s));
            }
            Err(e) => {
                log::warn!("{name}: {e}");
                create_dir(&dir)?;
                output::write_json(&dir.join("config.json"), &cell_cfg)?;
                g.error = Some(e.to_string());
            }
        }
        gains.push(g);
    }

    let find_gain = |gamma: f64| gains.iter().find(|g| g.gamma == gamma);
    let comparison = (exp.gammas.len() >= 2).then(|| {
        let lo = exp.gammas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = exp.gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (a, b) = (find_gain(lo), find_gain(hi));
        let pa = a.and_then(|g| g.peak_gain_near_contact);
        let pb = b.and_then(|g| g.peak_gain_near_contact);
        GainComparison {
            smaller_gamma: lo,
            larger_gamma: hi,
            smaller_gamma_peak: pa,
            larger_gamma_peak: pb,
            both_converged: a.is_some_and(|g| g.converged) && b.is_some_and(|g| g.converged),
            smaller_gamma_higher: matches!((pa, pb), (Some(x), Some(y)) if x > y),
        }
    });

    let mut shifts = Vec::new();
    let laws: Vec<(&str, f64)> = [("sensitive", exp.sensitive_gamma), ("insensitive", exp.insensitive_gamma)]
        .into_iter()
        .filter_map(|(n, g)| g.map(|g| (n, g)))
        .collect();
    let options = rollout_options(cfg);
    for &(law, gamma) in &laws {
        let Some((_, s)) = solved.iter().find(|(g, _)| *g == gamma) else {
            continue;
        };
        for (j, &shift) in exp.shifts.iter().enumerate() {
            let mut world = problem.clone();
            world.wall.shift = shift;
            let q0 = nalgebra::Vector2::from(spec.initial_q);
            let qd0 = nalgebra::Vector2::from(spec.initial_qd);
            let xw = world.initial_state(&q0, &qd0);
            let records = rollouts(problem, &world, &s.noise, Policy::from(&s.result), &xw, exp.seed, exp.rollouts, &options);
            let name = format!("{law}_shift_{j}");
            let dir = out.join(&name);
            create_dir(&dir)?;
            let res = shift_result(&world, &records, law, gamma, shift, &name, window_start, window_end);
            let mut rows = Vec::new();
            for (i, rec) in records.iter().enumerate().take(exp.sample_rollouts) {
                if let Ok(rec) = rec {
                    rows.extend(force_rows(&world, &rec.trajectory, Some(i)));
                }
            }
            output::write_forces(&dir.join("forces.csv"), &rows)?;
            output::write_json(&dir.join("summary.json"), &res)?;
            shifts.push(res);
        }
    }

    let perturbation = (laws.len() == 2 && shifts.iter().any(|s| s.shift != 0.0)).then(|| {
        let pick = |law: &str, shift: f64| shifts.iter().find(|s| s.law == law && s.shift == shift);
        let nonzero: Vec<f64> = exp.shifts.iter().copied().filter(|&s| s != 0.0).collect();
        PerturbationVerdict {
            sensitive_maintains_contact: nonzero
                .iter()
                .all(|&d| pick("sensitive", d).is_some_and(|s| s.contact_maintained_fraction >= 0.9)),
            sensitive_lower_median_peak: nonzero.iter().all(|&d| {
                match (pick("sensitive", d).and_then(|s| s.median_peak_force), pick("insensitive", d).and_then(|s| s.median_peak_force)) {
                    (Some(a), Some(b)) => a < b,
                    _ => false,
                }
            }),
        }
    });

    let summary = ContactSummary {
        sigma: cfg.solver.build(x0.len())?.sigma,
        omega,
        joint_gamma,
        gains,
        comparison,
        shifts,
        perturbation,
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn shift_result(
    world: &ContactProblem<f64>,
    records: &[rsoc::Result<RolloutRecord<f64>>],
    law: &str,
    gamma: f64,
    shift: f64,
    dir: &str,
    window_start: usize,
    window_end: usize,
) -> ShiftResult {
    let count = records.len();
    let mut peaks = Vec::with_capacity(count);
    let mut window_means = Vec::new();
    let mut maintained = 0;
    for rec in records {
        let Ok(rec) = rec else {
            peaks.push(f64::INFINITY);
            continue;
        };
        let norms: Vec<f64> = force_rows(world, &rec.trajectory, None)
            .iter()
            .map(|(_, r)| r.force[0].hypot(r.force[1]))
            .collect();
        peaks.push(norms.iter().copied().fold(0.0, f64::max));
        let hi = window_end.min(norms.len());
        if window_start < hi {
            window_means.push(norms[window_start..hi].iter().sum::<f64>() / (hi - window_start) as f64);
        }
        if contact_maintained(&rec.trajectory, window_end) {
            maintained += 1;
        }
    }
    let diverged = records.iter().filter(|r| r.is_err()).count();
    let mean_window_force =
        (!window_means.is_empty()).then(|| window_means.iter().sum::<f64>() / window_means.len() as f64);
    ShiftResult {
        law: law.to_string(),
        gamma,
        shift,
        dir: dir.to_string(),
        rollouts: count,
        diverged,
        median_peak_force: median(peaks).filter(|m| m.is_finite()),
        mean_window_force,
        contact_maintained: maintained,
        contact_maintained_fraction: if count == 0 { 0.0 } else { maintained as f64 / count as f64 },
    }
}
