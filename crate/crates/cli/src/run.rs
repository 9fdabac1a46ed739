//! Solving a configured problem and writing one run directory.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use rsoc::eval::{rollout_seed, stochastic_rollout, FilterMode, Policy, RolloutOptions, RolloutRecord};
use rsoc::{solve, NoiseModel64, Problem, Result as CoreResult, SolveResult64, SolverConfig64, Vect64};
use serde::Serialize;

use crate::config::{Config, FilterSpec, Model, NoiseSpec, ProblemSpec};
use crate::output::{self, LawFile};
use crate::CliError;

/// Zero-order-hold resampling of a control sequence onto `steps` intervals.
pub fn resample_controls(controls: &[Vect64], steps: usize) -> Vec<Vect64> {
    let from = controls.len();
    (0..steps).map(|k| controls[(k * from / steps).min(from - 1)].clone()).collect()
}

fn solve_err(e: rsoc::Error) -> CliError {
    CliError::Solver(e.to_string())
}

/// Initial controls: zeros, or the result of the configured warm-start chain.
pub fn initial_controls(cfg: &Config) -> Result<Vec<Vect64>, CliError> {
    let (model, x0) = cfg.problem.build()?;
    let steps = cfg.problem.steps();
    let m = model.problem().dims().control;
    let Some(warm) = &cfg.solver.warm_start else {
        return Ok(vec![Vect64::zeros(m); steps]);
    };
    let mut neutral = cfg.solver.build(x0.len())?;
    neutral.sigma = 0.0;
    let mut controls = vec![Vect64::zeros(m); warm.coarse_steps.unwrap_or(steps)];
    if let Some(coarse) = warm.coarse_steps {
        let spec = cfg.problem.with_steps(coarse);
        controls = warm_solve(&spec, &warm.noise, &x0, &controls, &neutral)?;
        controls = resample_controls(&controls, steps);
    }
    warm_solve(&cfg.problem, &warm.noise, &x0, &controls, &neutral)
}

fn warm_solve(
    spec: &ProblemSpec,
    noise: &NoiseSpec,
    x0: &Vect64,
    controls: &[Vect64],
    config: &SolverConfig64,
) -> Result<Vec<Vect64>, CliError> {
    let (model, _) = spec.build()?;
    let noise = noise.build(model.problem())?;
    let r = solve(model.problem(), &noise, x0, controls, config).map_err(solve_err)?;
    log::info!("warm start on {} steps: cost {} ({})", controls.len(), r.final_cost(), r.termination.as_str());
    Ok(r.nominal.controls().to_vec())
}

pub struct Solved {
    pub model: Model,
    pub x0: Vect64,
    pub noise: NoiseModel64,
    pub config: SolverConfig64,
    pub result: SolveResult64,
}

/// Solves `cfg` from `controls`.
pub fn solve_config(cfg: &Config, controls: &[Vect64]) -> Result<Solved, CliError> {
    let (model, x0) = cfg.problem.build()?;
    let noise = cfg.noise.build(model.problem())?;
    let config = cfg.solver.build(x0.len())?;
    let result = solve(model.problem(), &noise, &x0, controls, &config).map_err(solve_err)?;
    Ok(Solved { model, x0, noise, config, result })
}

pub fn rollout_options(cfg: &Config) -> RolloutOptions<f64> {
    RolloutOptions {
        filter: match cfg.experiment.filter {
            FilterSpec::Online => FilterMode::Online,
            FilterSpec::Precomputed => FilterMode::Precomputed,
        },
        ..RolloutOptions::default()
    }
}

/// Runs `count` rollouts in parallel and keeps each outcome, so divergent
/// rollouts can be counted instead of aborting the batch.
#[allow(clippy::too_many_arguments)]
pub fn rollouts(
    model: &dyn Problem<f64>,
    world: &dyn Problem<f64>,
    noise: &NoiseModel64,
    policy: Policy<'_, f64>,
    x0: &Vect64,
    seed: u64,
    count: usize,
    options: &RolloutOptions<f64>,
) -> Vec<CoreResult<RolloutRecord<f64>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| stochastic_rollout(model, world, noise, policy, x0, rollout_seed(seed, i), options))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskSummary {
    pub sigma: f64,
    pub mc_risk: f64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub std_error: f64,
    pub sample_count: usize,
}

/// Risk statistics of the finite rollouts; `None` with fewer than two.
pub fn risk_summary(costs: &[f64], sigma: f64) -> Option<RiskSummary> {
    let r = rsoc::estimate_risk(costs, sigma).ok()?;
    Some(RiskSummary {
        sigma,
        mc_risk: r.mc_risk,
        mean: r.mean,
        variance: r.variance,
        skewness: r.skewness,
        std_error: r.std_error,
        sample_count: r.sample_count,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub termination: String,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    pub final_cost: f64,
    pub predicted_cost: f64,
    pub regularization: f64,
    pub peak_gain: f64,
    pub peak_step: usize,
    pub peak_time: f64,
    pub gain_local_maxima: Vec<usize>,
    pub rollouts: usize,
    pub diverged: usize,
    pub risk: Option<RiskSummary>,
}

/// Interior local maxima of a sequence, plus the last index when the
/// sequence ends on a rise.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut out: Vec<usize> = (1..n.saturating_sub(1)).filter(|&k| values[k] > values[k - 1] && values[k] >= values[k + 1]).collect();
    if n >= 2 && values[n - 1] > values[n - 2] {
        out.push(n - 1);
    }
    out
}

pub fn gain_norms(result: &SolveResult64) -> Vec<f64> {
    result.law.feedback.iter().map(|l| l.norm()).collect()
}

/// Writes `config.json`, `trajectory.csv`, `gains.csv`,
/// `estimation_gains.csv`, `law.json`, `samples.csv` and `summary.json`,
/// plus `forces.csv` for the contact model. Returns the summary.
pub fn write_run(dir: &Path, cfg: &Config, solved: &Solved, seed: u64) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let r = &solved.result;
    let dt = r.nominal.dt();
    output::write_json(&dir.join("config.json"), &cfg.resolved()?)?;
    output::write_trajectory(&dir.join("trajectory.csv"), &r.nominal)?;
    output::write_gains(&dir.join("gains.csv"), &r.law, dt)?;
    output::write_estimation_gains(&dir.join("estimation_gains.csv"), &r.estimator, dt)?;
    output::write_json(&dir.join("law.json"), &LawFile::new(&r.nominal, &r.law, &r.estimator))?;
    if let Model::Contact(p) = &solved.model {
        output::write_forces(&dir.join("forces.csv"), &crate::experiments::nominal_forces(p, &r.nominal))?;
    }

    let problem = solved.model.problem();
    let options = rollout_options(cfg);
    let count = cfg.experiment.rollouts.max(cfg.experiment.sample_rollouts);
    let records = rollouts(problem, problem, &solved.noise, Policy::from(r), &solved.x0, seed, count, &options);
    let samples: Vec<(usize, &rsoc::Trajectory64)> = records
        .iter()
        .enumerate()
        .take(cfg.experiment.sample_rollouts)
        .filter_map(|(i, rec)| rec.as_ref().ok().map(|rec| (i, &rec.trajectory)))
        .collect();
    output::write_samples(&dir.join("samples.csv"), &samples)?;
    let costs: Vec<f64> = records.iter().filter_map(|rec| rec.as_ref().ok().map(|rec| rec.cost)).collect();

    let norms = gain_norms(r);
    let (peak_step, peak_gain) = argmax(&norms);
    let summary = RunSummary {
        termination: r.termination.as_str().to_string(),
        iterations: r.iterations,
        cost_history: r.cost_history.clone(),
        final_cost: r.final_cost(),
        predicted_cost: r.predicted_cost(),
        regularization: r.regularization,
        peak_gain,
        peak_step,
        peak_time: peak_step as f64 * dt,
        gain_local_maxima: local_maxima(&norms),
        rollouts: count,
        diverged: count - costs.len(),
        risk: risk_summary(&costs, solved.config.sigma),
    };
    output::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    values.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
}
