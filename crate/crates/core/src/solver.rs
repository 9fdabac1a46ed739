//! Outer iteration: rollout, local model, filter, backward pass and a
//! line-searched policy update with adaptive regularization.

use crate::approx::{build_plan, StagePlan};
use crate::backward::{backward_recursion, ControlLaw, ValueExpansion};
use crate::error::{Error, Result};
use crate::estimation::{ekf_forward, EstimatorPass};
use crate::linalg::{all_finite_vec, Vect};
use crate::problem::{rk4_step, validate_problem, zero_noise_rollout, NoiseModel, Problem, SolverConfig, Trajectory};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
    RegularizationCeiling,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_failed",
            Termination::RegularizationCeiling => "regularization_ceiling",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T: Real> {
    pub law: ControlLaw<T>,
    pub nominal: Trajectory<T>,
    pub expansions: Vec<ValueExpansion<T>>,
    /// Local model and filter pass at the final nominal.
    pub plan: StagePlan<T>,
    pub estimator: EstimatorPass<T>,
    /// Outer iterations run, including rejected ones.
    pub iterations: usize,
    /// Deterministic cost of the initial rollout, then of each accepted step.
    pub cost_history: Vec<T>,
    pub termination: Termination,
    pub regularization: T,
}

impl<T: Real> SolveResult<T> {
    /// Predicted risk-sensitive cost of the final law at zero deviation.
    pub fn predicted_cost(&self) -> T {
        self.expansions[0].s0
    }

    pub fn final_cost(&self) -> T {
        *self.cost_history.last().expect("history starts with the initial cost")
    }
}

/// `Σ_k L(x_k, u_k, t_k) Δt + Φ(x_N)`.
pub fn evaluate_deterministic_cost<T: Real, P: Problem<T> + ?Sized>(problem: &P, traj: &Trajectory<T>) -> Result<T> {
    let mut total = T::zero();
    for k in 0..traj.len() {
        let c = problem.running_cost(&traj.states()[k], &traj.controls()[k], traj.time(k));
        if !c.is_finite() {
            return Err(Error::NonFiniteCost { step: k });
        }
        total += c * traj.dt();
    }
    let terminal = problem.terminal_cost(traj.final_state());
    if !terminal.is_finite() {
        return Err(Error::NonFiniteCost { step: traj.len() });
    }
    Ok(total + terminal)
}

/// Deterministic closed-loop rollout of
/// `u_k = uⁿ_k + α l_k + L_k (x_k − xⁿ_k)`. `None` if the state or cost
/// stops being finite.
pub fn closed_loop_rollout<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    nominal: &Trajectory<T>,
    law: &ControlLaw<T>,
    alpha: T,
) -> Option<(Trajectory<T>, T)> {
    let dt = nominal.dt();
    let mut states = Vec::with_capacity(nominal.len() + 1);
    let mut controls = Vec::with_capacity(nominal.len());
    states.push(nominal.states()[0].clone());
    for k in 0..nominal.len() {
        let x = &states[k];
        let dx = x - &nominal.states()[k];
        let u = &nominal.controls()[k] + (&law.feedforward[k] * alpha + &law.feedback[k] * dx);
        let next = rk4_step(problem, x, &u, nominal.time(k), dt);
        if !all_finite_vec(&next) || !all_finite_vec(&u) {
            return None;
        }
        controls.push(u);
        states.push(next);
    }
    let traj = Trajectory::new(dt, states, controls).ok()?;
    let cost = evaluate_deterministic_cost(problem, &traj).ok()?;
    Some((traj, cost))
}

fn converged<T: Real>(old: T, new: T, tol: T) -> bool {
    (old - new).abs() <= tol * old.abs().max(T::lit(f64::MIN_POSITIVE))
}

struct Local<T: Real> {
    plan: StagePlan<T>,
    est: EstimatorPass<T>,
}

fn local_model<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    noise: &NoiseModel<T>,
    nominal: &Trajectory<T>,
    config: &SolverConfig<T>,
) -> Result<Local<T>> {
    let plan = build_plan(problem, nominal, config)?;
    let n = nominal.states()[0].len();
    let est = ekf_forward(&plan, noise, &config.error_cov0(n))?;
    Ok(Local { plan, est })
}

/// Iterates from `initial_controls` until the deterministic cost stops
/// changing by more than `cost_tolerance` (relative), the iteration cap is
/// hit, or regularization saturates.
pub fn solve<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    noise: &NoiseModel<T>,
    x0: &Vect<T>,
    initial_controls: &[Vect<T>],
    config: &SolverConfig<T>,
) -> Result<SolveResult<T>> {
    config.validate()?;
    if initial_controls.is_empty() {
        return Err(Error::InvalidInput("initial control sequence is empty".into()));
    }
    let nsteps = initial_controls.len();
    let dt = problem.horizon() / T::from_usize_lossy(nsteps);
    let probe = Trajectory::new(dt, vec![x0.clone(), x0.clone()], vec![initial_controls[0].clone()])?;
    let report = validate_problem(problem, noise, &probe);
    if !report.is_empty() {
        return Err(Error::Validation(report));
    }

    let mut nominal = zero_noise_rollout(problem, initial_controls, x0, dt)?;
    let mut cost = evaluate_deterministic_cost(problem, &nominal)?;
    let mut history = vec![cost];
    let mut lambda = config.regularization_init;
    let mut local = local_model(problem, noise, &nominal, config)?;
    let mut ceiling_failures = 0usize;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;

    while iterations < config.max_iterations {
        iterations += 1;
        let attempt = backward_recursion(&local.plan, &local.est, noise, config.sigma, lambda);
        let law = match attempt {
            Ok((law, _)) => law,
            Err(Error::NeedsRegularization { step }) => {
                log::debug!("iteration {iterations}: H + λI indefinite at step {step} (λ = {lambda:e})");
                if lambda >= config.regularization_max {
                    ceiling_failures += 1;
                    if ceiling_failures >= 2 {
                        termination = Termination::RegularizationCeiling;
                        break;
                    }
                }
                lambda = (lambda * config.regularization_factor).min(config.regularization_max);
                continue;
            }
            Err(e) => return Err(e),
        };

        let mut accepted = None;
        let mut stalled = false;
        for (i, &alpha) in config.line_search_alphas.iter().enumerate() {
            let Some((traj, new_cost)) = closed_loop_rollout(problem, &nominal, &law, alpha) else {
                continue;
            };
            if i == 0 && converged(cost, new_cost, config.cost_tolerance) {
                // The full step no longer moves the cost: a fixed point.
                if new_cost < cost {
                    accepted = Some((traj, new_cost));
                }
                stalled = true;
                break;
            }
            if new_cost < cost {
                accepted = Some((traj, new_cost));
                break;
            }
        }

        if let Some((traj, new_cost)) = accepted {
            let done = stalled || converged(cost, new_cost, config.cost_tolerance);
            log::debug!("iteration {iterations}: cost {cost:e} -> {new_cost:e} (λ = {lambda:e})");
            nominal = traj;
            cost = new_cost;
            history.push(cost);
            lambda = (lambda / config.regularization_factor).max(config.regularization_min);
            ceiling_failures = 0;
            local = local_model(problem, noise, &nominal, config)?;
            if done {
                termination = Termination::Converged;
                break;
            }
        } else if stalled {
            termination = Termination::Converged;
            break;
        } else {
            log::debug!("iteration {iterations}: line search failed (λ = {lambda:e})");
            if lambda >= config.regularization_max {
                ceiling_failures += 1;
                if ceiling_failures >= 2 {
                    termination = Termination::LineSearchFailed;
                    break;
                }
            }
            lambda = (lambda * config.regularization_factor).min(config.regularization_max);
        }
    }

    // Law and value model at the final nominal. The line-search
    // regularization is a step-size device; the reported law uses the
    // smallest shift that keeps H + λI positive-definite.
    let mut lambda = config.regularization_min;
    let (law, expansions) = loop {
        match backward_recursion(&local.plan, &local.est, noise, config.sigma, lambda) {
            Ok(out) => break out,
            Err(Error::NeedsRegularization { .. }) if lambda < config.regularization_max => {
                lambda = (lambda * config.regularization_factor).min(config.regularization_max);
            }
            Err(e) => return Err(e),
        }
    };

    Ok(SolveResult {
        law,
        nominal,
        expansions,
        plan: local.plan,
        estimator: local.est,
        iterations,
        cost_history: history,
        termination,
        regularization: lambda,
    })
}
