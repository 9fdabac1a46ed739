//! Noisy closed-loop rollouts and Monte-Carlo estimation of the exponential
//! risk functional.

mod risk;

pub use risk::{estimate_risk, estimate_risk_seeded, RiskEstimate};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::approx::{linearize_stage, StagePlan};
use crate::backward::ControlLaw;
use crate::error::{Error, Result};
use crate::estimation::{ekf_step, online_filter_step, EstimatorPass};
use crate::linalg::{all_finite_vec, psd_factor, Mat, Vect};
use crate::problem::{rk4_step, NoiseModel, Problem, Trajectory};
use crate::solver::SolveResult;
use crate::Real;

const PROCESS_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;

/// How the controller's state estimate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    /// EKF relinearized at the running estimate, covariance propagated from
    /// the initial error covariance of the solve.
    #[default]
    Online,
    /// Deviation-coordinate filter with the gains precomputed on the nominal.
    Precomputed,
}

/// Drift integrator for the deterministic part of each noisy step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOptions<T: Real> {
    pub filter: FilterMode,
    pub integrator: Integrator,
    /// State norm beyond which a rollout counts as diverged.
    pub divergence_threshold: T,
    /// Finite-difference step for online relinearization.
    pub fd_epsilon: T,
    /// Noise actually injected into the world. `None` uses the noise model
    /// the controller was designed for; the filter always uses the latter.
    pub world_noise: Option<NoiseModel<T>>,
}

impl<T: Real> Default for RolloutOptions<T> {
    fn default() -> Self {
        Self {
            filter: FilterMode::Online,
            integrator: Integrator::Rk4,
            divergence_threshold: T::lit(1e8),
            fd_epsilon: T::lit(1e-5),
            world_noise: None,
        }
    }
}

/// Everything a rollout needs from a solve: nominal, law, local model and
/// precomputed filter pass.
#[derive(Debug, Clone, Copy)]
pub struct Policy<'a, T: Real> {
    pub nominal: &'a Trajectory<T>,
    pub law: &'a ControlLaw<T>,
    pub plan: &'a StagePlan<T>,
    pub estimator: &'a EstimatorPass<T>,
}

impl<'a, T: Real> From<&'a SolveResult<T>> for Policy<'a, T> {
    fn from(r: &'a SolveResult<T>) -> Self {
        Self { nominal: &r.nominal, law: &r.law, plan: &r.plan, estimator: &r.estimator }
    }
}

/// One noisy closed-loop realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord<T: Real> {
    pub trajectory: Trajectory<T>,
    pub cost: T,
    /// Estimates `x̂_k` in absolute coordinates, `N + 1` of them.
    pub estimates: Vec<Vect<T>>,
    /// Contact force at each step when the world reports one.
    pub forces: Option<Vec<Vect<T>>>,
}

/// Realizations of the closed-loop cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch<T: Real> {
    pub seeds: Vec<u64>,
    pub trajectories: Vec<Trajectory<T>>,
    pub costs: Vec<T>,
    pub contact_forces: Option<Vec<Vec<Vect<T>>>>,
}

impl<T: Real> RolloutBatch<T> {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

/// Seed of rollout `index` in a batch.
pub fn rollout_seed(batch_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = batch_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel);
    rng
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng, factor: &Mat<T>) -> Vect<T> {
    let z = Vect::from_fn(factor.ncols(), |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
    factor * z
}

fn step_drift<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    integrator: Integrator,
    x: &Vect<T>,
    u: &Vect<T>,
    t: T,
    dt: T,
) -> Vect<T> {
    match integrator {
        Integrator::Rk4 => rk4_step(problem, x, u, t, dt),
        Integrator::Euler => x + problem.drift(x, u, t) * dt,
    }
}

fn noise_factors<T: Real>(noise: &NoiseModel<T>, options: &RolloutOptions<T>) -> (Mat<T>, Mat<T>) {
    let injected = options.world_noise.as_ref().unwrap_or(noise);
    (psd_factor(injected.process_cov()), psd_factor(injected.measurement_cov()))
}

fn check_policy<T: Real>(policy: &Policy<'_, T>) -> Result<()> {
    let n = policy.nominal.len();
    if policy.law.len() != n || policy.plan.len() != n || policy.estimator.gains.len() != n {
        return Err(Error::InvalidInput("law, plan and estimator do not match the nominal".into()));
    }
    Ok(())
}

/// Runs one noisy closed-loop rollout.
///
/// The world is stepped as `x⁺ = Φ_Δt(x, u) + M(x, u) √Δt ξ` with
/// `ξ ~ N(0, Ω)` and observed through `dy = n(x, u) Δt + N(x, u) √Δt η`,
/// `η ~ N(0, Γ)`. The controller applies `u = uⁿ + l + L (x̂ − xⁿ)` with the
/// estimate from `model`. `model` and `world` differ only when evaluating a
/// law in a perturbed environment.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_rollout<T: Real, M: Problem<T> + ?Sized, W: Problem<T> + ?Sized>(
    model: &M,
    world: &W,
    noise: &NoiseModel<T>,
    policy: Policy<'_, T>,
    x0: &Vect<T>,
    seed: u64,
    options: &RolloutOptions<T>,
) -> Result<RolloutRecord<T>> {
    check_policy(&policy)?;
    let (om, ga) = noise_factors(noise, options);
    rollout_inner(model, world, noise, &policy, x0, seed, options, &om, &ga)
}

#[allow(clippy::too_many_arguments)]
fn rollout_inner<T: Real, M: Problem<T> + ?Sized, W: Problem<T> + ?Sized>(
    model: &M,
    world: &W,
    noise: &NoiseModel<T>,
    policy: &Policy<'_, T>,
    x0: &Vect<T>,
    seed: u64,
    options: &RolloutOptions<T>,
    om_factor: &Mat<T>,
    ga_factor: &Mat<T>,
) -> Result<RolloutRecord<T>> {
    let nominal = policy.nominal;
    let dt = nominal.dt();
    let sqrt_dt = dt.sqrt();
    let mut process = stream(seed, PROCESS_STREAM);
    let mut measure = stream(seed, MEASUREMENT_STREAM);

    let nsteps = nominal.len();
    let mut states = Vec::with_capacity(nsteps + 1);
    let mut controls = Vec::with_capacity(nsteps);
    let mut estimates = Vec::with_capacity(nsteps + 1);
    let mut forces: Vec<Vect<T>> = Vec::new();
    let mut record_forces = true;

    let mut x = x0.clone();
    let mut xhat = nominal.states()[0].clone();
    let mut sigma = policy.estimator.error_covs[0].clone();
    let mut cost = T::zero();

    for k in 0..nsteps {
        let t = nominal.time(k);
        let (xn, un) = (&nominal.states()[k], &nominal.controls()[k]);
        let dxhat = &xhat - xn;
        let u = un + policy.law.control(k, &dxhat);

        let rate = world.running_cost(&x, &u, t);
        if !rate.is_finite() {
            return Err(Error::NonFiniteCost { step: k });
        }
        cost += rate * dt;
        if record_forces {
            match world.contact_force(&x, &u, t) {
                Some(f) => forces.push(f),
                None => record_forces = false,
            }
        }

        let xi = gaussian(&mut process, om_factor);
        let eta = gaussian(&mut measure, ga_factor);
        let y_inc = world.measurement_drift(&x, &u, t) * dt + world.measurement_diffusion(&x, &u, t) * &eta * sqrt_dt;
        let x_next =
            step_drift(world, options.integrator, &x, &u, t, dt) + world.diffusion(&x, &u, t) * &xi * sqrt_dt;

        let xhat_next = match options.filter {
            FilterMode::Online => {
                let stage = linearize_stage(model, &xhat, &u, t, dt, options.fd_epsilon)?;
                let (gain, next_sigma) = ekf_step(&stage, noise, &sigma, k)?;
                sigma = next_sigma;
                let innovation = y_inc - model.measurement_drift(&xhat, &u, t) * dt;
                step_drift(model, options.integrator, &xhat, &u, t, dt) + gain * innovation
            }
            FilterMode::Precomputed => {
                let dy = y_inc - model.measurement_drift(xn, un, t) * dt;
                let du = &u - un;
                let next = online_filter_step(&policy.plan.dynamics[k], &policy.estimator.gains[k], &dxhat, &du, &dy);
                &nominal.states()[k + 1] + next
            }
        };

        let norm = x_next.norm();
        if !all_finite_vec(&x_next) || norm > options.divergence_threshold {
            return Err(Error::Diverged { step: k + 1, norm: norm.as_f64() });
        }
        states.push(std::mem::replace(&mut x, x_next));
        estimates.push(std::mem::replace(&mut xhat, xhat_next));
        controls.push(u);
    }
    let terminal = world.terminal_cost(&x);
    if !terminal.is_finite() {
        return Err(Error::NonFiniteCost { step: nsteps });
    }
    cost += terminal;
    states.push(x);
    estimates.push(xhat);
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost { step: nsteps });
    }
    Ok(RolloutRecord {
        trajectory: Trajectory::new(dt, states, controls)?,
        cost,
        estimates,
        forces: (record_forces && !forces.is_empty()).then_some(forces),
    })
}

/// Runs `count` rollouts in parallel; rollout `i` uses
/// [`rollout_seed`]`(batch_seed, i)`. Results are in index order.
#[allow(clippy::too_many_arguments)]
pub fn run_batch<T: Real, M: Problem<T> + ?Sized, W: Problem<T> + ?Sized>(
    model: &M,
    world: &W,
    noise: &NoiseModel<T>,
    policy: Policy<'_, T>,
    x0: &Vect<T>,
    batch_seed: u64,
    count: usize,
    options: &RolloutOptions<T>,
) -> Result<RolloutBatch<T>> {
    check_policy(&policy)?;
    let (om, ga) = noise_factors(noise, options);
    let seeds: Vec<u64> = (0..count as u64).map(|i| rollout_seed(batch_seed, i)).collect();
    let records: Vec<RolloutRecord<T>> = seeds
        .par_iter()
        .map(|&s| rollout_inner(model, world, noise, &policy, x0, s, options, &om, &ga))
        .collect::<Result<_>>()?;
    let has_forces = records.iter().all(|r| r.forces.is_some()) && !records.is_empty();
    let mut trajectories = Vec::with_capacity(count);
    let mut costs = Vec::with_capacity(count);
    let mut forces = Vec::with_capacity(if has_forces { count } else { 0 });
    for r in records {
        trajectories.push(r.trajectory);
        costs.push(r.cost);
        if has_forces {
            forces.push(r.forces.expect("checked above"));
        }
    }
    Ok(RolloutBatch { seeds, trajectories, costs, contact_forces: has_forces.then_some(forces) })
}

/// Realized costs only, for large Monte-Carlo batches.
#[allow(clippy::too_many_arguments)]
pub fn sample_costs<T: Real, M: Problem<T> + ?Sized, W: Problem<T> + ?Sized>(
    model: &M,
    world: &W,
    noise: &NoiseModel<T>,
    policy: Policy<'_, T>,
    x0: &Vect<T>,
    batch_seed: u64,
    count: usize,
    options: &RolloutOptions<T>,
) -> Result<Vec<T>> {
    check_policy(&policy)?;
    let (om, ga) = noise_factors(noise, options);
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            rollout_inner(model, world, noise, &policy, x0, rollout_seed(batch_seed, i), options, &om, &ga)
                .map(|r| r.cost)
        })
        .collect()
}
