//! JSON run configuration: problem, noise, solver and experiment sections.

use std::path::Path;

use nalgebra::{Vector2, Vector4};
use rsoc::models::{
    ContactCost, ContactProblem, LinearProblem, ManipulatorParams, Viapoint, ViapointCost, ViapointProblem, WallContact,
};
use rsoc::{Mat64, NoiseModel64, Problem, SolverConfig64, Vect64};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ProblemSpec {
    Viapoint(ViapointSpec),
    Contact(ContactSpec),
    Linear(LinearSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub d1: f64,
    pub d2: f64,
    #[serde(default)]
    pub gravity: bool,
}

impl Default for ArmSpec {
    fn default() -> Self {
        let p = ManipulatorParams::<f64>::default();
        Self { l1: p.l1, l2: p.l2, m1: p.m1, m2: p.m2, d1: p.d1, d2: p.d2, gravity: p.gravity }
    }
}

impl ArmSpec {
    pub fn params(&self) -> ManipulatorParams<f64> {
        ManipulatorParams {
            l1: self.l1,
            l2: self.l2,
            m1: self.m1,
            m2: self.m2,
            d1: self.d1,
            d2: self.d2,
            gravity: self.gravity,
            ..ManipulatorParams::default()
        }
    }
}

/// End-effector `(p_x, p_y, v_x, v_y)` target at a time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub time: f64,
    pub target: [f64; 4],
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub target: [f64; 4],
    pub weight: f64,
}

/// Which states receive process noise in the viapoint task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    #[default]
    All,
    Velocities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViapointSpec {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub arm: ArmSpec,
    pub initial_q: [f64; 2],
    #[serde(default)]
    pub initial_qd: [f64; 2],
    pub control_weight: f64,
    pub viapoints: Vec<TargetSpec>,
    pub goal: GoalSpec,
    #[serde(default)]
    pub process_channels: Channels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub normal: [f64; 2],
    pub offset: f64,
    pub stiffness: f64,
    pub damping: f64,
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub arm: ArmSpec,
    pub initial_q: [f64; 2],
    #[serde(default)]
    pub initial_qd: [f64; 2],
    pub control_weight: f64,
    pub wall: WallSpec,
    pub via: TargetSpec,
    pub force_target: f64,
    pub window: [f64; 2],
    pub contact_weight: f64,
    #[serde(default)]
    pub goal: Option<GoalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub horizon: f64,
    pub steps: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub qf: Vec<Vec<f64>>,
    /// Observation matrix; identity when absent.
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
    /// Process-noise input; identity when absent.
    #[serde(default)]
    pub m: Option<Vec<Vec<f64>>>,
    /// Measurement-noise input; identity when absent.
    #[serde(default)]
    pub n: Option<Vec<Vec<f64>>>,
    pub x0: Vec<f64>,
}

/// Covariance as `scale·I`, a diagonal, or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scale(f64),
    Diagonal { diagonal: Vec<f64> },
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn to_mat(&self, dim: usize, what: &str) -> Result<Mat64, CliError> {
        let m = match self {
            CovSpec::Scale(s) => Mat64::identity(dim, dim) * *s,
            CovSpec::Diagonal { diagonal } => {
                if diagonal.len() != dim {
                    return Err(CliError::Config(format!("{what}: diagonal has {} entries, expected {dim}", diagonal.len())));
                }
                Mat64::from_diagonal(&Vect64::from_column_slice(diagonal))
            }
            CovSpec::Full(rows) => {
                let m = matrix(rows, what)?;
                if m.shape() != (dim, dim) {
                    return Err(CliError::Config(format!("{what}: matrix is {:?}, expected {dim}x{dim}", m.shape())));
                }
                m
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config(format!("{what}: non-finite entry")));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub process: CovSpec,
    pub measurement: CovSpec,
}

/// Solve chain used to find a starting control sequence: an optional
/// risk-neutral solve on a coarser grid, then a risk-neutral solve on the
/// full grid, both under `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStartSpec {
    pub noise: NoiseSpec,
    #[serde(default)]
    pub coarse_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub sigma: Option<f64>,
    pub max_iterations: Option<usize>,
    pub cost_tolerance: Option<f64>,
    pub regularization_init: Option<f64>,
    pub regularization_min: Option<f64>,
    pub regularization_max: Option<f64>,
    pub regularization_factor: Option<f64>,
    pub line_search_alphas: Option<Vec<f64>>,
    pub initial_error_cov: Option<CovSpec>,
    pub rng_seed: Option<u64>,
    pub fd_epsilon: Option<f64>,
    pub analytic_derivatives: Option<bool>,
    pub state_hessian_floor: Option<f64>,
    pub warm_start: Option<WarmStartSpec>,
}

impl SolverSpec {
    pub fn build(&self, n: usize) -> Result<SolverConfig64, CliError> {
        let d = SolverConfig64::default();
        let config = SolverConfig64 {
            sigma: self.sigma.unwrap_or(d.sigma),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            cost_tolerance: self.cost_tolerance.unwrap_or(d.cost_tolerance),
            regularization_init: self.regularization_init.unwrap_or(d.regularization_init),
            regularization_min: self.regularization_min.unwrap_or(d.regularization_min),
            regularization_max: self.regularization_max.unwrap_or(d.regularization_max),
            regularization_factor: self.regularization_factor.unwrap_or(d.regularization_factor),
            line_search_alphas: self.line_search_alphas.clone().unwrap_or_else(|| d.line_search_alphas.clone()),
            initial_error_cov: Some(match &self.initial_error_cov {
                Some(c) => c.to_mat(n, "solver.initial_error_cov")?,
                None => d.error_cov0(n),
            }),
            rng_seed: self.rng_seed.unwrap_or(d.rng_seed),
            fd_epsilon: self.fd_epsilon.unwrap_or(d.fd_epsilon),
            analytic_derivatives: self.analytic_derivatives.unwrap_or(d.analytic_derivatives),
            state_hessian_floor: self.state_hessian_floor.or(d.state_hessian_floor),
        };
        config.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        Ok(config)
    }

    /// Every field filled in, as written to `config.json`.
    pub fn resolved(&self, n: usize) -> Result<SolverSpec, CliError> {
        let c = self.build(n)?;
        let cov = c.error_cov0(n);
        Ok(SolverSpec {
            sigma: Some(c.sigma),
            max_iterations: Some(c.max_iterations),
            cost_tolerance: Some(c.cost_tolerance),
            regularization_init: Some(c.regularization_init),
            regularization_min: Some(c.regularization_min),
            regularization_max: Some(c.regularization_max),
            regularization_factor: Some(c.regularization_factor),
            line_search_alphas: Some(c.line_search_alphas),
            initial_error_cov: Some(CovSpec::Full(rows_of(&cov))),
            rng_seed: Some(c.rng_seed),
            fd_epsilon: Some(c.fd_epsilon),
            analytic_derivatives: Some(c.analytic_derivatives),
            state_hessian_floor: c.state_hessian_floor,
            warm_start: self.warm_start.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSpec {
    #[default]
    Online,
    Precomputed,
}

/// Noise levels swept with the other covariance held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub levels: Vec<f64>,
    pub fixed: f64,
}

fn default_seed() -> u64 {
    7
}

fn default_sample_rollouts() -> usize {
    10
}

fn default_rollouts() -> usize {
    100
}

fn default_near_contact() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Noisy rollouts written out per run.
    #[serde(default = "default_sample_rollouts")]
    pub sample_rollouts: usize,
    /// Rollouts used for statistics per run or per perturbation.
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default)]
    pub filter: FilterSpec,
    /// Viapoint task: process-noise sweep (measurement noise fixed).
    #[serde(default)]
    pub omega_sweep: Option<SweepSpec>,
    /// Viapoint task: measurement-noise sweep (process noise fixed).
    #[serde(default)]
    pub gamma_sweep: Option<SweepSpec>,
    /// Contact task: wall-distance measurement noise levels whose gains are compared.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Contact task: law designed for uncertain wall distance.
    #[serde(default)]
    pub sensitive_gamma: Option<f64>,
    /// Contact task: law designed for a well-known wall distance.
    #[serde(default)]
    pub insensitive_gamma: Option<f64>,
    /// Contact task: process-noise scale on the joint accelerations.
    #[serde(default)]
    pub omega: Option<f64>,
    /// Contact task: measurement noise on joint positions and velocities.
    #[serde(default)]
    pub joint_gamma: Option<f64>,
    /// Contact task: how much closer the true wall is, metres.
    #[serde(default)]
    pub shifts: Vec<f64>,
    /// Half-width, seconds, of the interval around first contact searched for the peak gain.
    #[serde(default = "default_near_contact")]
    pub near_contact: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            sample_rollouts: default_sample_rollouts(),
            rollouts: default_rollouts(),
            filter: FilterSpec::Online,
            omega_sweep: None,
            gamma_sweep: None,
            gammas: Vec::new(),
            sensitive_gamma: None,
            insensitive_gamma: None,
            omega: None,
            joint_gamma: None,
            shifts: Vec::new(),
            near_contact: default_near_contact(),
        }
    }
}

pub(crate) fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Mat64, CliError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(CliError::Config(format!("{what}: matrix rows must be non-empty and equal length")));
    }
    Ok(Mat64::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub(crate) fn rows_of(m: &Mat64) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A problem built from a config, keeping the concrete type for drivers
/// that need to edit it.
#[derive(Debug, Clone)]
pub enum Model {
    Viapoint(ViapointProblem<f64>),
    Contact(ContactProblem<f64>),
    Linear(LinearProblem<f64>),
}

impl Model {
    pub fn problem(&self) -> &dyn Problem<f64> {
        match self {
            Model::Viapoint(p) => p,
            Model::Contact(p) => p,
            Model::Linear(p) => p,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Model::Viapoint(p) => p.steps,
            Model::Contact(p) => p.steps,
            Model::Linear(_) => 0,
        }
    }
}

fn step_of(time: f64, horizon: f64, steps: usize, what: &str) -> Result<usize, CliError> {
    if !(0.0..=horizon).contains(&time) {
        return Err(CliError::Config(format!("{what}: time {time} outside [0, {horizon}]")));
    }
    Ok((time / (horizon / steps as f64)).round() as usize)
}

fn check_grid(horizon: f64, steps: usize) -> Result<(), CliError> {
    if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
        return Err(CliError::Config("problem: horizon must be positive and steps at least 1".into()));
    }
    Ok(())
}

impl ProblemSpec {
    pub fn steps(&self) -> usize {
        match self {
            ProblemSpec::Viapoint(s) => s.steps,
            ProblemSpec::Contact(s) => s.steps,
            ProblemSpec::Linear(s) => s.steps,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            ProblemSpec::Viapoint(s) => s.horizon,
            ProblemSpec::Contact(s) => s.horizon,
            ProblemSpec::Linear(s) => s.horizon,
        }
    }

    /// Same problem on a grid with a different number of steps.
    pub fn with_steps(&self, steps: usize) -> ProblemSpec {
        let mut s = self.clone();
        match &mut s {
            ProblemSpec::Viapoint(v) => v.steps = steps,
            ProblemSpec::Contact(c) => c.steps = steps,
            ProblemSpec::Linear(l) => l.steps = steps,
        }
        s
    }

    pub fn build(&self) -> Result<(Model, Vect64), CliError> {
        match self {
            ProblemSpec::Viapoint(s) => {
                check_grid(s.horizon, s.steps)?;
                let params = s.arm.params();
                params.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let viapoints = s
                    .viapoints
                    .iter()
                    .map(|v| {
                        Ok(Viapoint {
                            step: step_of(v.time, s.horizon, s.steps, "viapoint")?,
                            target: Vector4::from(v.target),
                            weight: v.weight,
                        })
                    })
                    .collect::<Result<_, CliError>>()?;
                let cost = ViapointCost {
                    control_weight: s.control_weight,
                    viapoints,
                    goal: Vector4::from(s.goal.target),
                    goal_weight: s.goal.weight,
                };
                let mut p = ViapointProblem::new(params, cost, s.horizon, s.steps);
                if s.process_channels == Channels::Velocities {
                    let mut m = Mat64::zeros(4, 2);
                    m[(2, 0)] = 1.0;
                    m[(3, 1)] = 1.0;
                    p.process_input = m;
                }
                let x0 = Vect64::from_column_slice(&[s.initial_q[0], s.initial_q[1], s.initial_qd[0], s.initial_qd[1]]);
                Ok((Model::Viapoint(p), x0))
            }
            ProblemSpec::Contact(s) => {
                check_grid(s.horizon, s.steps)?;
                let params = s.arm.params();
                params.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let wall = WallContact {
                    normal: Vector2::from(s.wall.normal),
                    offset: s.wall.offset,
                    stiffness: s.wall.stiffness,
                    damping: s.wall.damping,
                    shift: s.wall.shift,
                };
                wall.validate().map_err(|e| CliError::Config(e.to_string()))?;
                if !(s.window[0] <= s.window[1]) {
                    return Err(CliError::Config("contact window must be ordered".into()));
                }
                let cost = ContactCost {
                    control_weight: s.control_weight,
                    via: Viapoint {
                        step: step_of(s.via.time, s.horizon, s.steps, "via")?,
                        target: Vector4::from(s.via.target),
                        weight: s.via.weight,
                    },
                    force_target: s.force_target,
                    window: (s.window[0], s.window[1]),
                    contact_weight: s.contact_weight,
                    goal: s.goal.map(|g| (Vector4::from(g.target), g.weight)),
                };
                let p = ContactProblem::new(params, wall, cost, s.horizon, s.steps);
                let x0 = p.initial_state(&Vector2::from(s.initial_q), &Vector2::from(s.initial_qd));
                Ok((Model::Contact(p), x0))
            }
            ProblemSpec::Linear(s) => {
                check_grid(s.horizon, s.steps)?;
                let a = matrix(&s.a, "a")?;
                let b = matrix(&s.b, "b")?;
                let n = a.nrows();
                if a.ncols() != n || b.nrows() != n || s.x0.len() != n {
                    return Err(CliError::Config("linear: a must be square and match b and x0".into()));
                }
                let m = b.ncols();
                let q = matrix(&s.q, "q")?;
                let r = matrix(&s.r, "r")?;
                let qf = matrix(&s.qf, "qf")?;
                if q.shape() != (n, n) || qf.shape() != (n, n) || r.shape() != (m, m) {
                    return Err(CliError::Config("linear: cost matrix shapes do not match a and b".into()));
                }
                let mut p = LinearProblem::new(a, b, s.horizon).with_cost(q, r, qf);
                let opt = |o: &Option<Vec<Vec<f64>>>, what: &str| o.as_ref().map(|m| matrix(m, what)).transpose();
                let c = opt(&s.c, "c")?.unwrap_or_else(|| Mat64::identity(n, n));
                let nn = opt(&s.n, "n")?.unwrap_or_else(|| Mat64::identity(c.nrows(), c.nrows()));
                let mm = opt(&s.m, "m")?.unwrap_or_else(|| Mat64::identity(n, n));
                if c.ncols() != n || nn.nrows() != c.nrows() || mm.nrows() != n {
                    return Err(CliError::Config("linear: c, m, n shapes do not match the state".into()));
                }
                p = p.with_observation(c, nn.clone()).with_noise_inputs(mm, nn);
                Ok((Model::Linear(p), Vect64::from_column_slice(&s.x0)))
            }
        }
    }
}

impl NoiseSpec {
    pub fn build(&self, problem: &dyn Problem<f64>) -> Result<NoiseModel64, CliError> {
        let dims = problem.dims();
        Ok(NoiseModel64::new(
            self.process.to_mat(dims.process_noise, "noise.process")?,
            self.measurement.to_mat(dims.measurement_noise, "noise.measurement")?,
        ))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The config with solver defaults filled in.
    pub fn resolved(&self) -> Result<Config, CliError> {
        let (_, x0) = self.problem.build()?;
        let mut c = self.clone();
        c.solver = self.solver.resolved(x0.len())?;
        Ok(c)
    }
}
