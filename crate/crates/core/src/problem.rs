//! Problem abstraction: dynamics, measurement and cost callbacks, noise
//! models, trajectory containers and solver configuration.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, all_finite_vec, is_psd, symmetrize, Mat, Vect};
use crate::Real;

/// Dimensions of a problem: state `n`, control `m`, measurement `p`, process
/// noise `w` and measurement noise `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub measurement: usize,
    pub process_noise: usize,
    pub measurement_noise: usize,
}

/// Continuous-time derivatives of the running cost rate at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDerivatives<T: Real> {
    pub value: T,
    pub dx: Vect<T>,
    pub du: Vect<T>,
    pub dxx: Mat<T>,
    /// Mixed block `∂²L/∂x∂u`, `n × m`.
    pub dxu: Mat<T>,
    pub duu: Mat<T>,
}

/// Derivatives of the terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDerivatives<T: Real> {
    pub value: T,
    pub dx: Vect<T>,
    pub dxx: Mat<T>,
}

/// A stochastic optimal control problem
///
/// ```text
/// dx = m(x,u,t) dt + M(x,u,t) dω,   dω ~ N(0, Ω dt)
/// dy = n(x,u,t) dt + N(x,u,t) dγ,   dγ ~ N(0, Γ dt)
/// J  = Φ(x(t_f)) + ∫ L(x,u,t) dt
/// ```
///
/// Implementations must be deterministic and re-entrant. The optional
/// derivative hooks let a model supply exact Jacobians and cost expansions;
/// when they return `None` the solver falls back to finite differences.
pub trait Problem<T: Real>: Send + Sync {
    fn dims(&self) -> Dims;
    fn horizon(&self) -> T;

    fn drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T>;
    fn diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T>;
    fn measurement_drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T>;
    fn measurement_diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T>;
    fn running_cost(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> T;
    fn terminal_cost(&self, x: &Vect<T>) -> T;

    /// Analytic `(∂m/∂x, ∂m/∂u)`.
    fn drift_jacobians(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        None
    }

    /// Analytic `(∂n/∂x, ∂n/∂u)`.
    fn measurement_jacobians(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        None
    }

    fn running_cost_derivatives(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<CostDerivatives<T>> {
        None
    }

    fn terminal_cost_derivatives(&self, _x: &Vect<T>) -> Option<TerminalDerivatives<T>> {
        None
    }

    /// External contact force acting on the system, for recording only.
    fn contact_force(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<Vect<T>> {
        None
    }
}

impl<T: Real, P: Problem<T> + ?Sized> Problem<T> for &P {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn horizon(&self) -> T {
        (**self).horizon()
    }
    fn drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T> {
        (**self).drift(x, u, t)
    }
    fn diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T> {
        (**self).diffusion(x, u, t)
    }
    fn measurement_drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T> {
        (**self).measurement_drift(x, u, t)
    }
    fn measurement_diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T> {
        (**self).measurement_diffusion(x, u, t)
    }
    fn running_cost(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> T {
        (**self).running_cost(x, u, t)
    }
    fn terminal_cost(&self, x: &Vect<T>) -> T {
        (**self).terminal_cost(x)
    }
    fn drift_jacobians(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<(Mat<T>, Mat<T>)> {
        (**self).drift_jacobians(x, u, t)
    }
    fn measurement_jacobians(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<(Mat<T>, Mat<T>)> {
        (**self).measurement_jacobians(x, u, t)
    }
    fn running_cost_derivatives(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<CostDerivatives<T>> {
        (**self).running_cost_derivatives(x, u, t)
    }
    fn terminal_cost_derivatives(&self, x: &Vect<T>) -> Option<TerminalDerivatives<T>> {
        (**self).terminal_cost_derivatives(x)
    }
    fn contact_force(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<Vect<T>> {
        (**self).contact_force(x, u, t)
    }
}

type VecFn<T> = Arc<dyn Fn(&Vect<T>, &Vect<T>, T) -> Vect<T> + Send + Sync>;
type MatFn<T> = Arc<dyn Fn(&Vect<T>, &Vect<T>, T) -> Mat<T> + Send + Sync>;
type CostFn<T> = Arc<dyn Fn(&Vect<T>, &Vect<T>, T) -> T + Send + Sync>;
type TermFn<T> = Arc<dyn Fn(&Vect<T>) -> T + Send + Sync>;

/// Closure-backed [`Problem`].
///
/// Defaults: measurement `n(x) = x` with identity diffusion, identity process
/// diffusion, zero costs. Override with the builder methods.
#[derive(Clone)]
pub struct ContinuousProblem<T: Real> {
    dims: Dims,
    horizon: T,
    drift: VecFn<T>,
    diffusion: MatFn<T>,
    measurement_drift: VecFn<T>,
    measurement_diffusion: MatFn<T>,
    running_cost: CostFn<T>,
    terminal_cost: TermFn<T>,
}

impl<T: Real> std::fmt::Debug for ContinuousProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousProblem")
            .field("dims", &self.dims)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ContinuousProblem<T> {
    /// Starts a problem with `n` states and `m` controls. The measurement and
    /// both noise channels default to dimension `n`.
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        horizon: T,
        drift: impl Fn(&Vect<T>, &Vect<T>, T) -> Vect<T> + Send + Sync + 'static,
    ) -> Self {
        let n = state_dim;
        Self {
            dims: Dims {
                state: n,
                control: control_dim,
                measurement: n,
                process_noise: n,
                measurement_noise: n,
            },
            horizon,
            drift: Arc::new(drift),
            diffusion: Arc::new(move |_, _, _| Mat::identity(n, n)),
            measurement_drift: Arc::new(|x, _, _| x.clone()),
            measurement_diffusion: Arc::new(move |_, _, _| Mat::identity(n, n)),
            running_cost: Arc::new(|_, _, _| T::zero()),
            terminal_cost: Arc::new(|_| T::zero()),
        }
    }

    /// Process diffusion `M(x,u,t)`, an `n × w` matrix.
    pub fn with_diffusion(
        mut self,
        noise_dim: usize,
        f: impl Fn(&Vect<T>, &Vect<T>, T) -> Mat<T> + Send + Sync + 'static,
    ) -> Self {
        self.dims.process_noise = noise_dim;
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_measurement(
        mut self,
        measurement_dim: usize,
        f: impl Fn(&Vect<T>, &Vect<T>, T) -> Vect<T> + Send + Sync + 'static,
    ) -> Self {
        self.dims.measurement = measurement_dim;
        self.measurement_drift = Arc::new(f);
        self
    }

    /// Measurement diffusion `N(x,u,t)`, a `p × v` matrix.
    pub fn with_measurement_diffusion(
        mut self,
        noise_dim: usize,
        f: impl Fn(&Vect<T>, &Vect<T>, T) -> Mat<T> + Send + Sync + 'static,
    ) -> Self {
        self.dims.measurement_noise = noise_dim;
        self.measurement_diffusion = Arc::new(f);
        self
    }

    pub fn with_running_cost(mut self, f: impl Fn(&Vect<T>, &Vect<T>, T) -> T + Send + Sync + 'static) -> Self {
        self.running_cost = Arc::new(f);
        self
    }

    pub fn with_terminal_cost(mut self, f: impl Fn(&Vect<T>) -> T + Send + Sync + 'static) -> Self {
        self.terminal_cost = Arc::new(f);
        self
    }
}

impl<T: Real> Problem<T> for ContinuousProblem<T> {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn horizon(&self) -> T {
        self.horizon
    }
    fn drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T> {
        (self.drift)(x, u, t)
    }
    fn diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T> {
        (self.diffusion)(x, u, t)
    }
    fn measurement_drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T> {
        (self.measurement_drift)(x, u, t)
    }
    fn measurement_diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T> {
        (self.measurement_diffusion)(x, u, t)
    }
    fn running_cost(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> T {
        (self.running_cost)(x, u, t)
    }
    fn terminal_cost(&self, x: &Vect<T>) -> T {
        (self.terminal_cost)(x)
    }
}

/// Process covariance `Ω` (`w × w`) and measurement covariance `Γ` (`v × v`).
/// Both are symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<T: Real> {
    process_cov: Mat<T>,
    measurement_cov: Mat<T>,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(process_cov: Mat<T>, measurement_cov: Mat<T>) -> Self {
        Self {
            process_cov: symmetrize(&process_cov),
            measurement_cov: symmetrize(&measurement_cov),
        }
    }

    /// `Ω = ω I_w`, `Γ = γ I_v`.
    pub fn isotropic(w: usize, process: T, v: usize, measurement: T) -> Self {
        Self::new(Mat::identity(w, w) * process, Mat::identity(v, v) * measurement)
    }

    pub fn process_cov(&self) -> &Mat<T> {
        &self.process_cov
    }

    pub fn measurement_cov(&self) -> &Mat<T> {
        &self.measurement_cov
    }
}

/// Time-indexed state/control sequence: `N + 1` states, `N` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    dt: T,
    states: Vec<Vect<T>>,
    controls: Vec<Vect<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(dt: T, states: Vec<Vect<T>>, controls: Vec<Vect<T>>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if controls.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one control".into()));
        }
        if states.len() != controls.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} states for {} controls; expected N + 1 states",
                states.len(),
                controls.len()
            )));
        }
        let n = states[0].len();
        let m = controls[0].len();
        if states.iter().any(|s| s.len() != n) || controls.iter().any(|u| u.len() != m) {
            return Err(Error::InvalidInput("ragged trajectory rows".into()));
        }
        Ok(Self { dt, states, controls })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of control steps `N`.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> &[Vect<T>] {
        &self.states
    }

    pub fn controls(&self) -> &[Vect<T>] {
        &self.controls
    }

    pub fn time(&self, k: usize) -> T {
        self.dt * T::from_usize_lossy(k)
    }

    pub fn final_state(&self) -> &Vect<T> {
        self.states.last().expect("trajectory has N + 1 >= 2 states")
    }
}

/// Outer-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T: Real> {
    /// Risk sensitivity; positive is risk-averse.
    pub sigma: T,
    pub max_iterations: usize,
    /// Relative cost change below which the solver stops.
    pub cost_tolerance: T,
    pub regularization_init: T,
    pub regularization_min: T,
    pub regularization_max: T,
    pub regularization_factor: T,
    /// Strictly descending, starting at 1.
    pub line_search_alphas: Vec<T>,
    /// Initial estimation-error covariance; `1e-2 I` when `None`.
    pub initial_error_cov: Option<Mat<T>>,
    pub rng_seed: u64,
    pub fd_epsilon: T,
    /// Use model-supplied derivatives when available.
    pub analytic_derivatives: bool,
    /// Floor for the eigenvalues of the quadratized state cost `Q`.
    pub state_hessian_floor: Option<T>,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            sigma: T::zero(),
            max_iterations: 100,
            cost_tolerance: T::lit(1e-6),
            regularization_init: T::lit(1e-6),
            regularization_min: T::lit(1e-9),
            regularization_max: T::lit(1e9),
            regularization_factor: T::lit(10.0),
            line_search_alphas: (0..=10).map(|i| T::lit(0.5f64.powi(i))).collect(),
            initial_error_cov: None,
            rng_seed: 0,
            fd_epsilon: T::lit(1e-5),
            analytic_derivatives: true,
            state_hessian_floor: None,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(T::zero() < self.regularization_min
            && self.regularization_min <= self.regularization_init
            && self.regularization_init <= self.regularization_max)
        {
            return bad("regularization must satisfy 0 < min <= init <= max");
        }
        if !(self.regularization_factor > T::one()) {
            return bad("regularization_factor must exceed 1");
        }
        match self.line_search_alphas.first() {
            Some(a) if *a == T::one() => {}
            _ => return bad("line_search_alphas must start at 1"),
        }
        if self.line_search_alphas.windows(2).any(|w| !(w[1] < w[0]) || !(w[1] > T::zero())) {
            return bad("line_search_alphas must be strictly descending in (0, 1]");
        }
        if !(self.fd_epsilon > T::zero()) {
            return bad("fd_epsilon must be positive");
        }
        if !self.sigma.is_finite() {
            return bad("sigma must be finite");
        }
        Ok(())
    }

    pub fn error_cov0(&self, n: usize) -> Mat<T> {
        self.initial_error_cov.clone().unwrap_or_else(|| Mat::identity(n, n) * T::lit(1e-2))
    }
}

fn probe<R>(f: impl FnOnce() -> R) -> Option<R> {
    catch_unwind(AssertUnwindSafe(f)).ok()
}

/// Checks dimensions, covariances and callback outputs at the trajectory's
/// first state. Returns the list of violations; empty means valid.
pub fn validate_problem<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    noise: &NoiseModel<T>,
    traj: &Trajectory<T>,
) -> Vec<String> {
    let mut out = Vec::new();
    let d = problem.dims();
    if d.state == 0 || d.control == 0 || d.measurement == 0 {
        out.push("dimensions must be positive".to_string());
    }
    if !(problem.horizon() > T::zero()) {
        out.push("horizon must be positive".to_string());
    }

    let (om, ga) = (noise.process_cov(), noise.measurement_cov());
    if om.shape() != (d.process_noise, d.process_noise) {
        out.push(format!("process_cov shape {:?}, expected {}x{}", om.shape(), d.process_noise, d.process_noise));
    } else if !all_finite(om) || !is_psd(om, T::lit(1e-12)) {
        out.push("process_cov not PSD".to_string());
    }
    if ga.shape() != (d.measurement_noise, d.measurement_noise) {
        out.push(format!(
            "measurement_cov shape {:?}, expected {}x{}",
            ga.shape(),
            d.measurement_noise,
            d.measurement_noise
        ));
    } else if !all_finite(ga) || !is_psd(ga, T::lit(1e-12)) {
        out.push("measurement_cov not PSD".to_string());
    }

    let x = &traj.states()[0];
    let u = &traj.controls()[0];
    if x.len() != d.state {
        out.push(format!("dimension mismatch: initial state has {} entries, expected {}", x.len(), d.state));
        return out;
    }
    if u.len() != d.control {
        out.push(format!("dimension mismatch: control has {} entries, expected {}", u.len(), d.control));
        return out;
    }
    let t = T::zero();

    match probe(|| problem.drift(x, u, t)) {
        None => out.push("drift panicked".into()),
        Some(v) if v.len() != d.state => {
            out.push(format!("dimension mismatch: drift returned {} entries, expected {}", v.len(), d.state))
        }
        Some(v) if !all_finite_vec(&v) => out.push("drift returned non-finite values".into()),
        _ => {}
    }
    match probe(|| problem.diffusion(x, u, t)) {
        None => out.push("diffusion panicked".into()),
        Some(m) if m.shape() != (d.state, d.process_noise) => out.push(format!(
            "dimension mismatch: diffusion is {:?}, expected {}x{}",
            m.shape(),
            d.state,
            d.process_noise
        )),
        Some(m) if !all_finite(&m) => out.push("diffusion returned non-finite values".into()),
        _ => {}
    }
    match probe(|| problem.measurement_drift(x, u, t)) {
        None => out.push("measurement_drift panicked".into()),
        Some(v) if v.len() != d.measurement => out.push(format!(
            "dimension mismatch: measurement_drift returned {} entries, expected {}",
            v.len(),
            d.measurement
        )),
        Some(v) if !all_finite_vec(&v) => out.push("measurement_drift returned non-finite values".into()),
        _ => {}
    }
    match probe(|| problem.measurement_diffusion(x, u, t)) {
        None => out.push("measurement_diffusion panicked".into()),
        Some(m) if m.shape() != (d.measurement, d.measurement_noise) => out.push(format!(
            "dimension mismatch: measurement_diffusion is {:?}, expected {}x{}",
            m.shape(),
            d.measurement,
            d.measurement_noise
        )),
        Some(m) if !all_finite(&m) => out.push("measurement_diffusion returned non-finite values".into()),
        _ => {}
    }
    match probe(|| problem.running_cost(x, u, t)) {
        None => out.push("running_cost panicked".into()),
        Some(c) if !c.is_finite() => out.push("running_cost returned a non-finite value".into()),
        _ => {}
    }
    match probe(|| problem.terminal_cost(x)) {
        None => out.push("terminal_cost panicked".into()),
        Some(c) if !c.is_finite() => out.push("terminal_cost returned a non-finite value".into()),
        _ => {}
    }
    out
}

/// One classical Runge–Kutta step of `ẋ = m(x, u, t)` with `u` held constant.
pub fn rk4_step<T: Real, P: Problem<T> + ?Sized>(problem: &P, x: &Vect<T>, u: &Vect<T>, t: T, dt: T) -> Vect<T> {
    let half = T::lit(0.5) * dt;
    let k1 = problem.drift(x, u, t);
    let k2 = problem.drift(&(x + &k1 * half), u, t + half);
    let k3 = problem.drift(&(x + &k2 * half), u, t + half);
    let k4 = problem.drift(&(x + &k3 * dt), u, t + dt);
    x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (dt / T::lit(6.0))
}

/// Integrates the noise-free dynamics under `controls` from `x0`.
pub fn zero_noise_rollout<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    controls: &[Vect<T>],
    x0: &Vect<T>,
    dt: T,
) -> Result<Trajectory<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    if controls.is_empty() {
        return Err(Error::InvalidInput("control sequence is empty".into()));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (k, u) in controls.iter().enumerate() {
        let t = dt * T::from_usize_lossy(k);
        let next = rk4_step(problem, &states[k], u, t, dt);
        if !all_finite_vec(&next) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        states.push(next);
    }
    Trajectory::new(dt, states, controls.to_vec())
}
