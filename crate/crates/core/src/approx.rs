//! Discrete linearization of the dynamics and quadratization of the cost
//! along a nominal trajectory.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{first_non_finite, symmetrize, Mat, Vect};
use crate::problem::{CostDerivatives, Dims, Problem, SolverConfig, TerminalDerivatives, Trajectory};
use crate::Real;

/// Per-step discrete model
///
/// ```text
/// δx⁺ = A δx + B δu + C ω,   δy = F δx + E δu + D γ
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct StageDynamics<T: Real> {
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub c: Mat<T>,
    pub f: Mat<T>,
    pub e: Mat<T>,
    pub d: Mat<T>,
}

/// Quadratic model of the cost accumulated over one step:
/// `q0 + qxᵀδx + ruᵀδu + ½δxᵀQδx + δxᵀPδu + ½δuᵀRδu`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost<T: Real> {
    pub q0: T,
    pub qx: Vect<T>,
    pub ru: Vect<T>,
    /// `Q`, `n × n`.
    pub qxx: Mat<T>,
    /// `P`, `n × m`.
    pub pxu: Mat<T>,
    /// `R`, `m × m`.
    pub ruu: Mat<T>,
}

impl<T: Real> StageCost<T> {
    /// Symmetrizes `Q` and `R`.
    pub fn new(q0: T, qx: Vect<T>, ru: Vect<T>, qxx: Mat<T>, pxu: Mat<T>, ruu: Mat<T>) -> Self {
        Self {
            q0,
            qx,
            ru,
            qxx: symmetrize(&qxx),
            pxu,
            ruu: symmetrize(&ruu),
        }
    }

    /// Value of the quadratic model at a deviation.
    pub fn eval(&self, dx: &Vect<T>, du: &Vect<T>) -> T {
        let half = T::lit(0.5);
        self.q0
            + self.qx.dot(dx)
            + self.ru.dot(du)
            + half * dx.dot(&(&self.qxx * dx))
            + dx.dot(&(&self.pxu * du))
            + half * du.dot(&(&self.ruu * du))
    }
}

/// Quadratic model of the terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost<T: Real> {
    pub q0: T,
    pub qx: Vect<T>,
    pub qxx: Mat<T>,
}

impl<T: Real> TerminalCost<T> {
    pub fn new(q0: T, qx: Vect<T>, qxx: Mat<T>) -> Self {
        Self { q0, qx, qxx: symmetrize(&qxx) }
    }
}

/// Local model of a problem along one nominal trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan<T: Real> {
    pub dynamics: Vec<StageDynamics<T>>,
    pub costs: Vec<StageCost<T>>,
    pub terminal: TerminalCost<T>,
    pub dt: T,
    pub nominal: Trajectory<T>,
    /// Steps where `R + λ_min I` is not positive-definite.
    pub indefinite_r: Vec<usize>,
}

impl<T: Real> StagePlan<T> {
    /// Number of control steps `N`.
    pub fn len(&self) -> usize {
        self.dynamics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dynamics.is_empty()
    }

    /// Builds a plan directly from stage matrices, e.g. for linear test
    /// problems. Checks that the sequences agree with the nominal.
    pub fn from_parts(
        dynamics: Vec<StageDynamics<T>>,
        costs: Vec<StageCost<T>>,
        terminal: TerminalCost<T>,
        nominal: Trajectory<T>,
    ) -> Result<Self> {
        if dynamics.len() != nominal.len() || costs.len() != nominal.len() {
            return Err(Error::InvalidInput(format!(
                "plan has {} dynamics and {} costs for a nominal of {} steps",
                dynamics.len(),
                costs.len(),
                nominal.len()
            )));
        }
        Ok(Self {
            dynamics,
            costs,
            terminal,
            dt: nominal.dt(),
            nominal,
            indefinite_r: Vec::new(),
        })
    }
}

/// Forwards a problem but hides its analytic derivative hooks, so every
/// derivative is taken by finite differences.
#[derive(Debug, Clone)]
pub struct FiniteDifferences<P>(pub P);

impl<T: Real, P: Problem<T>> Problem<T> for FiniteDifferences<P> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn horizon(&self) -> T {
        self.0.horizon()
    }
    fn drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T> {
        self.0.drift(x, u, t)
    }
    fn diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T> {
        self.0.diffusion(x, u, t)
    }
    fn measurement_drift(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Vect<T> {
        self.0.measurement_drift(x, u, t)
    }
    fn measurement_diffusion(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Mat<T> {
        self.0.measurement_diffusion(x, u, t)
    }
    fn running_cost(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> T {
        self.0.running_cost(x, u, t)
    }
    fn terminal_cost(&self, x: &Vect<T>) -> T {
        self.0.terminal_cost(x)
    }
    fn contact_force(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<Vect<T>> {
        self.0.contact_force(x, u, t)
    }
}

/// Central finite-difference helpers. Steps are scaled by `max(1, |z_i|)`.
pub mod fd {
    use crate::linalg::{symmetrize, Mat, Vect};
    use crate::Real;

    fn step<T: Real>(eps: T, z: T) -> T {
        eps * z.abs().max(T::one())
    }

    /// Step used for second differences: `eps^(2/3)`, which balances
    /// truncation against cancellation.
    pub fn hessian_step<T: Real>(eps: T) -> T {
        eps.powf(T::lit(2.0 / 3.0))
    }

    /// Jacobian of a vector function, one column per input.
    pub fn jacobian<T: Real>(f: impl Fn(&Vect<T>) -> Vect<T>, z: &Vect<T>, eps: T) -> Mat<T> {
        let rows = f(z).len();
        let mut jac = Mat::zeros(rows, z.len());
        let mut zp = z.clone();
        for i in 0..z.len() {
            let h = step(eps, z[i]);
            zp[i] = z[i] + h;
            let up = f(&zp);
            zp[i] = z[i] - h;
            let down = f(&zp);
            zp[i] = z[i];
            jac.set_column(i, &((up - down) / (h + h)));
        }
        jac
    }

    pub fn gradient<T: Real>(f: impl Fn(&Vect<T>) -> T, z: &Vect<T>, eps: T) -> Vect<T> {
        let mut g = Vect::zeros(z.len());
        let mut zp = z.clone();
        for i in 0..z.len() {
            let h = step(eps, z[i]);
            zp[i] = z[i] + h;
            let up = f(&zp);
            zp[i] = z[i] - h;
            let down = f(&zp);
            zp[i] = z[i];
            g[i] = (up - down) / (h + h);
        }
        g
    }

    /// Hessian by central second differences, symmetrized.
    pub fn hessian<T: Real>(f: impl Fn(&Vect<T>) -> T, z: &Vect<T>, eps: T) -> Mat<T> {
        let n = z.len();
        let eps = hessian_step(eps);
        let hs: Vec<T> = z.iter().map(|&zi| step(eps, zi)).collect();
        let f0 = f(z);
        let mut out = Mat::zeros(n, n);
        let mut zp = z.clone();
        for i in 0..n {
            zp[i] = z[i] + hs[i];
            let up = f(&zp);
            zp[i] = z[i] - hs[i];
            let down = f(&zp);
            zp[i] = z[i];
            out[(i, i)] = (up - f0 - f0 + down) / (hs[i] * hs[i]);
            for j in 0..i {
                let mut corner = |si: T, sj: T| {
                    zp[i] = z[i] + si * hs[i];
                    zp[j] = z[j] + sj * hs[j];
                    let v = f(&zp);
                    zp[i] = z[i];
                    zp[j] = z[j];
                    v
                };
                let one = T::one();
                let mixed = corner(one, one) - corner(one, -one) - corner(-one, one) + corner(-one, -one);
                let v = mixed / (T::lit(4.0) * hs[i] * hs[j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        symmetrize(&out)
    }
}

fn check_mat<T: Real>(m: &Mat<T>, what: &'static str, step: usize) -> Result<()> {
    match first_non_finite(m) {
        Some((row, col)) => Err(Error::NonFiniteDerivative { what, step, row, col }),
        None => Ok(()),
    }
}

fn check_vec<T: Real>(v: &Vect<T>, what: &'static str, step: usize) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(row) => Err(Error::NonFiniteDerivative { what, step, row, col: 0 }),
        None => Ok(()),
    }
}

fn split_xu<T: Real>(z: &Vect<T>, n: usize) -> (Vect<T>, Vect<T>) {
    (z.rows(0, n).into_owned(), z.rows(n, z.len() - n).into_owned())
}

fn join_xu<T: Real>(x: &Vect<T>, u: &Vect<T>) -> Vect<T> {
    let mut z = Vect::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

fn linearize_at<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x: &Vect<T>,
    u: &Vect<T>,
    t: T,
    dt: T,
    eps: T,
    step: usize,
) -> Result<StageDynamics<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let n = x.len();
    let (jx, ju) = match problem.drift_jacobians(x, u, t) {
        Some(j) => j,
        None => (
            fd::jacobian(|xx| problem.drift(xx, u, t), x, eps),
            fd::jacobian(|uu| problem.drift(x, uu, t), u, eps),
        ),
    };
    let (nx, nu) = match problem.measurement_jacobians(x, u, t) {
        Some(j) => j,
        None => (
            fd::jacobian(|xx| problem.measurement_drift(xx, u, t), x, eps),
            fd::jacobian(|uu| problem.measurement_drift(x, uu, t), u, eps),
        ),
    };
    check_mat(&jx, "drift jacobian dm/dx", step)?;
    check_mat(&ju, "drift jacobian dm/du", step)?;
    check_mat(&nx, "measurement jacobian dn/dx", step)?;
    check_mat(&nu, "measurement jacobian dn/du", step)?;
    let sqrt_dt = dt.sqrt();
    let c = problem.diffusion(x, u, t) * sqrt_dt;
    let d = problem.measurement_diffusion(x, u, t) * sqrt_dt;
    check_mat(&c, "process diffusion", step)?;
    check_mat(&d, "measurement diffusion", step)?;
    Ok(StageDynamics {
        a: Mat::identity(n, n) + jx * dt,
        b: ju * dt,
        c,
        f: nx * dt,
        e: nu * dt,
        d,
    })
}

/// Discrete linearization at `(x_n, u_n, t)`:
/// `A = I + Δt ∂m/∂x`, `B = Δt ∂m/∂u`, `C = √Δt M`, `F = Δt ∂n/∂x`,
/// `E = Δt ∂n/∂u`, `D = √Δt N`.
pub fn linearize_stage<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x_n: &Vect<T>,
    u_n: &Vect<T>,
    t: T,
    dt: T,
    fd_epsilon: T,
) -> Result<StageDynamics<T>> {
    linearize_at(problem, x_n, u_n, t, dt, fd_epsilon, 0)
}

fn running_derivatives<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x: &Vect<T>,
    u: &Vect<T>,
    t: T,
    eps: T,
) -> CostDerivatives<T> {
    if let Some(d) = problem.running_cost_derivatives(x, u, t) {
        return d;
    }
    let n = x.len();
    let z = join_xu(x, u);
    let cost = |zz: &Vect<T>| {
        let (xx, uu) = split_xu(zz, n);
        problem.running_cost(&xx, &uu, t)
    };
    let g = fd::gradient(cost, &z, eps);
    let h = fd::hessian(cost, &z, eps);
    let m = u.len();
    CostDerivatives {
        value: problem.running_cost(x, u, t),
        dx: g.rows(0, n).into_owned(),
        du: g.rows(n, m).into_owned(),
        dxx: h.view((0, 0), (n, n)).into_owned(),
        dxu: h.view((0, n), (n, m)).into_owned(),
        duu: h.view((n, n), (m, m)).into_owned(),
    }
}

fn floor_eigenvalues<T: Real>(m: &Mat<T>, floor: T) -> Mat<T> {
    let eig = symmetrize(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

#[allow(clippy::too_many_arguments)]
fn quadratize_at<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x: &Vect<T>,
    u: &Vect<T>,
    t: T,
    dt: T,
    eps: T,
    q_floor: Option<T>,
    step: usize,
) -> Result<StageCost<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let d = running_derivatives(problem, x, u, t, eps);
    if !d.value.is_finite() {
        return Err(Error::NonFiniteCost { step });
    }
    check_vec(&d.dx, "cost gradient dL/dx", step)?;
    check_vec(&d.du, "cost gradient dL/du", step)?;
    check_mat(&d.dxx, "cost hessian d2L/dx2", step)?;
    check_mat(&d.dxu, "cost hessian d2L/dxdu", step)?;
    check_mat(&d.duu, "cost hessian d2L/du2", step)?;
    let mut qxx = symmetrize(&(d.dxx * dt));
    if let Some(floor) = q_floor {
        qxx = floor_eigenvalues(&qxx, floor);
    }
    Ok(StageCost::new(d.value * dt, d.dx * dt, d.du * dt, qxx, d.dxu * dt, d.duu * dt))
}

/// Quadratic model of `L(x, u, t)·Δt` around `(x_n, u_n)`.
pub fn quadratize_stage<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x_n: &Vect<T>,
    u_n: &Vect<T>,
    t: T,
    dt: T,
    fd_epsilon: T,
) -> Result<StageCost<T>> {
    quadratize_at(problem, x_n, u_n, t, dt, fd_epsilon, None, 0)
}

/// Quadratic model of the terminal cost around `x_n`.
pub fn quadratize_terminal<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x_n: &Vect<T>,
    fd_epsilon: T,
    step: usize,
) -> Result<TerminalCost<T>> {
    let d = match problem.terminal_cost_derivatives(x_n) {
        Some(d) => d,
        None => TerminalDerivatives {
            value: problem.terminal_cost(x_n),
            dx: fd::gradient(|x| problem.terminal_cost(x), x_n, fd_epsilon),
            dxx: fd::hessian(|x| problem.terminal_cost(x), x_n, fd_epsilon),
        },
    };
    if !d.value.is_finite() {
        return Err(Error::NonFiniteCost { step });
    }
    check_vec(&d.dx, "terminal gradient", step)?;
    check_mat(&d.dxx, "terminal hessian", step)?;
    Ok(TerminalCost::new(d.value, d.dx, d.dxx))
}

/// Linearizes and quadratizes every step of `nominal`.
pub fn build_plan<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    nominal: &Trajectory<T>,
    config: &SolverConfig<T>,
) -> Result<StagePlan<T>> {
    if config.analytic_derivatives {
        build_plan_with(problem, nominal, config)
    } else {
        build_plan_with(&FiniteDifferences(problem), nominal, config)
    }
}

fn build_plan_with<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    nominal: &Trajectory<T>,
    config: &SolverConfig<T>,
) -> Result<StagePlan<T>> {
    let dims = problem.dims();
    if nominal.states()[0].len() != dims.state || nominal.controls()[0].len() != dims.control {
        return Err(Error::InvalidInput("nominal trajectory does not match problem dimensions".into()));
    }
    let dt = nominal.dt();
    let eps = config.fd_epsilon;
    let stages: Vec<(StageDynamics<T>, StageCost<T>)> = (0..nominal.len())
        .into_par_iter()
        .map(|k| {
            let (x, u, t) = (&nominal.states()[k], &nominal.controls()[k], nominal.time(k));
            let dynamics = linearize_at(problem, x, u, t, dt, eps, k)?;
            let cost = quadratize_at(problem, x, u, t, dt, eps, config.state_hessian_floor, k)?;
            Ok((dynamics, cost))
        })
        .collect::<Result<_>>()?;
    let terminal = quadratize_terminal(problem, nominal.final_state(), eps, nominal.len())?;

    let lambda = config.regularization_min;
    let indefinite_r: Vec<usize> = stages
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| {
            let m = c.ruu.nrows();
            (&c.ruu + Mat::identity(m, m) * lambda).cholesky().is_none()
        })
        .map(|(k, _)| k)
        .collect();
    if !indefinite_r.is_empty() {
        log::warn!("R + λ_min I not positive-definite at {} steps (first {})", indefinite_r.len(), indefinite_r[0]);
    }

    let (dynamics, costs) = stages.into_iter().unzip();
    Ok(StagePlan {
        dynamics,
        costs,
        terminal,
        dt,
        nominal: nominal.clone(),
        indefinite_r,
    })
}
