//! Two-link arm driven through end-effector viapoints.

use nalgebra::{Vector2, Vector4};

use super::costs::ViapointCost;
use super::manipulator::{acceleration_jacobians, manipulator_dynamics, ManipulatorParams};
use crate::linalg::{Mat, Vect};
use crate::problem::{CostDerivatives, Dims, Problem, TerminalDerivatives};
use crate::Real;

/// State `(q1, q2, q̇1, q̇2)`, control `τ`, full-state measurement.
#[derive(Debug, Clone)]
pub struct ViapointProblem<T: Real> {
    pub params: ManipulatorParams<T>,
    pub cost: ViapointCost<T>,
    pub horizon: T,
    /// Number of discretization steps; viapoint steps index into this grid.
    pub steps: usize,
    /// Process-noise input matrix `M`, `4 × w`.
    pub process_input: Mat<T>,
    /// Measurement-noise input matrix `N`, `4 × v`.
    pub measurement_input: Mat<T>,
}

impl<T: Real> ViapointProblem<T> {
    /// Noise enters every state; the measurement is the state plus noise.
    pub fn new(params: ManipulatorParams<T>, cost: ViapointCost<T>, horizon: T, steps: usize) -> Self {
        Self {
            params,
            cost,
            horizon,
            steps,
            process_input: Mat::identity(4, 4),
            measurement_input: Mat::identity(4, 4),
        }
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.steps)
    }

    pub fn step_index(&self, t: T) -> usize {
        (t / self.dt()).as_f64().round().max(0.0) as usize
    }
}

pub(crate) fn split4<T: Real>(x: &Vect<T>) -> (Vector2<T>, Vector2<T>) {
    (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]))
}

pub(crate) fn vec2<T: Real>(u: &Vect<T>) -> Vector2<T> {
    Vector2::new(u[0], u[1])
}

fn nan_vec<T: Real>(n: usize) -> Vect<T> {
    Vect::from_element(n, T::lit(f64::NAN))
}

impl<T: Real> Problem<T> for ViapointProblem<T> {
    fn dims(&self) -> Dims {
        Dims {
            state: 4,
            control: 2,
            measurement: 4,
            process_noise: self.process_input.ncols(),
            measurement_noise: self.measurement_input.ncols(),
        }
    }

    fn horizon(&self) -> T {
        self.horizon
    }

    fn drift(&self, x: &Vect<T>, u: &Vect<T>, _t: T) -> Vect<T> {
        let (q, qd) = split4(x);
        match manipulator_dynamics(&self.params, &q, &qd, &vec2(u), None) {
            Ok(qdd) => Vect::from_column_slice(&[qd[0], qd[1], qdd[0], qdd[1]]),
            Err(_) => nan_vec(4),
        }
    }

    fn diffusion(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Mat<T> {
        self.process_input.clone()
    }

    fn measurement_drift(&self, x: &Vect<T>, _u: &Vect<T>, _t: T) -> Vect<T> {
        x.clone()
    }

    fn measurement_diffusion(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Mat<T> {
        self.measurement_input.clone()
    }

    fn running_cost(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> T {
        let xs = Vector4::new(x[0], x[1], x[2], x[3]);
        super::costs::viapoint_cost(&self.cost, &self.params, &xs, &vec2(u), self.step_index(t))
    }

    fn terminal_cost(&self, x: &Vect<T>) -> T {
        self.cost.terminal(&self.params, &Vector4::new(x[0], x[1], x[2], x[3])).value
    }

    fn drift_jacobians(&self, x: &Vect<T>, u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        let (q, qd) = split4(x);
        let j = acceleration_jacobians(&self.params, &q, &qd, &vec2(u), None).ok()?;
        Some(arm_jacobians(&j))
    }

    fn measurement_jacobians(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        Some((Mat::identity(4, 4), Mat::zeros(4, 2)))
    }

    fn running_cost_derivatives(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<CostDerivatives<T>> {
        let xs = Vector4::new(x[0], x[1], x[2], x[3]);
        let (cu, gu, hu) = self.cost.control_term(&vec2(u));
        let s = self.cost.state_term(&self.params, &xs, self.step_index(t));
        Some(CostDerivatives {
            value: cu + s.value,
            dx: Vect::from_column_slice(s.grad.as_slice()),
            du: Vect::from_column_slice(gu.as_slice()),
            dxx: Mat::from_column_slice(4, 4, s.hess.as_slice()),
            dxu: Mat::zeros(4, 2),
            duu: Mat::from_column_slice(2, 2, hu.as_slice()),
        })
    }

    fn terminal_cost_derivatives(&self, x: &Vect<T>) -> Option<TerminalDerivatives<T>> {
        let e = self.cost.terminal(&self.params, &Vector4::new(x[0], x[1], x[2], x[3]));
        Some(TerminalDerivatives {
            value: e.value,
            dx: Vect::from_column_slice(e.grad.as_slice()),
            dxx: Mat::from_column_slice(4, 4, e.hess.as_slice()),
        })
    }
}

/// `(∂f/∂x, ∂f/∂u)` of `f = (q̇, q̈)` from acceleration Jacobians.
pub(crate) fn arm_jacobians<T: Real>(j: &super::manipulator::AccelerationJacobians<T>) -> (Mat<T>, Mat<T>) {
    let mut a = Mat::zeros(4, 4);
    a[(0, 2)] = T::one();
    a[(1, 3)] = T::one();
    a.view_mut((2, 0), (2, 2)).copy_from(&j.d_q);
    a.view_mut((2, 2), (2, 2)).copy_from(&j.d_qd);
    let mut b = Mat::zeros(4, 2);
    b.view_mut((2, 0), (2, 2)).copy_from(&j.d_tau);
    (a, b)
}
