//! Two-link arm pressing on a planar wall.
//!
//! The wall distance is carried as a fifth state `x′` with `ẋ′ = nᵀJ(q)q̇`,
//! so a wall that sits closer than the model believes is represented by a
//! shifted initial `x′` rather than different dynamics.

use nalgebra::{Matrix4, RowVector4, Vector2, Vector4};

use super::costs::{end_effector_term, log_cosh, ContactCost, Expansion4};
use super::manipulator::{
    acceleration_jacobians, end_effector_kinematics, end_effector_state, manipulator_dynamics, EndEffectorState,
    ManipulatorParams,
};
use super::viapoint::{arm_jacobians, vec2};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vect};
use crate::problem::{CostDerivatives, Dims, Problem, TerminalDerivatives};
use crate::Real;

/// Spring-damper wall `{p : nᵀp = offset}`; the free side has `nᵀp > offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallContact<T: Real> {
    /// Unit normal pointing into the free side.
    pub normal: Vector2<T>,
    pub offset: T,
    pub stiffness: T,
    pub damping: T,
    /// How much closer the true wall is than the nominal one, metres.
    pub shift: T,
}

impl<T: Real> WallContact<T> {
    pub fn new(normal: Vector2<T>, offset: T) -> Self {
        Self { normal, offset, stiffness: T::lit(1e4), damping: T::lit(10.0), shift: T::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.normal.norm() - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidInput("wall normal must be a unit vector".into()));
        }
        if !(self.stiffness >= T::zero() && self.damping >= T::zero()) {
            return Err(Error::InvalidInput("wall stiffness and damping must be non-negative".into()));
        }
        Ok(())
    }

    /// Signed distance `Φ(q)` from the nominal wall.
    pub fn distance(&self, params: &ManipulatorParams<T>, q: &Vector2<T>) -> T {
        let (p, _) = end_effector_kinematics(params, q);
        self.normal.dot(&p) - self.offset
    }

    /// Rate of change of the distance, `nᵀJ(q)q̇`.
    pub fn distance_rate(&self, params: &ManipulatorParams<T>, q: &Vector2<T>, qd: &Vector2<T>) -> T {
        let (_, jac) = end_effector_kinematics(params, q);
        self.normal.dot(&(jac * qd))
    }

    /// Normal force magnitude for a signed distance and its rate.
    pub fn force_magnitude(&self, distance: T, rate: T) -> T {
        if distance >= T::zero() {
            return T::zero();
        }
        (-self.stiffness * distance - self.damping * rate).max(T::zero())
    }

    /// Contact force on the end effector with the true (shifted) wall.
    pub fn force(&self, params: &ManipulatorParams<T>, q: &Vector2<T>, qd: &Vector2<T>) -> Vector2<T> {
        let d = self.distance(params, q) - self.shift;
        self.normal * self.force_magnitude(d, self.distance_rate(params, q, qd))
    }
}

/// State `(q1, q2, q̇1, q̇2, x′)`, control `τ`, full-state measurement.
#[derive(Debug, Clone)]
pub struct ContactProblem<T: Real> {
    pub params: ManipulatorParams<T>,
    pub wall: WallContact<T>,
    pub cost: ContactCost<T>,
    pub horizon: T,
    pub steps: usize,
    /// `5 × w`.
    pub process_input: Mat<T>,
    /// `5 × v`.
    pub measurement_input: Mat<T>,
}

impl<T: Real> ContactProblem<T> {
    /// Process noise on the joint accelerations, measurement noise on every state.
    pub fn new(params: ManipulatorParams<T>, wall: WallContact<T>, cost: ContactCost<T>, horizon: T, steps: usize) -> Self {
        let mut process_input = Mat::zeros(5, 2);
        process_input[(2, 0)] = T::one();
        process_input[(3, 1)] = T::one();
        Self { params, wall, cost, horizon, steps, process_input, measurement_input: Mat::identity(5, 5) }
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.steps)
    }

    pub fn step_index(&self, t: T) -> usize {
        (t / self.dt()).as_f64().round().max(0.0) as usize
    }

    /// Augmented state for joint positions and velocities, using the
    /// wall's shift.
    pub fn initial_state(&self, q: &Vector2<T>, qd: &Vector2<T>) -> Vect<T> {
        let d = self.wall.distance(&self.params, q) - self.wall.shift;
        Vect::from_column_slice(&[q[0], q[1], qd[0], qd[1], d])
    }

    fn split(x: &Vect<T>) -> (Vector2<T>, Vector2<T>, T) {
        (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]), x[4])
    }

    fn arm(x: &Vect<T>) -> Vector4<T> {
        Vector4::new(x[0], x[1], x[2], x[3])
    }

    /// `nᵀ(∂e_vel/∂x)` and `Σ n_i ∂²e_vel,i/∂x²`, the derivatives of the
    /// distance rate.
    fn rate_derivatives(&self, ee: &EndEffectorState<T>) -> (RowVector4<T>, Matrix4<T>) {
        let n = self.wall.normal;
        let g = ee.jacobian.row(2) * n[0] + ee.jacobian.row(3) * n[1];
        let h = ee.hessians[2] * n[0] + ee.hessians[3] * n[1];
        (g, h)
    }

    /// Force magnitude and whether the spring-damper is engaged.
    fn force_state(&self, x: &Vect<T>) -> (T, bool) {
        let (q, qd, d) = Self::split(x);
        let f = self.wall.force_magnitude(d, self.wall.distance_rate(&self.params, &q, &qd));
        (f, f > T::zero())
    }

    fn window_expansion(&self, x: &Vect<T>, ee: &EndEffectorState<T>) -> (T, Vect<T>, Mat<T>) {
        let w = self.cost.contact_weight;
        let d = x[4];
        let mut grad = Vect::zeros(5);
        let mut hess = Mat::zeros(5, 5);
        let td = d.tanh();
        grad[4] = td * w;
        hess[(4, 4)] = (T::one() - td * td) * w;

        let (f, engaged) = self.force_state(x);
        let r = f - self.cost.force_target;
        let value = w * (log_cosh(d) + log_cosh(r));
        if engaged {
            let (g, h) = self.rate_derivatives(ee);
            let b = self.wall.damping;
            let mut df = Vect::zeros(5);
            for i in 0..4 {
                df[i] = -b * g[i];
            }
            df[4] = -self.wall.stiffness;
            let tr = r.tanh();
            let sech2 = T::one() - tr * tr;
            grad += &df * (tr * w);
            hess += &df * df.transpose() * (sech2 * w);
            let mut arm = hess.view_mut((0, 0), (4, 4));
            arm += h * (-b * tr * w);
        }
        (value, grad, hess)
    }
}

impl<T: Real> Problem<T> for ContactProblem<T> {
    fn dims(&self) -> Dims {
        Dims {
            state: 5,
            control: 2,
            measurement: 5,
            process_noise: self.process_input.ncols(),
            measurement_noise: self.measurement_input.ncols(),
        }
    }

    fn horizon(&self) -> T {
        self.horizon
    }

    fn drift(&self, x: &Vect<T>, u: &Vect<T>, _t: T) -> Vect<T> {
        let (q, qd, _) = Self::split(x);
        let (f, _) = self.force_state(x);
        let force = self.wall.normal * f;
        let rate = self.wall.distance_rate(&self.params, &q, &qd);
        match manipulator_dynamics(&self.params, &q, &qd, &vec2(u), Some(&force)) {
            Ok(qdd) => Vect::from_column_slice(&[qd[0], qd[1], qdd[0], qdd[1], rate]),
            Err(_) => Vect::from_element(5, T::lit(f64::NAN)),
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
        let (f, _) = self.force_state(x);
        super::costs::contact_cost(&self.cost, &self.params, &Self::arm(x), x[4], &vec2(u), f, t, self.step_index(t))
    }

    fn terminal_cost(&self, x: &Vect<T>) -> T {
        match &self.cost.goal {
            Some((goal, w)) => end_effector_term(&end_effector_state(&self.params, &Self::arm(x)), goal, *w).value,
            None => T::zero(),
        }
    }

    fn drift_jacobians(&self, x: &Vect<T>, u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        let (q, qd, _) = Self::split(x);
        let (f, engaged) = self.force_state(x);
        let force = self.wall.normal * f;
        let j = acceleration_jacobians(&self.params, &q, &qd, &vec2(u), Some(&force)).ok()?;
        let (a4, b4) = arm_jacobians(&j);
        let ee = end_effector_state(&self.params, &Self::arm(x));
        let (g, _) = self.rate_derivatives(&ee);

        let mut a = Mat::zeros(5, 5);
        a.view_mut((0, 0), (4, 4)).copy_from(&a4);
        for i in 0..4 {
            a[(4, i)] = g[i];
        }
        if engaged {
            let (_, jac) = end_effector_kinematics(&self.params, &q);
            let dir = j.h_inv * jac.transpose() * self.wall.normal;
            let mut df = Vect::zeros(5);
            for i in 0..4 {
                df[i] = -self.wall.damping * g[i];
            }
            df[4] = -self.wall.stiffness;
            for r in 0..2 {
                for c in 0..5 {
                    a[(2 + r, c)] += dir[r] * df[c];
                }
            }
        }
        let mut b = Mat::zeros(5, 2);
        b.view_mut((0, 0), (4, 2)).copy_from(&b4);
        Some((a, b))
    }

    fn measurement_jacobians(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        Some((Mat::identity(5, 5), Mat::zeros(5, 2)))
    }

    fn running_cost_derivatives(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<CostDerivatives<T>> {
        let tau = vec2(u);
        let c = self.cost.control_weight;
        let mut value = c * tau.norm_squared();
        let mut dx = Vect::zeros(5);
        let mut dxx = Mat::zeros(5, 5);
        let ee = end_effector_state(&self.params, &Self::arm(x));
        if self.step_index(t) == self.cost.via.step {
            let e: Expansion4<T> = end_effector_term(&ee, &self.cost.via.target, self.cost.via.weight);
            value += e.value;
            dx.rows_mut(0, 4).copy_from(&e.grad);
            dxx.view_mut((0, 0), (4, 4)).copy_from(&e.hess);
        }
        if self.cost.in_window(t) {
            let (v, g, h) = self.window_expansion(x, &ee);
            value += v;
            dx += g;
            dxx += h;
        }
        Some(CostDerivatives {
            value,
            dx,
            du: Vect::from_column_slice((tau * (c + c)).as_slice()),
            dxx,
            dxu: Mat::zeros(5, 2),
            duu: Mat::identity(2, 2) * (c + c),
        })
    }

    fn terminal_cost_derivatives(&self, x: &Vect<T>) -> Option<TerminalDerivatives<T>> {
        let mut dx = Vect::zeros(5);
        let mut dxx = Mat::zeros(5, 5);
        let mut value = T::zero();
        if let Some((goal, w)) = &self.cost.goal {
            let e = end_effector_term(&end_effector_state(&self.params, &Self::arm(x)), goal, *w);
            value = e.value;
            dx.rows_mut(0, 4).copy_from(&e.grad);
            dxx.view_mut((0, 0), (4, 4)).copy_from(&e.hess);
        }
        Some(TerminalDerivatives { value, dx, dxx })
    }

    fn contact_force(&self, x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<Vect<T>> {
        let (f, _) = self.force_state(x);
        Some(Vect::from_column_slice((self.wall.normal * f).as_slice()))
    }
}
