//! Soft-absolute-value cost terms for the two arm tasks.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use super::manipulator::{end_effector_state, EndEffectorState, ManipulatorParams};
use crate::Real;

/// `log cosh x`, stable for large `|x|`.
pub fn log_cosh<T: Real>(x: T) -> T {
    let a = x.abs();
    a + (-(a + a)).exp().ln_1p() - T::lit(std::f64::consts::LN_2)
}

/// Value, gradient and Hessian of `log cosh ‖d‖` with respect to `d`.
pub fn log_cosh_norm<T: Real>(d: &Vector4<T>) -> (T, Vector4<T>, Matrix4<T>) {
    let r = d.norm();
    // tanh(r)/r and (sech²r − tanh(r)/r)/r², both smooth at r = 0.
    let (f1, f2) = if r < T::lit(1e-4) {
        let r2 = r * r;
        (T::one() - r2 / T::lit(3.0), -T::lit(2.0 / 3.0) + T::lit(8.0 / 15.0) * r2)
    } else {
        let t = r.tanh();
        let sech2 = T::one() - t * t;
        (t / r, (sech2 - t / r) / (r * r))
    };
    let grad = d * f1;
    let hess = Matrix4::identity() * f1 + d * d.transpose() * f2;
    (log_cosh(r), grad, hess)
}

/// Point in end-effector position/velocity space to pass at a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viapoint<T: Real> {
    pub step: usize,
    /// `(p_x, p_y, v_x, v_y)`.
    pub target: Vector4<T>,
    pub weight: T,
}

/// Value, gradient and Hessian of a scalar function of the arm state.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion4<T: Real> {
    pub value: T,
    pub grad: Vector4<T>,
    pub hess: Matrix4<T>,
}

impl<T: Real> Expansion4<T> {
    pub fn zero() -> Self {
        Self { value: T::zero(), grad: Vector4::zeros(), hess: Matrix4::zeros() }
    }
}

/// `w · log cosh ‖e(x) − target‖` chained through the end-effector map.
pub fn end_effector_term<T: Real>(ee: &EndEffectorState<T>, target: &Vector4<T>, weight: T) -> Expansion4<T> {
    let (v, g, h) = log_cosh_norm(&(ee.value - target));
    let jt = ee.jacobian.transpose();
    let mut hess = jt * h * ee.jacobian;
    for i in 0..4 {
        hess += ee.hessians[i] * g[i];
    }
    Expansion4 { value: v * weight, grad: jt * g * weight, hess: hess * weight }
}

/// `c_u τᵀτ + Σ_i [k = k_i] c_i log cosh ‖e(x) − x_i‖`, with a terminal
/// `c_goal log cosh ‖e(x_N) − goal‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViapointCost<T: Real> {
    pub control_weight: T,
    pub viapoints: Vec<Viapoint<T>>,
    pub goal: Vector4<T>,
    pub goal_weight: T,
}

impl<T: Real> ViapointCost<T> {
    pub fn control_term(&self, tau: &Vector2<T>) -> (T, Vector2<T>, Matrix2<T>) {
        let c = self.control_weight;
        (c * tau.norm_squared(), tau * (c + c), Matrix2::identity() * (c + c))
    }

    /// State part of the rate at step `k`.
    pub fn state_term(&self, params: &ManipulatorParams<T>, x: &Vector4<T>, step: usize) -> Expansion4<T> {
        let mut out = Expansion4::zero();
        let active: Vec<_> = self.viapoints.iter().filter(|v| v.step == step).collect();
        if active.is_empty() {
            return out;
        }
        let ee = end_effector_state(params, x);
        for v in active {
            let t = end_effector_term(&ee, &v.target, v.weight);
            out.value += t.value;
            out.grad += t.grad;
            out.hess += t.hess;
        }
        out
    }

    pub fn terminal(&self, params: &ManipulatorParams<T>, x: &Vector4<T>) -> Expansion4<T> {
        end_effector_term(&end_effector_state(params, x), &self.goal, self.goal_weight)
    }
}

/// Running-cost rate of the viapoint task at step `k`.
pub fn viapoint_cost<T: Real>(
    cost: &ViapointCost<T>,
    params: &ManipulatorParams<T>,
    x: &Vector4<T>,
    tau: &Vector2<T>,
    step: usize,
) -> T {
    cost.control_term(tau).0 + cost.state_term(params, x, step).value
}

/// Weights and targets of the contact task.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactCost<T: Real> {
    pub control_weight: T,
    pub via: Viapoint<T>,
    /// Desired normal force, N.
    pub force_target: T,
    /// `[t_cnt0, t_cntf]`, seconds.
    pub window: (T, T),
    pub contact_weight: T,
    /// Optional terminal end-effector target and weight.
    pub goal: Option<(Vector4<T>, T)>,
}

impl<T: Real> ContactCost<T> {
    pub fn in_window(&self, t: T) -> bool {
        t >= self.window.0 && t <= self.window.1
    }
}

/// Contact-task rate. `distance` is the signed wall distance `x′` and
/// `force` the normal force magnitude.
#[allow(clippy::too_many_arguments)]
pub fn contact_cost<T: Real>(
    cost: &ContactCost<T>,
    params: &ManipulatorParams<T>,
    x: &Vector4<T>,
    distance: T,
    tau: &Vector2<T>,
    force: T,
    t: T,
    step: usize,
) -> T {
    let mut rate = cost.control_weight * tau.norm_squared();
    if step == cost.via.step {
        rate += end_effector_term(&end_effector_state(params, x), &cost.via.target, cost.via.weight).value;
    }
    if cost.in_window(t) {
        rate += cost.contact_weight * (log_cosh(distance) + log_cosh(force - cost.force_target));
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::fd;
    use crate::linalg::Vect;
    use proptest::prelude::*;

    #[test]
    fn log_cosh_values() {
        assert_eq!(log_cosh(0.0f64), 0.0);
        assert!((log_cosh(10.0f64) - 9.306_852_8).abs() < 1e-7);
        assert!((log_cosh(0.5f64) - 0.5f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(-800.0f64) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
    }

    fn cost() -> ViapointCost<f64> {
        ViapointCost {
            control_weight: 1.0,
            viapoints: vec![Viapoint { step: 5, target: Vector4::new(0.6, 0.4, 0.0, 0.0), weight: 1.0 }],
            goal: Vector4::zeros(),
            goal_weight: 1.0,
        }
    }

    #[test]
    fn viapoint_examples() {
        let params = ManipulatorParams::default();
        let x = Vector4::new(0.3, 0.9, 0.2, -0.1);
        let mut c = cost();
        c.viapoints[0].target = end_effector_state(&params, &x).value;
        assert!(viapoint_cost(&c, &params, &x, &Vector2::zeros(), 5).abs() < 1e-15);
        assert_eq!(viapoint_cost(&c, &params, &x, &Vector2::new(1.0, 2.0), 4), 5.0);
    }

    #[test]
    fn contact_examples() {
        let params = ManipulatorParams::default();
        let c = ContactCost {
            control_weight: 1.0,
            via: Viapoint { step: 10, target: Vector4::zeros(), weight: 1.0 },
            force_target: 5.0,
            window: (0.5, 1.0),
            contact_weight: 1.0,
            goal: None,
        };
        let x = Vector4::new(0.1, 0.2, 0.0, 0.0);
        assert_eq!(contact_cost(&c, &params, &x, 0.0, &Vector2::zeros(), 5.0, 0.7, 70), 0.0);
        assert_eq!(contact_cost(&c, &params, &x, 0.3, &Vector2::zeros(), 2.0, 0.2, 20), 0.0);
        let v: f64 = contact_cost(&c, &params, &x, 0.5, &Vector2::zeros(), 5.0, 0.7, 70);
        assert!((v - 0.120_114_507).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn log_cosh_norm_derivatives(d in proptest::collection::vec(-3.0f64..3.0, 4), tiny in proptest::bool::ANY) {
            let scale = if tiny { 1e-5 } else { 1.0 };
            let dv = Vector4::new(d[0], d[1], d[2], d[3]) * scale;
            let (val, g, h) = log_cosh_norm(&dv);
            let f = |z: &Vect<f64>| log_cosh(z.norm());
            let z = Vect::from_row_slice(dv.as_slice());
            prop_assert!((val - f(&z)).abs() < 1e-15);
            let ng = fd::gradient(f, &z, 1e-6);
            let nh = fd::hessian(f, &z, 1e-5);
            for i in 0..4 {
                prop_assert!((g[i] - ng[i]).abs() < 1e-6);
                for j in 0..4 { prop_assert!((h[(i, j)] - nh[(i, j)]).abs() < 1e-4, "{} vs {}", h[(i, j)], nh[(i, j)]); }
            }
        }

        #[test]
        fn end_effector_term_derivatives(x in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let params = ManipulatorParams::default();
            let target = Vector4::new(0.5, 0.3, 0.1, -0.2);
            let xs = Vector4::new(x[0], x[1], x[2], x[3]);
            let t = end_effector_term(&end_effector_state(&params, &xs), &target, 2.0);
            let f = |z: &Vect<f64>| end_effector_term(&end_effector_state(&params, &Vector4::new(z[0], z[1], z[2], z[3])), &target, 2.0).value;
            let z = Vect::from_row_slice(&x);
            let ng = fd::gradient(f, &z, 1e-6);
            let nh = fd::hessian(f, &z, 1e-5);
            for i in 0..4 {
                prop_assert!((t.grad[i] - ng[i]).abs() <= 1e-4 * (1.0 + ng[i].abs()));
                for j in 0..4 { prop_assert!((t.hess[(i, j)] - nh[(i, j)]).abs() <= 1e-4 * (1.0 + nh[(i, j)].abs())); }
            }
        }
    }
}
