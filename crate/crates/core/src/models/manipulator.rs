//! Two-link planar arm with point masses at the link ends.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulatorParams<T: Real> {
    pub l1: T,
    pub l2: T,
    pub m1: T,
    pub m2: T,
    /// Viscous joint damping, N·m·s/rad.
    pub d1: T,
    pub d2: T,
    /// Gravity along −y of the arm plane; off for a horizontal arm.
    pub gravity: bool,
    pub g: T,
}

impl<T: Real> Default for ManipulatorParams<T> {
    fn default() -> Self {
        Self {
            l1: T::lit(0.5),
            l2: T::lit(0.5),
            m1: T::one(),
            m2: T::one(),
            d1: T::lit(0.1),
            d2: T::lit(0.1),
            gravity: false,
            g: T::lit(9.81),
        }
    }
}

impl<T: Real> ManipulatorParams<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.l1, self.l2, self.m1, self.m2];
        if pos.iter().any(|v| !(*v > T::zero())) {
            return Err(Error::InvalidInput("link lengths and masses must be positive".into()));
        }
        if !(self.d1 >= T::zero() && self.d2 >= T::zero()) {
            return Err(Error::InvalidInput("joint damping must be non-negative".into()));
        }
        Ok(())
    }

    /// Joint-space inertia `H(q)`.
    pub fn mass_matrix(&self, q: &Vector2<T>) -> Matrix2<T> {
        let c2 = q[1].cos();
        let (l1, l2, m1, m2) = (self.l1, self.l2, self.m1, self.m2);
        let h11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + T::lit(2.0) * l1 * l2 * c2);
        let h12 = m2 * (l2 * l2 + l1 * l2 * c2);
        let h22 = m2 * l2 * l2;
        Matrix2::new(h11, h12, h12, h22)
    }

    /// Coriolis and centrifugal vector `C(q, q̇)`.
    pub fn coriolis(&self, q: &Vector2<T>, qd: &Vector2<T>) -> Vector2<T> {
        let h = self.m2 * self.l1 * self.l2 * q[1].sin();
        Vector2::new(
            -h * (T::lit(2.0) * qd[0] * qd[1] + qd[1] * qd[1]),
            h * qd[0] * qd[0],
        )
    }

    pub fn gravity_torque(&self, q: &Vector2<T>) -> Vector2<T> {
        if !self.gravity {
            return Vector2::zeros();
        }
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let g = self.g;
        Vector2::new(
            (self.m1 + self.m2) * g * self.l1 * c1 + self.m2 * g * self.l2 * c12,
            self.m2 * g * self.l2 * c12,
        )
    }

    pub fn kinetic_energy(&self, q: &Vector2<T>, qd: &Vector2<T>) -> T {
        T::lit(0.5) * qd.dot(&(self.mass_matrix(q) * qd))
    }
}

/// End-effector position and Jacobian.
pub fn end_effector_kinematics<T: Real>(params: &ManipulatorParams<T>, q: &Vector2<T>) -> (Vector2<T>, Matrix2<T>) {
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    let (l1, l2) = (params.l1, params.l2);
    let pos = Vector2::new(l1 * c1 + l2 * c12, l1 * s1 + l2 * s12);
    let jac = Matrix2::new(-l1 * s1 - l2 * s12, -l2 * s12, l1 * c1 + l2 * c12, l2 * c12);
    (pos, jac)
}

/// `∂J/∂q1` and `∂J/∂q2`.
pub fn jacobian_derivatives<T: Real>(params: &ManipulatorParams<T>, q: &Vector2<T>) -> [Matrix2<T>; 2] {
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    let (l1, l2) = (params.l1, params.l2);
    [
        Matrix2::new(-l1 * c1 - l2 * c12, -l2 * c12, -l1 * s1 - l2 * s12, -l2 * s12),
        Matrix2::new(-l2 * c12, -l2 * c12, -l2 * s12, -l2 * s12),
    ]
}

/// End-effector position and velocity `e = [p(q); J(q) q̇]` as a function of
/// the arm state `x = (q, q̇)`, with first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EndEffectorState<T: Real> {
    pub value: Vector4<T>,
    /// Row `i` is `∂e_i/∂x`.
    pub jacobian: Matrix4<T>,
    /// `hessians[i] = ∂²e_i/∂x²`.
    pub hessians: [Matrix4<T>; 4],
}

pub fn end_effector_state<T: Real>(params: &ManipulatorParams<T>, x: &Vector4<T>) -> EndEffectorState<T> {
    let (a, b) = (params.l1, params.l2);
    let (s1, c1) = x[0].sin_cos();
    let (s12, c12) = (x[0] + x[1]).sin_cos();
    let (qd1, w) = (x[2], x[2] + x[3]);
    let z = T::zero();

    let value = Vector4::new(
        a * c1 + b * c12,
        a * s1 + b * s12,
        -a * s1 * qd1 - b * s12 * w,
        a * c1 * qd1 + b * c12 * w,
    );
    #[rustfmt::skip]
    let jacobian = Matrix4::new(
        -a * s1 - b * s12,            -b * s12,     z,                 z,
        a * c1 + b * c12,             b * c12,      z,                 z,
        -a * c1 * qd1 - b * c12 * w,  -b * c12 * w, -a * s1 - b * s12, -b * s12,
        -a * s1 * qd1 - b * s12 * w,  -b * s12 * w, a * c1 + b * c12,  b * c12,
    );
    let sym = |qq11: T, qq12: T, qq22: T, qv11: T, qv12: T, qv21: T, qv22: T| {
        #[rustfmt::skip]
        let m = Matrix4::new(
            qq11, qq12, qv11, qv12,
            qq12, qq22, qv21, qv22,
            qv11, qv21, z,    z,
            qv12, qv22, z,    z,
        );
        m
    };
    let hessians = [
        sym(-a * c1 - b * c12, -b * c12, -b * c12, z, z, z, z),
        sym(-a * s1 - b * s12, -b * s12, -b * s12, z, z, z, z),
        sym(
            a * s1 * qd1 + b * s12 * w,
            b * s12 * w,
            b * s12 * w,
            -a * c1 - b * c12,
            -b * c12,
            -b * c12,
            -b * c12,
        ),
        sym(
            -a * c1 * qd1 - b * c12 * w,
            -b * c12 * w,
            -b * c12 * w,
            -a * s1 - b * s12,
            -b * s12,
            -b * s12,
            -b * s12,
        ),
    ];
    EndEffectorState { value, jacobian, hessians }
}

/// Joint accelerations and their derivatives at a fixed external
/// end-effector force.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelerationJacobians<T: Real> {
    pub qdd: Vector2<T>,
    pub d_q: Matrix2<T>,
    pub d_qd: Matrix2<T>,
    pub d_tau: Matrix2<T>,
    /// `H(q)⁻¹`, for chaining derivatives of a state-dependent force.
    pub h_inv: Matrix2<T>,
}

/// `q̈ = H(q)⁻¹ (τ + J(q)ᵀ λ − C(q, q̇) − D q̇ − G(q))`.
pub fn manipulator_dynamics<T: Real>(
    params: &ManipulatorParams<T>,
    q: &Vector2<T>,
    qd: &Vector2<T>,
    tau: &Vector2<T>,
    force: Option<&Vector2<T>>,
) -> Result<Vector2<T>> {
    let h = params.mass_matrix(q);
    let rhs = generalized_force(params, q, qd, tau, force);
    h.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::InvalidInput("mass matrix not positive-definite".into()))
}

fn generalized_force<T: Real>(
    params: &ManipulatorParams<T>,
    q: &Vector2<T>,
    qd: &Vector2<T>,
    tau: &Vector2<T>,
    force: Option<&Vector2<T>>,
) -> Vector2<T> {
    let damping = Vector2::new(params.d1 * qd[0], params.d2 * qd[1]);
    let mut rhs = tau - params.coriolis(q, qd) - damping - params.gravity_torque(q);
    if let Some(f) = force {
        let (_, jac) = end_effector_kinematics(params, q);
        rhs += jac.transpose() * f;
    }
    rhs
}

/// Derivatives of [`manipulator_dynamics`] holding the external force fixed.
pub fn acceleration_jacobians<T: Real>(
    params: &ManipulatorParams<T>,
    q: &Vector2<T>,
    qd: &Vector2<T>,
    tau: &Vector2<T>,
    force: Option<&Vector2<T>>,
) -> Result<AccelerationJacobians<T>> {
    let h = params.mass_matrix(q);
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("mass matrix singular".into()))?;
    let qdd = h_inv * generalized_force(params, q, qd, tau, force);

    let (l1, l2, m2) = (params.l1, params.l2, params.m2);
    let (s2, c2) = q[1].sin_cos();
    let two = T::lit(2.0);
    let k = m2 * l1 * l2;

    // ∂r/∂q where r is the generalized force, then subtract ∂H/∂q q̈.
    let mut dr_dq = Matrix2::zeros();
    let dc_dq2 = Vector2::new(-k * c2 * (two * qd[0] * qd[1] + qd[1] * qd[1]), k * c2 * qd[0] * qd[0]);
    dr_dq.set_column(1, &(-dc_dq2));
    if params.gravity {
        let (s1, s12) = (q[0].sin(), (q[0] + q[1]).sin());
        let g = params.g;
        let dg_dq1 = Vector2::new(-(params.m1 + m2) * g * l1 * s1 - m2 * g * l2 * s12, -m2 * g * l2 * s12);
        let dg_dq2 = Vector2::new(-m2 * g * l2 * s12, -m2 * g * l2 * s12);
        dr_dq.set_column(0, &(dr_dq.column(0) - dg_dq1));
        dr_dq.set_column(1, &(dr_dq.column(1) - dg_dq2));
    }
    if let Some(f) = force {
        let dj = jacobian_derivatives(params, q);
        for (i, dji) in dj.iter().enumerate() {
            let col = dr_dq.column(i) + dji.transpose() * f;
            dr_dq.set_column(i, &col);
        }
    }
    let dh_dq2 = Matrix2::new(-two * k * s2, -k * s2, -k * s2, T::zero());
    let mut d_q = dr_dq;
    d_q.set_column(1, &(d_q.column(1) - dh_dq2 * qdd));
    let d_q = h_inv * d_q;

    let h = k * s2;
    let dc_dqd = Matrix2::new(-h * two * qd[1], -h * (two * qd[0] + two * qd[1]), two * h * qd[0], T::zero());
    let damping = Matrix2::new(params.d1, T::zero(), T::zero(), params.d2);
    let d_qd = h_inv * (-dc_dqd - damping);

    Ok(AccelerationJacobians { qdd, d_q, d_qd, d_tau: h_inv, h_inv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::fd;
    use crate::linalg::Vect;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn p() -> ManipulatorParams<f64> {
        ManipulatorParams::default()
    }

    #[test]
    fn stretched_and_rotated_arm() {
        let (pos, _) = end_effector_kinematics(&p(), &Vector2::new(0.0, 0.0));
        assert!((pos - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        let (pos, _) = end_effector_kinematics(&p(), &Vector2::new(std::f64::consts::FRAC_PI_2, 0.0));
        assert!((pos - Vector2::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let mut params = p();
        params.d1 = 0.0;
        params.d2 = 0.0;
        let q = Vector2::new(0.3, 0.5);
        let tau = Vector2::new(1.0, -0.5);
        assert_eq!(params.coriolis(&q, &Vector2::zeros()), Vector2::zeros());
        let qdd = manipulator_dynamics(&params, &q, &Vector2::zeros(), &tau, None).unwrap();
        let expected = params.mass_matrix(&q).try_inverse().unwrap() * tau;
        assert!((qdd - expected).norm() < 1e-12);
    }

    #[test]
    fn energy_is_conserved_without_damping() {
        let mut params = p();
        params.d1 = 0.0;
        params.d2 = 0.0;
        let drift = |x: &Vector4<f64>| {
            let q = Vector2::new(x[0], x[1]);
            let qd = Vector2::new(x[2], x[3]);
            let qdd = manipulator_dynamics(&params, &q, &qd, &Vector2::zeros(), None).unwrap();
            Vector4::new(qd[0], qd[1], qdd[0], qdd[1])
        };
        let mut x = Vector4::new(0.3, 0.5, 1.5, -2.0);
        let energy = |x: &Vector4<f64>| params.kinetic_energy(&Vector2::new(x[0], x[1]), &Vector2::new(x[2], x[3]));
        let e0 = energy(&x);
        let dt = 1e-3;
        for _ in 0..1000 {
            let k1 = drift(&x);
            let k2 = drift(&(x + k1 * (dt / 2.0)));
            let k3 = drift(&(x + k2 * (dt / 2.0)));
            let k4 = drift(&(x + k3 * dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        assert!(((energy(&x) - e0) / e0).abs() <= 1e-6);
    }

    fn fd_accel(params: &ManipulatorParams<f64>, force: Option<Vector2<f64>>, z: &Vect<f64>) -> Vect<f64> {
        let q = Vector2::new(z[0], z[1]);
        let qd = Vector2::new(z[2], z[3]);
        let tau = Vector2::new(z[4], z[5]);
        let a = manipulator_dynamics(params, &q, &qd, &tau, force.as_ref()).unwrap();
        DVector::from_row_slice(a.as_slice())
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(q1 in -3.0f64..3.0, q2 in -3.0f64..3.0) {
            let q = Vector2::new(q1, q2);
            let (_, jac) = end_effector_kinematics(&p(), &q);
            let z = DVector::from_row_slice(&[q1, q2]);
            let num = fd::jacobian(|z| {
                let (pos, _) = end_effector_kinematics(&p(), &Vector2::new(z[0], z[1]));
                DVector::from_row_slice(pos.as_slice())
            }, &z, 1e-6);
            for i in 0..2 { for j in 0..2 { prop_assert!((num[(i, j)] - jac[(i, j)]).abs() <= 1e-6); } }
        }

        #[test]
        fn mass_matrix_positive_definite(q2 in -10.0f64..10.0) {
            let h = p().mass_matrix(&Vector2::new(0.0, q2));
            prop_assert!(h.symmetric_eigenvalues().min() > 0.0);
        }

        #[test]
        fn acceleration_jacobians_match_fd(
            x in proptest::collection::vec(-2.0f64..2.0, 6),
            f in proptest::collection::vec(-20.0f64..20.0, 2),
            gravity in proptest::bool::ANY,
        ) {
            let mut params = p();
            params.gravity = gravity;
            let force = Vector2::new(f[0], f[1]);
            let z = DVector::from_row_slice(&x);
            let num = fd::jacobian(|z| fd_accel(&params, Some(force), z), &z, 1e-6);
            let an = acceleration_jacobians(
                &params,
                &Vector2::new(x[0], x[1]),
                &Vector2::new(x[2], x[3]),
                &Vector2::new(x[4], x[5]),
                Some(&force),
            ).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let pairs = [(an.d_q[(i, j)], num[(i, j)]), (an.d_qd[(i, j)], num[(i, 2 + j)]), (an.d_tau[(i, j)], num[(i, 4 + j)])];
                    for (a, b) in pairs {
                        prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
                    }
                }
            }
        }

        #[test]
        fn end_effector_state_derivatives(x in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let params = p();
            let xs = Vector4::new(x[0], x[1], x[2], x[3]);
            let e = end_effector_state(&params, &xs);
            let z = DVector::from_row_slice(&x);
            let f = |z: &Vect<f64>| {
                let s = end_effector_state(&params, &Vector4::new(z[0], z[1], z[2], z[3]));
                DVector::from_row_slice(s.value.as_slice())
            };
            let num = fd::jacobian(f, &z, 1e-6);
            for i in 0..4 { for j in 0..4 { prop_assert!((num[(i, j)] - e.jacobian[(i, j)]).abs() <= 1e-6); } }
            for i in 0..4 {
                let hess = fd::hessian(|z| f(z)[i], &z, 1e-5);
                for r in 0..4 { for c in 0..4 { prop_assert!((hess[(r, c)] - e.hessians[i][(r, c)]).abs() <= 1e-5); } }
            }
        }
    }
}
