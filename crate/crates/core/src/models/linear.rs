//! Linear dynamics with quadratic cost.

use crate::linalg::{Mat, Vect};
use crate::problem::{CostDerivatives, Dims, Problem, TerminalDerivatives};
use crate::Real;

/// ```text
/// dx = (A x + B u) dt + M dω
/// dy = C x dt + N dγ
/// L  = ½ xᵀQx + ½ uᵀRu,   Φ = ½ xᵀQ_f x
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem<T: Real> {
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub m: Mat<T>,
    pub c: Mat<T>,
    pub n: Mat<T>,
    pub q: Mat<T>,
    pub r: Mat<T>,
    pub qf: Mat<T>,
    pub horizon: T,
}

impl<T: Real> LinearProblem<T> {
    /// Fully observed system with identity noise inputs and zero cost.
    pub fn new(a: Mat<T>, b: Mat<T>, horizon: T) -> Self {
        let (n, m) = b.shape();
        Self {
            a,
            b,
            m: Mat::identity(n, n),
            c: Mat::identity(n, n),
            n: Mat::identity(n, n),
            q: Mat::zeros(n, n),
            r: Mat::zeros(m, m),
            qf: Mat::zeros(n, n),
            horizon,
        }
    }

    pub fn with_cost(mut self, q: Mat<T>, r: Mat<T>, qf: Mat<T>) -> Self {
        self.q = q;
        self.r = r;
        self.qf = qf;
        self
    }

    pub fn with_noise_inputs(mut self, m: Mat<T>, n: Mat<T>) -> Self {
        self.m = m;
        self.n = n;
        self
    }

    pub fn with_observation(mut self, c: Mat<T>, n: Mat<T>) -> Self {
        self.c = c;
        self.n = n;
        self
    }
}

fn half_quad<T: Real>(m: &Mat<T>, v: &Vect<T>) -> T {
    v.dot(&(m * v)) * T::lit(0.5)
}

impl<T: Real> Problem<T> for LinearProblem<T> {
    fn dims(&self) -> Dims {
        Dims {
            state: self.a.nrows(),
            control: self.b.ncols(),
            measurement: self.c.nrows(),
            process_noise: self.m.ncols(),
            measurement_noise: self.n.ncols(),
        }
    }

    fn horizon(&self) -> T {
        self.horizon
    }

    fn drift(&self, x: &Vect<T>, u: &Vect<T>, _t: T) -> Vect<T> {
        &self.a * x + &self.b * u
    }

    fn diffusion(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Mat<T> {
        self.m.clone()
    }

    fn measurement_drift(&self, x: &Vect<T>, _u: &Vect<T>, _t: T) -> Vect<T> {
        &self.c * x
    }

    fn measurement_diffusion(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Mat<T> {
        self.n.clone()
    }

    fn running_cost(&self, x: &Vect<T>, u: &Vect<T>, _t: T) -> T {
        half_quad(&self.q, x) + half_quad(&self.r, u)
    }

    fn terminal_cost(&self, x: &Vect<T>) -> T {
        half_quad(&self.qf, x)
    }

    fn drift_jacobians(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        Some((self.a.clone(), self.b.clone()))
    }

    fn measurement_jacobians(&self, _x: &Vect<T>, _u: &Vect<T>, _t: T) -> Option<(Mat<T>, Mat<T>)> {
        Some((self.c.clone(), Mat::zeros(self.c.nrows(), self.b.ncols())))
    }

    fn running_cost_derivatives(&self, x: &Vect<T>, u: &Vect<T>, t: T) -> Option<CostDerivatives<T>> {
        Some(CostDerivatives {
            value: self.running_cost(x, u, t),
            dx: &self.q * x,
            du: &self.r * u,
            dxx: self.q.clone(),
            dxu: Mat::zeros(self.a.nrows(), self.b.ncols()),
            duu: self.r.clone(),
        })
    }

    fn terminal_cost_derivatives(&self, x: &Vect<T>) -> Option<TerminalDerivatives<T>> {
        Some(TerminalDerivatives { value: self.terminal_cost(x), dx: &self.qf * x, dxx: self.qf.clone() })
    }
}
