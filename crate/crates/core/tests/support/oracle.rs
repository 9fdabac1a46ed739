//! Reference computations written without the library's numerics, used to
//! pin expected values in integration and acceptance tests.

#![allow(dead_code, clippy::too_many_arguments, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

pub type M = DMatrix<f64>;
pub type V = DVector<f64>;

/// Time-invariant discrete LQ problem `x⁺ = A x + B u`,
/// stage cost `½xᵀQx + xᵀPu + ½uᵀRu`, terminal `½xᵀQ_f x`.
#[derive(Debug, Clone)]
pub struct DiscreteLq {
    pub a: M,
    pub b: M,
    pub q: M,
    pub p: M,
    pub r: M,
    pub qf: M,
}

/// Feedback gains `u_k = L_k x_k` from the textbook Riccati recursion.
pub fn riccati_gains(lq: &DiscreteLq, steps: usize) -> Vec<M> {
    let mut s = lq.qf.clone();
    let mut gains = vec![M::zeros(lq.b.ncols(), lq.a.nrows()); steps];
    for k in (0..steps).rev() {
        let bts = lq.b.transpose() * &s;
        let h = &lq.r + &bts * &lq.b;
        let g = lq.p.transpose() + &bts * &lq.a;
        let h_inv = h.clone().try_inverse().expect("R + BᵀSB invertible");
        let gain = -(&h_inv * &g);
        s = &lq.q + lq.a.transpose() * &s * &lq.a - g.transpose() * &h_inv * &g;
        s = (&s + s.transpose()) * 0.5;
        gains[k] = gain;
    }
    gains
}

/// Everything one step of the joint state/estimate recursion reads.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub a: M,
    pub b: M,
    pub c: M,
    pub f: M,
    pub d: M,
    pub k: M,
    pub omega: M,
    pub gamma: M,
    pub q0: f64,
    pub qv: V,
    pub rv: V,
    pub qm: M,
    /// `n × m`
    pub pm: M,
    pub rm: M,
    pub sx: M,
    pub sh: M,
    pub sxh: M,
    pub sxv: V,
    pub shv: V,
    pub s: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutputs {
    pub h: M,
    pub g: V,
    pub gx: M,
    pub gh: M,
    pub l: V,
    pub big_l: M,
    pub sx: M,
    pub sh: M,
    pub sxh: M,
    pub sxv: V,
    pub shv: V,
    pub s: f64,
}

/// One step of the recursion, each formula written out term by term in
/// the order it is stated, with `H` unregularized.
pub fn joint_recursion_step(i: &StepInputs) -> StepOutputs {
    let (a, b, c, f, d, kk) = (&i.a, &i.b, &i.c, &i.f, &i.d, &i.k);
    let sg = i.sigma;
    let sx = &i.sx;
    let sh = &i.sh;
    let sxh = &i.sxh;
    let shx = i.sxh.transpose();
    let bt = b.transpose();
    let w = c * &i.omega * c.transpose();
    let v = kk * d * &i.gamma * d.transpose() * kk.transpose();
    let kf = kk * f;
    let akf = a - &kf;

    let h = &i.rm
        + &bt * (sx + sh + sxh + &shx) * b
        + (&bt * (sx + sxh).transpose() * &w * (sx + sxh) * b) * sg
        + (&bt * (&shx + sh).transpose() * &v * (&shx + sh) * b) * sg;
    let g = &i.rv
        + &bt * (&i.sxv + &i.shv)
        + (&bt * (sx + sxh).transpose() * &w * &i.sxv) * sg
        + (&bt * (&shx + sh).transpose() * &v * &i.shv) * sg;
    let gx = i.pm.transpose()
        + &bt * (sx + &shx) * a
        + &bt * (sh + sxh) * &kf
        + (&bt * (sx + sxh).transpose() * &w * (sx * a + sxh * &kf)) * sg
        + (&bt * (&shx + sh).transpose() * &v * (&shx * a + sh * &kf)) * sg;
    let gh = &bt * (sh + sxh) * &akf
        + (&bt * (sx + sxh).transpose() * &w * sxh * &akf) * sg
        + (&bt * (&shx + sh).transpose() * &v * sh * &akf) * sg;

    let h_inv = h.clone().try_inverse().expect("H invertible");
    let l = -(&h_inv * &g);
    let big_l = -(&h_inv * (&gx + &gh));

    let new_sx = &i.qm
        + a.transpose() * sx * a
        + (kf.transpose() * sh + a.transpose() * sxh * 2.0) * &kf
        + ((sx * a + sxh * &kf).transpose() * &w * (sx * a + sxh * &kf)) * sg
        + ((&shx * a + sh * &kf).transpose() * &v * (&shx * a + sh * &kf)) * sg;
    let new_sh = akf.transpose() * sh * &akf
        + big_l.transpose() * &h * &big_l
        + gh.transpose() * &big_l * 2.0
        + ((sxh * &akf).transpose() * &w * (sxh * &akf)) * sg
        + ((sh * &akf).transpose() * &v * (sh * &akf)) * sg;
    let new_sxh = (&shx * a + sh.transpose() * &kf).transpose() * &akf
        + gx.transpose() * &big_l
        + ((sx * a + sxh * &kf).transpose() * &w * sxh * &akf) * sg
        + ((&shx * a + sh * &kf).transpose() * &v * sh * &akf) * sg;
    let new_sxv = &i.qv
        + a.transpose() * &i.sxv
        + kf.transpose() * &i.shv
        + gx.transpose() * &l
        + ((sx * a + sxh * &kf).transpose() * &w * &i.sxv) * sg
        + ((&shx * a + sh * &kf).transpose() * &v * &i.shv) * sg;
    let new_shv = akf.transpose() * &i.shv
        + big_l.transpose() * h.transpose() * &l
        + big_l.transpose() * &g
        + gh.transpose() * &l
        + ((sxh * &akf).transpose() * &w * &i.sxv) * sg
        + ((sh * &akf).transpose() * &v * &i.shv) * sg;
    let new_s = i.s
        + i.q0
        + 0.5 * l.dot(&(&h * &l))
        + l.dot(&g)
        + 0.5 * (sx * &w).trace()
        + 0.5 * (sh * &v).trace()
        + 0.5 * sg * i.sxv.dot(&(&w * &i.sxv))
        + 0.5 * sg * i.shv.dot(&(&v * &i.shv));

    StepOutputs { h, g, gx, gh, l, big_l, sx: new_sx, sh: new_sh, sxh: new_sxh, sxv: new_sxv, shv: new_shv, s: new_s }
}

/// Symmetric part, for comparing quadratic forms.
pub fn sym(m: &M) -> M {
    (m + m.transpose()) * 0.5
}

/// Covariance of the stacked `[x; x̂]` deviations of a linear closed loop
/// driven by a fixed law `u = L_k x̂` and a precomputed-gain filter:
///
/// ```text
/// x⁺ = A x + B L x̂ + C ω
/// x̂⁺ = K F x + (A + B L − K F) x̂ + K D γ
/// ```
///
/// Returns the covariance after every step, starting from `p0`.
#[allow(clippy::too_many_arguments)]
pub fn joint_covariance(
    a: &M,
    b: &M,
    c: &M,
    f: &M,
    d: &M,
    gains: &[M],
    laws: &[M],
    omega: &M,
    gamma: &M,
    p0: &M,
) -> Vec<M> {
    let n = a.nrows();
    let mut p = p0.clone();
    let mut out = vec![p.clone()];
    for (k, l) in gains.iter().zip(laws) {
        let mut t = M::zeros(2 * n, 2 * n);
        t.view_mut((0, 0), (n, n)).copy_from(a);
        t.view_mut((0, n), (n, n)).copy_from(&(b * l));
        t.view_mut((n, 0), (n, n)).copy_from(&(k * f));
        t.view_mut((n, n), (n, n)).copy_from(&(a + b * l - k * f));
        let mut g = M::zeros(2 * n, c.ncols() + d.ncols());
        g.view_mut((0, 0), (n, c.ncols())).copy_from(c);
        g.view_mut((n, c.ncols()), (n, d.ncols())).copy_from(&(k * d));
        let mut noise = M::zeros(c.ncols() + d.ncols(), c.ncols() + d.ncols());
        noise.view_mut((0, 0), omega.shape()).copy_from(omega);
        noise.view_mut((c.ncols(), c.ncols()), gamma.shape()).copy_from(gamma);
        p = &t * &p * t.transpose() + &g * noise * g.transpose();
        out.push(p.clone());
    }
    out
}

/// Kalman predictor gain and covariance recursion, written out directly.
pub fn kalman_predictor(a: &M, c: &M, f: &M, d: &M, omega: &M, gamma: &M, p0: &M, steps: usize) -> (Vec<M>, Vec<M>) {
    let mut p = p0.clone();
    let mut gains = Vec::with_capacity(steps);
    let mut covs = vec![p.clone()];
    for _ in 0..steps {
        let s = f * &p * f.transpose() + d * gamma * d.transpose();
        let k = a * &p * f.transpose() * s.try_inverse().expect("innovation invertible");
        let akf = a - &k * f;
        p = &akf * &p * akf.transpose() + &k * d * gamma * d.transpose() * k.transpose() + c * omega * c.transpose();
        gains.push(k);
        covs.push(p.clone());
    }
    (gains, covs)
}

/// Central-difference derivative of a scalar function, step `h`.
pub fn derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `log cosh x` via its series-free definition; only for moderate `x`.
pub fn log_cosh_direct(x: f64) -> f64 {
    x.cosh().ln()
}
