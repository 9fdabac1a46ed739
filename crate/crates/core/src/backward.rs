//! Risk-sensitive backward recursion over the joint system of state
//! deviation `δx` and estimate deviation `δx̂`.
//!
//! With `W = C Ω Cᵀ`, `V = K D Γ Dᵀ Kᵀ` and all value blocks taken at `k+1`,
//! each step forms the control terms `H, g, Gˣ, Gˣ̂`, the law
//! `δu = l + L δx̂` with `l = −(H+λI)⁻¹ g`, `L = −(H+λI)⁻¹ (Gˣ + Gˣ̂)`, and
//! then the six value blocks at `k`.

use crate::approx::{StageCost, StageDynamics, StagePlan};
use crate::error::{Error, Result};
use crate::estimation::EstimatorPass;
use crate::linalg::{all_finite, all_finite_vec, symmetrize, Mat, Vect};
use crate::problem::NoiseModel;
use crate::Real;

/// Quadratic value model
/// `½[δx;δx̂]ᵀ[[Sˣ, Sˣˣ̂];[Sˣˣ̂ᵀ, Sˣ̂]][δx;δx̂] + [δx;δx̂]ᵀ[sˣ;sˣ̂] + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueExpansion<T: Real> {
    /// `Sˣ`
    pub sxx: Mat<T>,
    /// `Sˣˣ̂`, not symmetric in general.
    pub sxh: Mat<T>,
    /// `Sˣ̂`
    pub shh: Mat<T>,
    /// `sˣ`
    pub sx: Vect<T>,
    /// `sˣ̂`
    pub sh: Vect<T>,
    pub s0: T,
}

impl<T: Real> ValueExpansion<T> {
    /// Boundary condition from the terminal cost model.
    pub fn terminal(q0: T, qx: &Vect<T>, qxx: &Mat<T>) -> Self {
        let n = qx.len();
        Self {
            sxx: symmetrize(qxx),
            sxh: Mat::zeros(n, n),
            shh: Mat::zeros(n, n),
            sx: qx.clone(),
            sh: Vect::zeros(n),
            s0: q0,
        }
    }
}

/// `H` (`m×m`), `g` (`m`), `Gˣ` and `Gˣ̂` (`m×n`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStageTerms<T: Real> {
    pub h: Mat<T>,
    pub g: Vect<T>,
    pub gx: Mat<T>,
    pub gh: Mat<T>,
}

/// Affine law `δu_k = l_k + L_k δx̂_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw<T: Real> {
    pub feedforward: Vec<Vect<T>>,
    pub feedback: Vec<Mat<T>>,
}

impl<T: Real> ControlLaw<T> {
    pub fn len(&self) -> usize {
        self.feedforward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feedforward.is_empty()
    }

    /// `δu = l_k + L_k δx̂`.
    pub fn control(&self, k: usize, dxhat: &Vect<T>) -> Vect<T> {
        &self.feedforward[k] + &self.feedback[k] * dxhat
    }
}

fn check_mat<T: Real>(m: &Mat<T>, block: &'static str, step: usize) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(Error::NonFiniteBlock { block, step })
    }
}

fn check_vec<T: Real>(v: &Vect<T>, block: &'static str, step: usize) -> Result<()> {
    if all_finite_vec(v) {
        Ok(())
    } else {
        Err(Error::NonFiniteBlock { block, step })
    }
}

/// Noise covariances entering the recursion: `W = C Ω Cᵀ`, `V = K D Γ Dᵀ Kᵀ`.
fn noise_terms<T: Real>(stage: &StageDynamics<T>, gain: &Mat<T>, noise: &NoiseModel<T>) -> (Mat<T>, Mat<T>) {
    let w = &stage.c * noise.process_cov() * stage.c.transpose();
    let kd = gain * &stage.d;
    let v = &kd * noise.measurement_cov() * kd.transpose();
    (w, v)
}

fn stage_terms<T: Real>(
    stage: &StageDynamics<T>,
    cost: &StageCost<T>,
    gain: &Mat<T>,
    next: &ValueExpansion<T>,
    noise: &NoiseModel<T>,
    sigma: T,
    step: usize,
) -> Result<ControlStageTerms<T>> {
    let (a, b) = (&stage.a, &stage.b);
    let (w, v) = noise_terms(stage, gain, noise);
    let (sx, sh, sxh) = (&next.sxx, &next.shh, &next.sxh);
    let shx = sxh.transpose();
    let kf = gain * &stage.f;
    let akf = a - &kf;
    let bt = b.transpose();

    // (Sˣ + Sˣˣ̂)ᵀ and (Sˣ̂ˣ + Sˣ̂)ᵀ premultiplied by Bᵀ recur in every σ term.
    let bt_mx_w = &bt * (sx + sxh).transpose() * &w;
    let bt_mh_v = &bt * (&shx + sh).transpose() * &v;

    let h = &cost.ruu
        + &bt * (sx + sh + sxh + &shx) * b
        + (&bt_mx_w * (sx + sxh) * b + &bt_mh_v * (&shx + sh) * b) * sigma;
    let h = symmetrize(&h);

    let g = &cost.ru + &bt * (&next.sx + &next.sh) + (&bt_mx_w * &next.sx + &bt_mh_v * &next.sh) * sigma;

    let gx = cost.pxu.transpose()
        + &bt * (sx + &shx) * a
        + &bt * (sh + sxh) * &kf
        + (&bt_mx_w * (sx * a + sxh * &kf) + &bt_mh_v * (&shx * a + sh * &kf)) * sigma;

    let gh = &bt * (sh + sxh) * &akf + (&bt_mx_w * sxh * &akf + &bt_mh_v * sh * &akf) * sigma;

    check_mat(&h, "H", step)?;
    check_vec(&g, "g", step)?;
    check_mat(&gx, "Gx", step)?;
    check_mat(&gh, "Gh", step)?;
    Ok(ControlStageTerms { h, g, gx, gh })
}

/// Control-dependent terms `H, g, Gˣ, Gˣ̂` of one step; `next` is the value
/// expansion at `k + 1` and `gain` the estimation gain `K_k`.
pub fn control_stage_terms<T: Real>(
    stage: &StageDynamics<T>,
    cost: &StageCost<T>,
    gain: &Mat<T>,
    next: &ValueExpansion<T>,
    noise: &NoiseModel<T>,
    sigma: T,
) -> Result<ControlStageTerms<T>> {
    stage_terms(stage, cost, gain, next, noise, sigma, 0)
}

/// Value blocks at `k` given the terms at `k`, the applied `(l, L)` and the
/// blocks at `k + 1`. `H` is used unregularized, so the result is the value
/// of the law actually applied.
#[allow(clippy::too_many_arguments)]
fn value_update<T: Real>(
    stage: &StageDynamics<T>,
    cost: &StageCost<T>,
    gain: &Mat<T>,
    next: &ValueExpansion<T>,
    noise: &NoiseModel<T>,
    sigma: T,
    terms: &ControlStageTerms<T>,
    l: &Vect<T>,
    big_l: &Mat<T>,
    step: usize,
) -> Result<ValueExpansion<T>> {
    let a = &stage.a;
    let (w, v) = noise_terms(stage, gain, noise);
    let (sx, sh, sxh) = (&next.sxx, &next.shh, &next.sxh);
    let shx = sxh.transpose();
    let kf = gain * &stage.f;
    let akf = a - &kf;
    let at = a.transpose();
    let akft = akf.transpose();
    let kft = kf.transpose();
    let ControlStageTerms { h, g, gx, gh } = terms;
    let half = T::lit(0.5);
    let two = T::lit(2.0);

    let x1 = sx * a + sxh * &kf;
    let x2 = &shx * a + sh * &kf;
    let x1t = x1.transpose();
    let x2t = x2.transpose();
    let sxh_akf = sxh * &akf;
    let sh_akf = sh * &akf;

    let new_sxx = &cost.qxx
        + &at * sx * a
        + (&kft * sh + &at * sxh * two) * &kf
        + (&x1t * &w * &x1 + &x2t * &v * &x2) * sigma;

    let new_shh = &akft * sh * &akf
        + big_l.transpose() * h * big_l
        + gh.transpose() * big_l * two
        + (sxh_akf.transpose() * &w * &sxh_akf + sh_akf.transpose() * &v * &sh_akf) * sigma;

    let new_sxh =
        &x2t * &akf + gx.transpose() * big_l + (&x1t * &w * &sxh_akf + &x2t * &v * &sh_akf) * sigma;

    let new_sx = &cost.qx
        + &at * &next.sx
        + &kft * &next.sh
        + gx.transpose() * l
        + (&x1t * &w * &next.sx + &x2t * &v * &next.sh) * sigma;

    let new_sh = &akft * &next.sh
        + big_l.transpose() * h.transpose() * l
        + big_l.transpose() * g
        + gh.transpose() * l
        + (sxh_akf.transpose() * &w * &next.sx + sh_akf.transpose() * &v * &next.sh) * sigma;

    let new_s0 = next.s0
        + cost.q0
        + half * l.dot(&(h * l))
        + l.dot(g)
        + half * (sx * &w).trace()
        + half * (sh * &v).trace()
        + half * sigma * (next.sx.dot(&(&w * &next.sx)) + next.sh.dot(&(&v * &next.sh)));

    let out = ValueExpansion {
        sxx: symmetrize(&new_sxx),
        sxh: new_sxh,
        shh: symmetrize(&new_shh),
        sx: new_sx,
        sh: new_sh,
        s0: new_s0,
    };
    check_mat(&out.sxx, "Sx", step)?;
    check_mat(&out.shh, "Sh", step)?;
    check_mat(&out.sxh, "Sxh", step)?;
    check_vec(&out.sx, "sx", step)?;
    check_vec(&out.sh, "sh", step)?;
    if !out.s0.is_finite() {
        return Err(Error::NonFiniteBlock { block: "s", step });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn step<T: Real>(
    stage: &StageDynamics<T>,
    cost: &StageCost<T>,
    gain: &Mat<T>,
    next: &ValueExpansion<T>,
    noise: &NoiseModel<T>,
    sigma: T,
    lambda: T,
    k: usize,
) -> Result<(Vect<T>, Mat<T>, ValueExpansion<T>)> {
    let terms = stage_terms(stage, cost, gain, next, noise, sigma, k)?;
    let m = terms.h.nrows();
    let chol = (&terms.h + Mat::identity(m, m) * lambda)
        .cholesky()
        .ok_or(Error::NeedsRegularization { step: k })?;
    let l = -chol.solve(&terms.g);
    let big_l = -chol.solve(&(&terms.gx + &terms.gh));
    check_vec(&l, "l", k)?;
    check_mat(&big_l, "L", k)?;
    let value = value_update(stage, cost, gain, next, noise, sigma, &terms, &l, &big_l, k)?;
    Ok((l, big_l, value))
}

/// One step of the recursion: `(l, L)` and the value expansion at `k` from
/// the expansion at `k + 1`.
pub fn backward_step<T: Real>(
    stage: &StageDynamics<T>,
    cost: &StageCost<T>,
    gain: &Mat<T>,
    next: &ValueExpansion<T>,
    noise: &NoiseModel<T>,
    sigma: T,
    lambda: T,
) -> Result<(Vect<T>, Mat<T>, ValueExpansion<T>)> {
    step(stage, cost, gain, next, noise, sigma, lambda, 0)
}

/// Runs the recursion from `N − 1` down to `0`. Returns the law and the value
/// expansions for `k = 0..=N`; `expansions[0].s0` is the predicted
/// risk-sensitive cost at zero deviation.
pub fn backward_recursion<T: Real>(
    plan: &StagePlan<T>,
    est: &EstimatorPass<T>,
    noise: &NoiseModel<T>,
    sigma: T,
    lambda: T,
) -> Result<(ControlLaw<T>, Vec<ValueExpansion<T>>)> {
    let nsteps = plan.len();
    if est.gains.len() != nsteps {
        return Err(Error::InvalidInput(format!("{} estimation gains for {} steps", est.gains.len(), nsteps)));
    }
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidInput("regularization must be non-negative".into()));
    }
    let t = &plan.terminal;
    let mut expansions = vec![ValueExpansion::terminal(t.q0, &t.qx, &t.qxx)];
    let mut feedforward = Vec::with_capacity(nsteps);
    let mut feedback = Vec::with_capacity(nsteps);

    for k in (0..nsteps).rev() {
        let next = expansions.last().expect("terminal expansion present");
        let (l, big_l, value) =
            step(&plan.dynamics[k], &plan.costs[k], &est.gains[k], next, noise, sigma, lambda, k)?;
        expansions.push(value);
        feedforward.push(l);
        feedback.push(big_l);
    }
    expansions.reverse();
    feedforward.reverse();
    feedback.reverse();
    Ok((ControlLaw { feedforward, feedback }, expansions))
}

/// Evaluates the value model at `(δx, δx̂)`.
pub fn predicted_value<T: Real>(expansion: &ValueExpansion<T>, dx: &Vect<T>, dxh: &Vect<T>) -> T {
    let half = T::lit(0.5);
    half * dx.dot(&(&expansion.sxx * dx))
        + dx.dot(&(&expansion.sxh * dxh))
        + half * dxh.dot(&(&expansion.shh * dxh))
        + dx.dot(&expansion.sx)
        + dxh.dot(&expansion.sh)
        + expansion.s0
}
