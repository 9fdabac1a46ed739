//! Extended Kalman filter: the gain/covariance pass along a nominal and the
//! online filter used during closed-loop evaluation.

use crate::approx::{StageDynamics, StagePlan};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, min_eigenvalue, symmetrize, Mat, Vect};
use crate::problem::NoiseModel;
use crate::Real;

/// Floor added to `D Γ Dᵀ` when it is numerically singular.
pub const INNOVATION_FLOOR: f64 = 1e-12;

/// Gains `K_k` (`N` of them) and error covariances `Σᵉ_k` (`N + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorPass<T: Real> {
    pub gains: Vec<Mat<T>>,
    pub error_covs: Vec<Mat<T>>,
    /// Steps where the innovation floor was applied.
    pub floored_steps: Vec<usize>,
}

/// `D Γ Dᵀ`, plus the innovation floor when its smallest eigenvalue is
/// below it. The flag reports whether the floor was applied.
pub fn measurement_noise_cov<T: Real>(stage: &StageDynamics<T>, noise: &NoiseModel<T>) -> (Mat<T>, bool) {
    let floor = T::lit(INNOVATION_FLOOR);
    let r = symmetrize(&(&stage.d * noise.measurement_cov() * stage.d.transpose()));
    if min_eigenvalue(&r) < floor {
        let p = r.nrows();
        (r + Mat::identity(p, p) * floor, true)
    } else {
        (r, false)
    }
}

fn propagate<T: Real>(stage: &StageDynamics<T>, noise: &NoiseModel<T>, r: &Mat<T>, sigma: &Mat<T>, k: &Mat<T>) -> Mat<T> {
    let akf = &stage.a - k * &stage.f;
    let w = &stage.c * noise.process_cov() * stage.c.transpose();
    symmetrize(&(&akf * sigma * akf.transpose() + k * r * k.transpose() + w))
}

fn predictor_gain<T: Real>(stage: &StageDynamics<T>, r: &Mat<T>, sigma: &Mat<T>, step: usize) -> Result<Mat<T>> {
    let innovation = symmetrize(&(&stage.f * sigma * stage.f.transpose() + r));
    let min_eig = min_eigenvalue(&innovation);
    if min_eig < T::lit(1e-12) * innovation.trace() || !all_finite(&innovation) {
        return Err(Error::SingularInnovation { step, min_eig: min_eig.as_f64() });
    }
    let chol = innovation.cholesky().ok_or(Error::SingularInnovation { step, min_eig: min_eig.as_f64() })?;
    // K = A Σ Fᵀ S⁻¹, solved as (S⁻¹ F Σ Aᵀ)ᵀ.
    let rhs = &stage.f * sigma * stage.a.transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// Predictor-form EKF along the plan's nominal:
///
/// ```text
/// K_k     = A Σ Fᵀ (F Σ Fᵀ + D Γ Dᵀ)⁻¹
/// Σ_{k+1} = (A − K F) Σ (A − K F)ᵀ + K D Γ Dᵀ Kᵀ + C Ω Cᵀ
/// ```
pub fn ekf_forward<T: Real>(plan: &StagePlan<T>, noise: &NoiseModel<T>, sigma0: &Mat<T>) -> Result<EstimatorPass<T>> {
    let n = plan.nominal.states()[0].len();
    if sigma0.shape() != (n, n) {
        return Err(Error::InvalidInput(format!("initial error covariance is {:?}, expected {n}x{n}", sigma0.shape())));
    }
    let mut covs = Vec::with_capacity(plan.len() + 1);
    let mut gains = Vec::with_capacity(plan.len());
    let mut floored = Vec::new();
    covs.push(symmetrize(sigma0));
    for (k, stage) in plan.dynamics.iter().enumerate() {
        let (r, was_floored) = measurement_noise_cov(stage, noise);
        if was_floored {
            floored.push(k);
        }
        let sigma = &covs[k];
        let gain = predictor_gain(stage, &r, sigma, k)?;
        let next = propagate(stage, noise, &r, sigma, &gain);
        gains.push(gain);
        covs.push(next);
    }
    if !floored.is_empty() {
        log::warn!(
            "measurement noise near singular at {} steps; added {INNOVATION_FLOOR:e}·I to D Γ Dᵀ",
            floored.len()
        );
    }
    Ok(EstimatorPass { gains, error_covs: covs, floored_steps: floored })
}

/// `trace Σ_{k+1}(K_k + perturbation) − trace Σ_{k+1}(K_k)`. Non-negative
/// when `K_k` is the covariance-minimizing gain.
pub fn ekf_gain_optimality_check<T: Real>(
    plan: &StagePlan<T>,
    noise: &NoiseModel<T>,
    pass: &EstimatorPass<T>,
    k: usize,
    perturbation: &Mat<T>,
) -> T {
    let stage = &plan.dynamics[k];
    let (r, _) = measurement_noise_cov(stage, noise);
    let sigma = &pass.error_covs[k];
    let base = propagate(stage, noise, &r, sigma, &pass.gains[k]);
    let moved = propagate(stage, noise, &r, sigma, &(&pass.gains[k] + perturbation));
    moved.trace() - base.trace()
}

/// One filter step in deviation coordinates:
/// `δx̂⁺ = A δx̂ + B δu + K (δy − F δx̂ − E δu)`.
pub fn online_filter_step<T: Real>(
    stage: &StageDynamics<T>,
    gain: &Mat<T>,
    xhat: &Vect<T>,
    u: &Vect<T>,
    y_increment: &Vect<T>,
) -> Vect<T> {
    let innovation = y_increment - &stage.f * xhat - &stage.e * u;
    &stage.a * xhat + &stage.b * u + gain * innovation
}

/// Gain and next covariance for a single step, for filters that relinearize
/// on the fly.
pub fn ekf_step<T: Real>(
    stage: &StageDynamics<T>,
    noise: &NoiseModel<T>,
    sigma: &Mat<T>,
    step: usize,
) -> Result<(Mat<T>, Mat<T>)> {
    let (r, _) = measurement_noise_cov(stage, noise);
    let gain = predictor_gain(stage, &r, sigma, step)?;
    let next = propagate(stage, noise, &r, sigma, &gain);
    Ok((gain, next))
}
