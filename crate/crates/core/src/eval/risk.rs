use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Real;

const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x5EED_B007;

/// Sample statistics of a realized-cost distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate<T: Real> {
    pub sigma: T,
    /// `(1/σ) log mean exp(σ J_i)`; the plain mean when `σ = 0`.
    pub mc_risk: T,
    pub mean: T,
    /// Unbiased variance.
    pub variance: T,
    /// Third central moment.
    pub skewness: T,
    /// Bootstrap standard error of `mc_risk`.
    pub std_error: T,
    pub sample_count: usize,
}

impl<T: Real> RiskEstimate<T> {
    /// `mean + σ/2 · variance`.
    pub fn second_order(&self) -> T {
        self.mean + self.sigma * self.variance * T::lit(0.5)
    }
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(xs.len())
}

/// Log-mean-exp based risk value, shifted for stability.
fn risk_value<T: Real>(costs: &[T], sigma: T) -> Result<T> {
    let m = mean(costs);
    if sigma == T::zero() {
        return Ok(m);
    }
    let max_arg = costs.iter().map(|&c| sigma * (c - m)).fold(T::min_value().unwrap_or_else(|| T::lit(f64::MIN)), |a, b| a.max(b));
    if !max_arg.is_finite() || !(sigma * m).is_finite() {
        return Err(Error::RiskOverflow);
    }
    // Centering on the mean keeps log1p/expm1 accurate for small σ; fall
    // back to the max shift when the spread would overflow exp.
    let value = if max_arg < T::lit(300.0) {
        let acc = costs.iter().fold(T::zero(), |a, &c| a + (sigma * (c - m)).exp_m1()) / T::from_usize_lossy(costs.len());
        m + acc.ln_1p() / sigma
    } else {
        let shift = max_arg;
        let acc = costs.iter().fold(T::zero(), |a, &c| a + (sigma * (c - m) - shift).exp()) / T::from_usize_lossy(costs.len());
        m + (acc.ln() + shift) / sigma
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::RiskOverflow)
    }
}

/// [`estimate_risk_seeded`] with a fixed bootstrap seed.
pub fn estimate_risk<T: Real>(costs: &[T], sigma: T) -> Result<RiskEstimate<T>> {
    estimate_risk_seeded(costs, sigma, BOOTSTRAP_SEED)
}

/// Risk value, moments and bootstrap standard error of a cost sample.
pub fn estimate_risk_seeded<T: Real>(costs: &[T], sigma: T, seed: u64) -> Result<RiskEstimate<T>> {
    if costs.len() < 2 {
        return Err(Error::InvalidInput("risk estimate needs at least two samples".into()));
    }
    if costs.iter().any(|c| !c.is_finite()) || !sigma.is_finite() {
        return Err(Error::InvalidInput("costs and sigma must be finite".into()));
    }
    let n = costs.len();
    let nf = T::from_usize_lossy(n);
    let m = mean(costs);
    let (m2, m3) = costs.iter().fold((T::zero(), T::zero()), |(a, b), &c| {
        let d = c - m;
        (a + d * d, b + d * d * d)
    });
    let variance = m2 / (nf - T::one());
    // Adjusted Fisher–Pearson skewness rescaled by s³.
    let skewness = if n > 2 && m2 > T::zero() {
        let g1 = (m3 / nf) / (m2 / nf).powf(T::lit(1.5));
        let adj = (nf * (nf - T::one())).sqrt() / (nf - T::lit(2.0));
        adj * g1 * variance.powf(T::lit(1.5))
    } else {
        T::zero()
    };
    let mc_risk = risk_value(costs, sigma)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resample = vec![T::zero(); n];
    let mut values = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in resample.iter_mut() {
            *slot = costs[rng.random_range(0..n)];
        }
        values.push(risk_value(&resample, sigma)?);
    }
    let bm = mean(&values);
    let bvar = values.iter().fold(T::zero(), |a, &v| a + (v - bm) * (v - bm)) / T::from_usize_lossy(BOOTSTRAP_RESAMPLES - 1);

    Ok(RiskEstimate {
        sigma,
        mc_risk,
        mean: m,
        variance,
        skewness,
        std_error: bvar.sqrt(),
        sample_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn degenerate_sample() {
        for sigma in [-1.0f64, 0.0, 0.3, 5.0] {
            let r = estimate_risk(&[2.5; 10], sigma).unwrap();
            assert!((r.mc_risk - 2.5).abs() < 1e-14, "σ = {sigma}: {}", r.mc_risk);
            assert_eq!(r.variance, 0.0);
        }
    }

    #[test]
    fn risk_neutral_is_mean() {
        let costs = [1.0, 2.0, 4.0, 8.0];
        let r = estimate_risk(&costs, 0.0).unwrap();
        assert_eq!(r.mc_risk, 3.75);
        assert_eq!(r.mean, 3.75);
    }

    #[test]
    fn gaussian_log_mgf() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let costs: Vec<f64> = (0..100_000).map(|_| 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = estimate_risk(&costs, 0.4).unwrap();
        assert!((r.mc_risk - 1.05).abs() <= 3.0 * r.std_error, "{} ± {}", r.mc_risk, r.std_error);
        assert!(r.skewness.abs() < 0.01);
    }

    #[test]
    fn large_costs_do_not_overflow() {
        let costs = [1e4, 1e4 + 1.0, 1e4 + 2.0];
        let r = estimate_risk(&costs, 1.0).unwrap();
        assert!(r.mc_risk > 1e4 + 1.0 && r.mc_risk < 1e4 + 2.0);
        let spread = [0.0, 1e5];
        let r = estimate_risk(&spread, 1.0).unwrap();
        assert!((r.mc_risk - (1e5 - 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn overflow_is_error() {
        assert_eq!(estimate_risk(&[0.0, 1e308], 10.0).unwrap_err(), Error::RiskOverflow);
    }

    #[test]
    fn skewness_of_known_sample() {
        let xs = [1.0, 2.0, 3.0, 10.0];
        let r = estimate_risk(&xs, 0.0).unwrap();
        let m: f64 = 4.0;
        let m3: f64 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / 4.0;
        let m2: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        let g1 = m3 / m2.powf(1.5);
        let expected = g1 * (12.0f64).sqrt() / 2.0 * r.variance.powf(1.5);
        assert!((r.skewness - expected).abs() < 1e-12);
    }
}
