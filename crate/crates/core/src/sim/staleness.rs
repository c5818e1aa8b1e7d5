use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delay in server epochs between the model a gradient was computed on and
/// its delivery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StalenessModel {
    Zero,
    /// Rounded to the nearest integer and clamped at zero.
    Gaussian { mean: f64, sigma: f64 },
    Fixed { tau: u64 },
    /// `weights[τ]` is the relative probability of staleness `τ`.
    Empirical { weights: Vec<f64> },
}

impl StalenessModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            StalenessModel::Zero => Ok(()),
            StalenessModel::Gaussian { mean, sigma } => {
                if !(mean.is_finite() && *mean >= 0.0) {
                    return Err(Error::config("staleness.mean", format!("must be finite and >= 0, got {mean}")));
                }
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::config("staleness.sigma", format!("must be finite and >= 0, got {sigma}")));
                }
                if self.support_max() > 1_000_000 {
                    return Err(Error::config("staleness", "support exceeds 10^6 epochs"));
                }
                Ok(())
            }
            StalenessModel::Fixed { tau } => {
                if *tau > 1_000_000 {
                    return Err(Error::config("staleness.tau", "exceeds 10^6 epochs"));
                }
                Ok(())
            }
            StalenessModel::Empirical { weights } => {
                if weights.len() > 1_000_001 {
                    return Err(Error::config("staleness.weights", "support exceeds 10^6 epochs"));
                }
                WeightedIndex::new(weights)
                    .map(|_| ())
                    .map_err(|e| Error::config("staleness.weights", e.to_string()))
            }
        }
    }

    /// Largest staleness the model produces; Gaussian tails are cut at
    /// ten standard deviations.
    pub fn support_max(&self) -> u64 {
        match self {
            StalenessModel::Zero => 0,
            StalenessModel::Gaussian { mean, sigma } => (mean + 10.0 * sigma).round().max(0.0) as u64,
            StalenessModel::Fixed { tau } => *tau,
            StalenessModel::Empirical { weights } => weights.len().saturating_sub(1) as u64,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            StalenessModel::Zero => 0.0,
            StalenessModel::Gaussian { mean, .. } => *mean,
            StalenessModel::Fixed { tau } => *tau as f64,
            StalenessModel::Empirical { weights } => {
                let total: f64 = weights.iter().sum();
                weights.iter().enumerate().map(|(t, w)| t as f64 * w).sum::<f64>() / total
            }
        }
    }

    /// Builds a reusable sampler; fails on an invalid model.
    pub fn sampler(&self) -> Result<StalenessSampler> {
        self.validate()?;
        let inner = match self {
            StalenessModel::Zero => Inner::Fixed(0),
            StalenessModel::Fixed { tau } => Inner::Fixed(*tau),
            StalenessModel::Gaussian { mean, sigma } => Inner::Gaussian(
                Normal::new(*mean, *sigma).map_err(|e| Error::config("staleness", e.to_string()))?,
            ),
            StalenessModel::Empirical { weights } => Inner::Empirical(
                WeightedIndex::new(weights).map_err(|e| Error::config("staleness.weights", e.to_string()))?,
            ),
        };
        Ok(StalenessSampler {
            inner,
            cap: self.support_max(),
        })
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Fixed(u64),
    Gaussian(Normal<f64>),
    Empirical(WeightedIndex<f64>),
}

#[derive(Debug, Clone)]
pub struct StalenessSampler {
    inner: Inner,
    cap: u64,
}

impl StalenessSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let tau = match &self.inner {
            Inner::Fixed(t) => *t,
            Inner::Gaussian(n) => n.sample(rng).round().max(0.0) as u64,
            Inner::Empirical(w) => w.sample(rng) as u64,
        };
        tau.min(self.cap)
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn gaussian_samples_are_clamped_integers() {
        let s = StalenessModel::Gaussian { mean: 1.0, sigma: 4.0 }.sampler().unwrap();
        let mut r = rng::stream(5, 2);
        let draws: Vec<u64> = (0..10_000).map(|_| s.sample(&mut r)).collect();
        assert!(draws.iter().all(|&t| t <= 41));
        assert!(draws.contains(&0));
    }

    #[test]
    fn gaussian_mean_matches() {
        let s = StalenessModel::Gaussian { mean: 12.0, sigma: 4.0 }.sampler().unwrap();
        let mut r = rng::stream(5, 2);
        let n = 20_000;
        let mean = (0..n).map(|_| s.sample(&mut r) as f64).sum::<f64>() / n as f64;
        // Clamping at zero moves the mean by far less than this at 3σ from 0.
        assert!((mean - 12.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn empirical_and_fixed() {
        let s = StalenessModel::Empirical { weights: vec![0.0, 0.0, 1.0] }.sampler().unwrap();
        assert_eq!(s.sample(&mut rng::stream(1, 1)), 2);
        assert_eq!(StalenessModel::Fixed { tau: 4 }.sampler().unwrap().sample(&mut rng::stream(1, 1)), 4);
        assert!(StalenessModel::Empirical { weights: vec![] }.validate().is_err());
        assert!(StalenessModel::Gaussian { mean: -1.0, sigma: 1.0 }.validate().is_err());
    }
}
