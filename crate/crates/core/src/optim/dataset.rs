use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Two-class Gaussian blobs: unit-variance clouds centred at `±separation/2`
/// along the all-ones direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub dim: usize,
    pub samples: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            dim: 20,
            samples: 2000,
            separation: 2.0,
            seed: 1,
        }
    }
}

/// Row-major feature matrix with binary labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::config(
                "dataset",
                format!(
                    "{} feature values do not form {} rows of dimension {dim}",
                    features.len(),
                    labels.len()
                ),
            ));
        }
        Ok(Dataset {
            dim,
            features,
            labels,
        })
    }

    pub fn blobs(spec: &BlobSpec) -> Result<Self> {
        if spec.dim == 0 || spec.samples == 0 {
            return Err(Error::config(
                "dataset",
                "blob dataset needs positive dim and samples",
            ));
        }
        let mut rng = rng::stream(spec.seed, 0);
        let offset = 0.5 * spec.separation / (spec.dim as f64).sqrt();
        let mut features = Vec::with_capacity(spec.dim * spec.samples);
        let mut labels = Vec::with_capacity(spec.samples);
        for i in 0..spec.samples {
            let label = (i % 2) as f64;
            let shift = if label > 0.5 { offset } else { -offset };
            for _ in 0..spec.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(z + shift);
            }
            labels.push(label);
        }
        Dataset::new(spec.dim, features, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let spec = BlobSpec {
            dim: 3,
            samples: 10,
            separation: 2.0,
            seed: 9,
        };
        let a = Dataset::blobs(&spec).unwrap();
        let b = Dataset::blobs(&spec).unwrap();
        assert_eq!(a, b);
        let ones: f64 = (0..a.len()).map(|i| a.label(i)).sum();
        assert_eq!(ones, 5.0);
    }
}
