use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Minibatch};
use crate::error::{Error, Result};
use crate::vecops;

/// Cost descriptor as it appears in an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `Q(x) = curvature/2 · ‖x − center‖²`; the center defaults to all ones.
    QuadraticBowl {
        dim: usize,
        curvature: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// Mean logistic loss over the configured dataset.
    LogisticRegression,
    /// One tanh hidden layer with a single logit output, cross-entropy loss.
    TinyMlp { hidden: usize },
}

impl CostSpec {
    pub fn needs_dataset(&self) -> bool {
        !matches!(self, CostSpec::QuadraticBowl { .. })
    }

    pub fn build(&self, data: Option<Arc<Dataset>>) -> Result<CostFunction> {
        let need_data = || {
            data.clone()
                .ok_or_else(|| Error::config("dataset", "this cost function needs a dataset"))
        };
        match self {
            CostSpec::QuadraticBowl {
                dim,
                curvature,
                center,
            } => {
                if *dim == 0 {
                    return Err(Error::config("cost.dim", "must be positive"));
                }
                if !curvature.is_finite() || *curvature <= 0.0 {
                    return Err(Error::config("cost.curvature", "must be positive and finite"));
                }
                let center = match center {
                    Some(c) if c.len() != *dim => {
                        return Err(Error::config(
                            "cost.center",
                            format!("length {} does not match dim {dim}", c.len()),
                        ))
                    }
                    Some(c) => c.clone(),
                    None => vec![1.0; *dim],
                };
                Ok(CostFunction::QuadraticBowl {
                    center,
                    curvature: *curvature,
                })
            }
            CostSpec::LogisticRegression => Ok(CostFunction::LogisticRegression { data: need_data()? }),
            CostSpec::TinyMlp { hidden } => {
                if *hidden == 0 {
                    return Err(Error::config("cost.hidden", "must be positive"));
                }
                Ok(CostFunction::TinyMlp {
                    data: need_data()?,
                    hidden: *hidden,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum CostFunction {
    QuadraticBowl { center: Vec<f64>, curvature: f64 },
    LogisticRegression { data: Arc<Dataset> },
    TinyMlp { data: Arc<Dataset>, hidden: usize },
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit: `log(1 + e^z) − y·z`.
fn logit_loss(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

impl CostFunction {
    pub fn dim(&self) -> usize {
        match self {
            CostFunction::QuadraticBowl { center, .. } => center.len(),
            CostFunction::LogisticRegression { data } => data.dim(),
            CostFunction::TinyMlp { data, hidden } => hidden * data.dim() + 2 * hidden + 1,
        }
    }

    /// Number of samples minibatches draw from; zero for the analytic bowl.
    pub fn dataset_len(&self) -> usize {
        match self {
            CostFunction::QuadraticBowl { .. } => 0,
            CostFunction::LogisticRegression { data } | CostFunction::TinyMlp { data, .. } => {
                data.len()
            }
        }
    }

    /// Known minimiser, when one is available in closed form.
    pub fn optimum(&self) -> Option<&[f64]> {
        match self {
            CostFunction::QuadraticBowl { center, .. } => Some(center),
            _ => None,
        }
    }

    /// Upper bound on the Lipschitz constant of the gradient, when cheaply
    /// available. The logistic bound is `‖X‖₂² / (4N)` by power iteration.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            CostFunction::QuadraticBowl { curvature, .. } => Some(*curvature),
            CostFunction::LogisticRegression { data } => {
                let d = data.dim();
                let mut v = vec![1.0 / (d as f64).sqrt(); d];
                let mut eig = 0.0;
                for _ in 0..100 {
                    let mut w = vec![0.0; d];
                    for i in 0..data.len() {
                        let row = data.row(i);
                        vecops::axpy(vecops::dot(row, &v), row, &mut w);
                    }
                    eig = vecops::norm(&w);
                    if eig == 0.0 {
                        break;
                    }
                    vecops::scale(1.0 / eig, &mut w);
                    v = w;
                }
                Some(eig / (4.0 * data.len() as f64))
            }
            CostFunction::TinyMlp { .. } => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::config(
                "model",
                format!("dimension {} does not match cost dimension {}", x.len(), self.dim()),
            ));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Minibatch) -> Result<()> {
        let len = self.dataset_len();
        if len == 0 {
            return Ok(());
        }
        if batch.is_empty() {
            return Err(Error::config("batch", "minibatch is empty"));
        }
        if let Some(&bad) = batch.indices.iter().find(|&&i| i >= len) {
            return Err(Error::config(
                "batch",
                format!("sample index {bad} out of range for {len} samples"),
            ));
        }
        Ok(())
    }

    fn finite(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
        if vecops::all_finite(&v) {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("non-finite {what}")))
        }
    }

    pub fn cost(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let value = match self {
            CostFunction::QuadraticBowl { center, curvature } => {
                0.5 * curvature * vecops::dist(x, center).powi(2)
            }
            CostFunction::LogisticRegression { data } => {
                let total: f64 = (0..data.len())
                    .map(|i| logit_loss(vecops::dot(x, data.row(i)), data.label(i)))
                    .sum();
                total / data.len() as f64
            }
            CostFunction::TinyMlp { data, hidden } => {
                let mut scratch = vec![0.0; *hidden];
                let total: f64 = (0..data.len())
                    .map(|i| {
                        let z = mlp_forward(x, data.row(i), *hidden, &mut scratch);
                        logit_loss(z, data.label(i))
                    })
                    .sum();
                total / data.len() as f64
            }
        };
        Ok(value)
    }

    /// Exact gradient over the whole dataset.
    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let g = match self {
            CostFunction::QuadraticBowl { center, curvature } => {
                x.iter().zip(center).map(|(a, b)| curvature * (a - b)).collect()
            }
            _ => self.sample_gradient(x, 0..self.dataset_len()),
        };
        Self::finite(g, "full gradient")
    }

    /// Minibatch estimate `G(x, ξ)`: the mean of per-sample gradients, so its
    /// expectation over uniform batches is the full gradient.
    pub fn grad_estimate(&self, x: &[f64], batch: &Minibatch) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_batch(batch)?;
        let g = match self {
            CostFunction::QuadraticBowl { .. } => return self.full_gradient(x),
            _ => self.sample_gradient(x, batch.indices.iter().copied()),
        };
        Self::finite(g, "gradient estimate")
    }

    fn sample_gradient(&self, x: &[f64], samples: impl Iterator<Item = usize>) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut count = 0usize;
        match self {
            CostFunction::QuadraticBowl { .. } => unreachable!("bowl gradient is analytic"),
            CostFunction::LogisticRegression { data } => {
                for i in samples {
                    let row = data.row(i);
                    let residual = sigmoid(vecops::dot(x, row)) - data.label(i);
                    vecops::axpy(residual, row, &mut g);
                    count += 1;
                }
            }
            CostFunction::TinyMlp { data, hidden } => {
                let mut act = vec![0.0; *hidden];
                for i in samples {
                    mlp_backward(x, data.row(i), data.label(i), *hidden, &mut act, &mut g);
                    count += 1;
                }
            }
        }
        if count > 0 {
            vecops::scale(1.0 / count as f64, &mut g);
        }
        g
    }

    /// Sample mean of `‖G(x, ξ) − ∇Q(x)‖²` over `trials` independent batches.
    pub fn grad_variance_estimate<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        batch_size: usize,
        trials: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if trials < 2 {
            return Err(Error::config("trials", "variance estimate needs at least 2 trials"));
        }
        let full = self.full_gradient(x)?;
        let mut total = 0.0;
        for _ in 0..trials {
            let batch = Minibatch::sample(rng, self.dataset_len(), batch_size);
            let g = self.grad_estimate(x, &batch)?;
            total += vecops::dist(&g, &full).powi(2);
        }
        let v = total / trials as f64;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("non-finite variance estimate".into()))
        }
    }
}

// Parameter layout for the tiny MLP with input width `d` and `h` hidden units:
// [ W1 (h × d, row-major) | b1 (h) | w2 (h) | b2 ].

fn mlp_forward(x: &[f64], input: &[f64], hidden: usize, act: &mut [f64]) -> f64 {
    let d = input.len();
    let (w1, rest) = x.split_at(hidden * d);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    for j in 0..hidden {
        act[j] = (vecops::dot(&w1[j * d..(j + 1) * d], input) + b1[j]).tanh();
    }
    vecops::dot(w2, act) + b2[0]
}

/// Adds the per-sample gradient into `grad`.
fn mlp_backward(x: &[f64], input: &[f64], label: f64, hidden: usize, act: &mut [f64], grad: &mut [f64]) {
    let d = input.len();
    let z = mlp_forward(x, input, hidden, act);
    let dz = sigmoid(z) - label;
    let w2 = &x[hidden * d + hidden..hidden * d + 2 * hidden];
    let (gw1, rest) = grad.split_at_mut(hidden * d);
    let (gb1, rest) = rest.split_at_mut(hidden);
    let (gw2, gb2) = rest.split_at_mut(hidden);
    for j in 0..hidden {
        gw2[j] += dz * act[j];
        let da = dz * w2[j] * (1.0 - act[j] * act[j]);
        gb1[j] += da;
        vecops::axpy(da, input, &mut gw1[j * d..(j + 1) * d]);
    }
    gb2[0] += dz;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl() -> CostFunction {
        CostSpec::QuadraticBowl {
            dim: 2,
            curvature: 1.0,
            center: Some(vec![0.0, 0.0]),
        }
        .build(None)
        .unwrap()
    }

    #[test]
    fn bowl_gradient_is_exact_for_any_batch() {
        let c = bowl();
        let batch = Minibatch { indices: vec![5, 7] };
        assert_eq!(c.grad_estimate(&[3.0, -4.0], &batch).unwrap(), vec![3.0, -4.0]);
        assert_eq!(c.grad_estimate(&[0.0, 0.0], &batch).unwrap(), vec![0.0, 0.0]);
        assert_eq!(c.full_gradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn bowl_variance_is_zero() {
        let c = bowl();
        let mut rng = crate::rng::stream(1, 1);
        assert_eq!(c.grad_variance_estimate(&[1.0, 2.0], 4, 10, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn variance_needs_two_trials() {
        let c = bowl();
        let mut rng = crate::rng::stream(1, 1);
        assert!(c.grad_variance_estimate(&[1.0, 2.0], 4, 1, &mut rng).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let c = bowl();
        assert!(matches!(c.cost(&[1.0]), Err(Error::Config { .. })));
        assert!(matches!(c.full_gradient(&[1.0, 2.0, 3.0]), Err(Error::Config { .. })));
    }

    #[test]
    fn out_of_range_batch_rejected() {
        let data = Arc::new(Dataset::blobs(&super::super::BlobSpec::default()).unwrap());
        let c = CostSpec::LogisticRegression.build(Some(data)).unwrap();
        let x = vec![0.0; c.dim()];
        let batch = Minibatch { indices: vec![1_000_000] };
        assert!(matches!(c.grad_estimate(&x, &batch), Err(Error::Config { .. })));
    }

    #[test]
    fn logistic_loss_at_zero_is_ln2() {
        let data = Arc::new(Dataset::blobs(&super::super::BlobSpec::default()).unwrap());
        let c = CostSpec::LogisticRegression.build(Some(data)).unwrap();
        let q = c.cost(&vec![0.0; c.dim()]).unwrap();
        assert!((q - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }
}
