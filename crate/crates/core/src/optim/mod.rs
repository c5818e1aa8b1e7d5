//! Models, cost functions, minibatch gradient estimation and the dampened
//! model-update rule.

mod cost;
mod dataset;

pub use cost::{CostFunction, CostSpec};
pub use dataset::{BlobSpec, Dataset};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops;

/// Parameter vector together with the server epoch that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: Vec<f64>,
    pub epoch: u64,
}

impl Model {
    pub fn new(params: Vec<f64>) -> Self {
        Model { params, epoch: 0 }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }
}

/// A gradient proposal `[g, l]`: the vector and the epoch of the model it was
/// computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    pub worker_id: usize,
    pub grad: Vec<f64>,
    pub timestamp: u64,
    /// Provenance of the minibatch draw: `(worker_id << 32) | draw counter`.
    pub batch_id: u64,
}

/// Sample indices drawn uniformly with replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minibatch {
    pub indices: Vec<usize>,
}

impl Minibatch {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dataset_len: usize, size: usize) -> Self {
        let indices = if dataset_len == 0 {
            Vec::new()
        } else {
            (0..size).map(|_| rng.random_range(0..dataset_len)).collect()
        };
        Minibatch { indices }
    }

    /// Every sample of the dataset exactly once.
    pub fn full(dataset_len: usize) -> Self {
        Minibatch {
            indices: (0..dataset_len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `x_{t+1} = x_t − γ_t · Σ λ·g` over the accepted gradients.
///
/// `accepted` holds `(gradient, λ)` pairs; the returned model carries
/// `epoch + 1`.
pub fn apply_update(model: &Model, accepted: &[(&[f64], f64)], gamma_t: f64) -> Result<Model> {
    if accepted.is_empty() {
        return Err(Error::Protocol(
            "update requires at least one accepted gradient".into(),
        ));
    }
    if !gamma_t.is_finite() || gamma_t <= 0.0 {
        return Err(Error::Protocol(format!(
            "learning rate must be positive and finite, got {gamma_t}"
        )));
    }
    let d = model.dim();
    let mut direction = vec![0.0; d];
    for (i, (grad, lambda)) in accepted.iter().enumerate() {
        if grad.len() != d {
            return Err(Error::config(
                format!("accepted[{i}].grad"),
                format!("dimension {} does not match model dimension {d}", grad.len()),
            ));
        }
        vecops::axpy(*lambda, grad, &mut direction);
    }
    let mut params = model.params.clone();
    vecops::axpy(-gamma_t, &direction, &mut params);
    if !vecops::all_finite(&params) {
        return Err(Error::Numeric(format!(
            "non-finite model after update at epoch {}",
            model.epoch
        )));
    }
    Ok(Model {
        params,
        epoch: model.epoch + 1,
    })
}
