//! Worker behaviours and the gradients they propose.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{CostFunction, GradientMessage, Minibatch};

fn default_batch_size() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    Honest,
    /// Sends `−κ` times its honest gradient.
    NegateAmplify { kappa: f64 },
    /// Resends the previously applied gradient scaled by `1 + δ`,
    /// `δ ~ U[−scale, scale]`, so its empirical Lipschitz coefficient is at
    /// most `scale·‖g_q‖ / ‖x_t − x_{t−1}‖`.
    TinyLipschitzStall { scale: f64 },
    /// I.i.d. `N(0, scale²)` coordinates.
    RandomVector { scale: f64 },
    /// Submits `multiplier` times as often as an honest worker, each message
    /// built by `payload`.
    Flood { multiplier: f64, payload: Box<Behavior> },
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    /// Submission rate relative to an honest worker.
    pub fn rate_multiplier(&self) -> f64 {
        match self {
            Behavior::Flood { multiplier, .. } => *multiplier,
            _ => 1.0,
        }
    }

    /// The behaviour that builds each message.
    pub fn payload(&self) -> &Behavior {
        match self {
            Behavior::Flood { payload, .. } => payload,
            other => other,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let finite_nonneg = |v: f64, field: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.{field}"), format!("must be finite and >= 0, got {v}")))
            }
        };
        match self {
            Behavior::Honest => Ok(()),
            Behavior::NegateAmplify { kappa } => {
                if kappa.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!("{path}.kappa"), "must be finite"))
                }
            }
            Behavior::TinyLipschitzStall { scale } | Behavior::RandomVector { scale } => finite_nonneg(*scale, "scale"),
            Behavior::Flood { multiplier, payload } => {
                if !(multiplier.is_finite() && *multiplier >= 1.0) {
                    return Err(Error::config(
                        format!("{path}.multiplier"),
                        format!("must be finite and >= 1, got {multiplier}"),
                    ));
                }
                if matches!(**payload, Behavior::Flood { .. }) {
                    return Err(Error::config(format!("{path}.payload"), "flood cannot wrap another flood"));
                }
                payload.validate(&format!("{path}.payload"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSpec {
    pub worker_id: usize,
    pub behavior: Behavior,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl WorkerSpec {
    pub fn honest(worker_id: usize, batch_size: usize) -> Self {
        WorkerSpec {
            worker_id,
            behavior: Behavior::Honest,
            batch_size,
        }
    }

    pub fn byzantine(worker_id: usize, behavior: Behavior, batch_size: usize) -> Self {
        WorkerSpec {
            worker_id,
            behavior,
            batch_size,
        }
    }
}

/// A model version a worker computes on.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub params: &'a [f64],
    pub epoch: u64,
}

/// What an omniscient adversary reads from the server.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdversaryView<'a> {
    /// Gradient applied at the previous epoch.
    pub last_applied: Option<&'a [f64]>,
}

/// Gradient estimate on a fresh minibatch, stamped with the snapshot epoch.
pub fn honest_step<R: Rng + ?Sized>(
    worker: &WorkerSpec,
    cost: &CostFunction,
    snapshot: Snapshot<'_>,
    batch_id: u64,
    rng: &mut R,
) -> Result<GradientMessage> {
    let batch = Minibatch::sample(rng, cost.dataset_len(), worker.batch_size);
    let grad = cost.grad_estimate(snapshot.params, &batch)?;
    Ok(GradientMessage {
        worker_id: worker.worker_id,
        grad,
        timestamp: snapshot.epoch,
        batch_id,
    })
}

/// Message of a non-honest worker. `honest_grad` is what an honest worker
/// would send on the same snapshot; it is computed only for behaviours that
/// read it.
pub fn byzantine_step<R: Rng + ?Sized>(
    worker: &WorkerSpec,
    snapshot: Snapshot<'_>,
    honest_grad: impl FnOnce(&mut R) -> Result<Vec<f64>>,
    view: AdversaryView<'_>,
    batch_id: u64,
    rng: &mut R,
) -> Result<GradientMessage> {
    let dim = snapshot.params.len();
    let grad = match worker.behavior.payload() {
        Behavior::Honest => honest_grad(rng)?,
        Behavior::NegateAmplify { kappa } => honest_grad(rng)?.into_iter().map(|g| -kappa * g).collect(),
        Behavior::TinyLipschitzStall { scale } => match view.last_applied {
            Some(g_q) => {
                let delta = if *scale > 0.0 { rng.random_range(-scale..=*scale) } else { 0.0 };
                g_q.iter().map(|g| (1.0 + delta) * g).collect()
            }
            None => honest_grad(rng)?,
        },
        Behavior::RandomVector { scale } => (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        Behavior::Flood { .. } => unreachable!("payload() unwraps one flood level and nesting is rejected"),
    };
    Ok(GradientMessage {
        worker_id: worker.worker_id,
        grad,
        timestamp: snapshot.epoch,
        batch_id,
    })
}
