use serde::{Deserialize, Serialize};

use crate::dampening::PrerequisiteReport;
use crate::filter::VerdictReason;

/// Filter verdicts split by worker class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub delivered_honest: u64,
    pub delivered_byz: u64,
    /// Includes warm-up acceptances.
    pub accepted_honest: u64,
    pub accepted_byz: u64,
    pub warmup_honest: u64,
    pub warmup_byz: u64,
    pub rejected_lipschitz_honest: u64,
    pub rejected_lipschitz_byz: u64,
    pub rejected_frequency_honest: u64,
    pub rejected_frequency_byz: u64,
}

impl VerdictCounts {
    pub fn add(&mut self, honest: bool, reason: VerdictReason) {
        let pick = |h: &mut u64, b: &mut u64| if honest { *h += 1 } else { *b += 1 };
        pick(&mut self.delivered_honest, &mut self.delivered_byz);
        match reason {
            VerdictReason::Accepted => pick(&mut self.accepted_honest, &mut self.accepted_byz),
            VerdictReason::AcceptedWarmup => {
                pick(&mut self.accepted_honest, &mut self.accepted_byz);
                pick(&mut self.warmup_honest, &mut self.warmup_byz);
            }
            VerdictReason::RejectedLipschitz => {
                pick(&mut self.rejected_lipschitz_honest, &mut self.rejected_lipschitz_byz)
            }
            VerdictReason::RejectedFrequency => {
                pick(&mut self.rejected_frequency_honest, &mut self.rejected_frequency_byz)
            }
        }
    }

    pub fn delivered(&self) -> u64 {
        self.delivered_honest + self.delivered_byz
    }

    pub fn accepted(&self) -> u64 {
        self.accepted_honest + self.accepted_byz
    }

    pub fn rejected_lipschitz(&self) -> u64 {
        self.rejected_lipschitz_honest + self.rejected_lipschitz_byz
    }

    pub fn rejected_frequency(&self) -> u64 {
        self.rejected_frequency_honest + self.rejected_frequency_byz
    }

    pub fn rejected(&self) -> u64 {
        self.rejected_lipschitz() + self.rejected_frequency()
    }
}

/// State after one applied update, with the verdicts since the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    #[serde(with = "crate::serde_real")]
    pub loss: f64,
    #[serde(with = "crate::serde_real")]
    pub grad_norm: f64,
    pub gamma_t: f64,
    pub mu_t: f64,
    pub counts: VerdictCounts,
    pub window_hash: u64,
    /// `(λ, τ)` of each gradient in the update.
    pub dampening: Vec<(f64, u64)>,
    /// Model after the update, when the configuration asks for it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
}

/// One accepted gradient, in acceptance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub worker_id: usize,
    pub honest: bool,
    /// 1-based index of the delivery among all deliveries.
    pub delivery: u64,
    /// Server epoch when the gradient arrived.
    pub epoch: u64,
    /// Epoch of the model the gradient was computed on.
    pub timestamp: u64,
    pub tau: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs_applied: u64,
    pub counts: VerdictCounts,
    /// Share of honest deliveries that passed the Lipschitz stage.
    pub sl: Option<f64>,
    /// Rejected deliveries over all deliveries.
    pub drop_ratio: Option<f64>,
    pub byz_accepted: u64,
    pub last_byz_acceptance: Option<u64>,
    #[serde(with = "crate::serde_real")]
    pub initial_loss: f64,
    #[serde(with = "crate::serde_real")]
    pub final_loss: f64,
    #[serde(with = "crate::serde_real")]
    pub final_grad_norm: f64,
    pub diverged: bool,
    pub numeric_fault: bool,
    /// The delivery cap ran out before the epoch budget.
    pub stalled: bool,
    pub reached_target: bool,
    pub epochs_to_target_loss: Option<u64>,
    pub epochs_to_target_grad_norm: Option<u64>,
    /// Windows of `2f+1` acceptances with fewer than `f+1` honest ones; only
    /// computed when the frequency filter runs.
    pub window_violations: Option<usize>,
    pub longest_honest_drought: usize,
    #[serde(with = "crate::serde_real")]
    pub mu_max: f64,
    #[serde(with = "crate::serde_real")]
    pub chi: f64,
    #[serde(with = "crate::serde_real::option")]
    pub lipschitz_k: Option<f64>,
    pub prerequisite: Option<PrerequisiteReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub initial_params: Vec<f64>,
    pub final_params: Vec<f64>,
    pub records: Vec<EpochRecord>,
    pub acceptances: Vec<Acceptance>,
    pub summary: RunSummary,
}

impl RunTrace {
    /// Honest flag of every acceptance, in order.
    pub fn honest_sequence(&self) -> Vec<bool> {
        self.acceptances.iter().map(|a| a.honest).collect()
    }
}
