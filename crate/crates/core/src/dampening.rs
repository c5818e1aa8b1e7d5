//! Staleness dampening: the `Λ(τ)` weights, their `χ` bound, the adaptive
//! learning rate `γ_t = γ·μ_t` and the diagnostics built on them.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the dampening function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DampeningKind {
    /// `Λ ≡ 1`. Not strictly decreasing; admissible only as the undampened
    /// baseline.
    Constant,
    /// `Λ(τ) = 1/(1+τ)`.
    Inverse,
    /// `Λ(τ) = exp(−α·τ^{1/β})`.
    Exponential { alpha: f64, beta: f64 },
}

fn default_tau_max() -> u64 {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampeningSpec {
    #[serde(flatten)]
    pub kind: DampeningKind,
    /// Horizon used wherever a supremum has to be scanned numerically.
    #[serde(default = "default_tau_max")]
    pub tau_max: u64,
}

impl DampeningSpec {
    pub fn constant() -> Self {
        Self::from_kind(DampeningKind::Constant)
    }

    pub fn inverse() -> Self {
        Self::from_kind(DampeningKind::Inverse)
    }

    pub fn exponential(alpha: f64, beta: f64) -> Self {
        Self::from_kind(DampeningKind::Exponential { alpha, beta })
    }

    fn from_kind(kind: DampeningKind) -> Self {
        DampeningSpec {
            kind,
            tau_max: default_tau_max(),
        }
    }

    /// Strictly decreasing with `Λ(0) = 1`.
    pub fn is_conforming(&self) -> bool {
        !matches!(self.kind, DampeningKind::Constant)
    }

    pub fn validate(&self) -> Result<()> {
        if let DampeningKind::Exponential { alpha, beta } = self.kind {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::config("dampening.alpha", "must be positive and finite"));
            }
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::config("dampening.beta", "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `exp(a=0.2,b=1)`.
    pub fn label(&self) -> String {
        match self.kind {
            DampeningKind::Constant => "constant".into(),
            DampeningKind::Inverse => "inverse".into(),
            DampeningKind::Exponential { alpha, beta } => format!("exp(a={alpha},b={beta})"),
        }
    }

    pub fn lambda(&self, tau: u64) -> f64 {
        self.lambda_at(tau as f64)
    }

    /// `Λ` on the real half-line; panics on negative staleness.
    pub fn lambda_at(&self, tau: f64) -> f64 {
        assert!(tau >= 0.0, "staleness must be nonnegative, got {tau}");
        match self.kind {
            DampeningKind::Constant => 1.0,
            DampeningKind::Inverse => 1.0 / (1.0 + tau),
            DampeningKind::Exponential { alpha, beta } => (-alpha * tau.powf(1.0 / beta)).exp(),
        }
    }

    /// `Λ⁻¹(ν)` for conforming kinds and `ν ∈ (0, 1]`.
    pub fn inverse_at(&self, nu: f64) -> Option<f64> {
        if !(nu > 0.0 && nu <= 1.0) {
            return None;
        }
        match self.kind {
            DampeningKind::Constant => None,
            DampeningKind::Inverse => Some(1.0 / nu - 1.0),
            DampeningKind::Exponential { alpha, beta } => Some((-nu.ln() / alpha).powf(beta)),
        }
    }

    /// `χ = sup_{τ ≥ 0} τ·Λ(τ)`.
    ///
    /// Exponential: `(β/(eα))^β`, attained at `τ = (β/α)^β`. Inverse: the
    /// supremum 1 is approached as `τ → ∞`. Constant: `+∞`.
    pub fn chi_bound(&self) -> f64 {
        match self.kind {
            DampeningKind::Constant => f64::INFINITY,
            DampeningKind::Inverse => 1.0,
            DampeningKind::Exponential { alpha, beta } => (beta / (E * alpha)).powf(beta),
        }
    }

    /// Where `τ·Λ(τ)` peaks, if it peaks at a finite staleness.
    pub fn chi_argmax(&self) -> Option<f64> {
        match self.kind {
            DampeningKind::Exponential { alpha, beta } => Some((beta / alpha).powf(beta)),
            _ => None,
        }
    }
}

/// Groups a multiset of `λ` values into `(λ, |G_{tλ}|)` pairs, largest `λ`
/// first. Values are grouped by exact equality.
pub fn partition_by_lambda(lambdas: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted: Vec<f64> = lambdas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for l in sorted {
        match groups.last_mut() {
            Some((v, c)) if v.to_bits() == l.to_bits() => *c += 1,
            _ => groups.push((l, 1)),
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// User-supplied base rate.
    FixedBase,
    /// Base rate computed from `Q(x₁)`, `K`, `T`, `M` and `dσ²`.
    HorizonBase,
}

/// Result of one adaptive-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateStep {
    pub mu: f64,
    pub gamma_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningRateSchedule {
    pub base_gamma: f64,
    pub mode: RateMode,
    pub mu_max_observed: f64,
}

impl LearningRateSchedule {
    pub fn new(base_gamma: f64, mode: RateMode) -> Result<Self> {
        if !(base_gamma > 0.0 && base_gamma.is_finite()) {
            return Err(Error::config("lr.gamma", "base learning rate must be positive and finite"));
        }
        Ok(LearningRateSchedule {
            base_gamma,
            mode,
            mu_max_observed: 0.0,
        })
    }

    /// `μ_t = M / Σλ` over the `M` accepted gradients; returns `γ·μ_t`.
    ///
    /// The sum runs over the values in sorted order so the result does not
    /// depend on message order.
    pub fn adaptive_rate(&mut self, lambdas: &[f64]) -> Result<RateStep> {
        if lambdas.is_empty() {
            return Err(Error::Protocol("adaptive rate needs at least one λ".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return Err(Error::Protocol(format!("λ must lie in (0, 1], got {bad}")));
        }
        let mut sorted = lambdas.to_vec();
        sorted.sort_by(f64::total_cmp);
        let weight: f64 = sorted.iter().sum();
        let mu = lambdas.len() as f64 / weight;
        self.mu_max_observed = self.mu_max_observed.max(mu);
        Ok(RateStep {
            mu,
            gamma_t: self.base_gamma * mu,
        })
    }
}

/// `γ = √((Q(x₁) − Q(x*)) / (K·T·M·dσ²))`.
pub fn horizon_base_gamma(q_x1: f64, q_opt: f64, k: f64, t: u64, m: usize, d_sigma2: f64) -> Result<f64> {
    let denom = k * t as f64 * m as f64 * d_sigma2;
    let num = q_x1 - q_opt;
    if !num.is_finite() || num <= 0.0 {
        return Err(Error::config(
            "lr",
            format!("Q(x1) - Q(x*) = {num} must be positive (Q(x1) = {q_x1}, Q(x*) = {q_opt})"),
        ));
    }
    if !denom.is_finite() || denom <= 0.0 {
        return Err(Error::config(
            "lr",
            format!("K*T*M*d_sigma2 = {denom} must be positive (K = {k}, T = {t}, M = {m}, d_sigma2 = {d_sigma2})"),
        ));
    }
    Ok((num / denom).sqrt())
}

/// The dampening inputs of one applied epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDampening {
    pub gamma_t: f64,
    /// `(λ, τ)` for every gradient in `G_t`; `τ` doubles as `Λ⁻¹(λ)`.
    pub entries: Vec<(f64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrerequisiteReport {
    pub holds: bool,
    /// Smallest `RHS − LHS` over the checked epochs; absent when there were
    /// none.
    #[serde(with = "crate::serde_real::option")]
    pub worst_residual: Option<f64>,
    pub violations: usize,
    pub epochs_checked: usize,
}

/// Evaluates the step-size prerequisite of the convergence bound on every
/// epoch of a trace:
///
/// ```text
/// Σ_{λ∈Λ_t} λ²|Λ_t| { Kγ_t² + Σ_{s≥1} Σ_{ν∈Λ_{t+s}} γ_{t+s} K² ν |G_{t+s,ν}| Λ⁻¹(ν) 𝕀(s ≤ Λ⁻¹(ν)) γ_t² }
///     ≤ Σ_{λ∈Λ_t} γ_t λ / |G_{tλ}|
/// ```
///
/// `Λ_t` is the set of distinct `λ` values of epoch `t`. The inner sum is
/// exact once `s` exceeds the largest recorded staleness, because the
/// indicator vanishes from there on; epochs past the end of the trace
/// contribute nothing.
pub fn prerequisite_check(epochs: &[EpochDampening], k: f64) -> PrerequisiteReport {
    let horizon = epochs
        .iter()
        .flat_map(|e| e.entries.iter().map(|&(_, tau)| tau))
        .max()
        .unwrap_or(0) as usize;

    // Σ_{ν} γ_s K² ν |G_ν| Λ⁻¹(ν) restricted to entries with Λ⁻¹(ν) ≥ s is
    // evaluated per message, which equals the grouped form.
    let mut worst: Option<f64> = None;
    let mut violations = 0usize;
    for (t, epoch) in epochs.iter().enumerate() {
        let lambdas: Vec<f64> = epoch.entries.iter().map(|&(l, _)| l).collect();
        let groups = partition_by_lambda(&lambdas);
        let distinct = groups.len() as f64;
        let lambda_sq: f64 = groups.iter().map(|(l, _)| l * l).sum();

        let mut future = 0.0;
        for s in 1..=horizon {
            let Some(later) = epochs.get(t + s) else { break };
            for &(nu, tau) in &later.entries {
                if s as u64 <= tau {
                    future += later.gamma_t * k * k * nu * tau as f64;
                }
            }
        }
        let g2 = epoch.gamma_t * epoch.gamma_t;
        let lhs = lambda_sq * distinct * (k * g2 + future * g2);
        let rhs: f64 = groups
            .iter()
            .map(|&(l, c)| epoch.gamma_t * l / c as f64)
            .sum();
        let residual = rhs - lhs;
        if residual < 0.0 || residual.is_nan() {
            violations += 1;
        }
        worst = Some(match worst {
            Some(w) if w <= residual => w,
            _ => residual,
        });
    }
    PrerequisiteReport {
        holds: violations == 0,
        worst_residual: worst,
        violations,
        epochs_checked: epochs.len(),
    }
}

/// Per-staleness outcome of comparing `Λ₁ = 1/(1+τ)` against
/// `Λ₂ = exp(−α·τ^{1/β})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauComparison {
    pub tau: u64,
    /// `β/e < α`.
    pub lower_holds: bool,
    /// `ln(τ+1) / τ^{1/β}`; undefined at `τ = 0`.
    pub alpha_upper: Option<f64>,
    /// `α ≤ ln(τ+1) / τ^{1/β}`.
    pub upper_holds: bool,
    /// Both conditions: the exponential function converges faster here.
    pub exponential_dominates: bool,
    /// `τ/(τ+1) ≥ (β/(eα))^β`.
    pub chi_inverse_ge_chi_exponential: bool,
    /// `1/(τ+1) ≤ exp(−α·τ^{1/β})`.
    pub mu_inverse_ge_mu_exponential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampeningComparison {
    pub alpha: f64,
    pub beta: f64,
    pub per_tau: Vec<TauComparison>,
    /// Longest contiguous run of `τ` on which the exponential function
    /// dominates, inclusive.
    pub admissible_interval: Option<(u64, u64)>,
    /// `1/((eα/β)^β − 1)`: the `χ` ordering flips at this staleness. Absent
    /// when `α ≤ β/e`.
    pub chi_threshold_tau: Option<f64>,
}

pub fn dampening_compare(alpha: f64, beta: f64, taus: std::ops::RangeInclusive<u64>) -> Result<DampeningComparison> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::config("dampening", "alpha and beta must be positive and finite"));
    }
    let lower_holds = beta / E < alpha;
    let chi_exp = (beta / (E * alpha)).powf(beta);
    let mut per_tau = Vec::new();
    for tau in taus {
        let t = tau as f64;
        let alpha_upper = (tau > 0).then(|| (t + 1.0).ln() / t.powf(1.0 / beta));
        let upper_holds = alpha_upper.is_some_and(|u| alpha <= u);
        per_tau.push(TauComparison {
            tau,
            lower_holds,
            alpha_upper,
            upper_holds,
            exponential_dominates: lower_holds && upper_holds,
            chi_inverse_ge_chi_exponential: t / (t + 1.0) >= chi_exp,
            mu_inverse_ge_mu_exponential: 1.0 / (t + 1.0) <= (-alpha * t.powf(1.0 / beta)).exp(),
        });
    }

    let mut best: Option<(u64, u64)> = None;
    let mut run: Option<(u64, u64)> = None;
    for c in &per_tau {
        if c.exponential_dominates {
            run = Some(match run {
                Some((lo, _)) => (lo, c.tau),
                None => (c.tau, c.tau),
            });
            let (lo, hi) = run.unwrap();
            if best.is_none_or(|(blo, bhi)| hi - lo > bhi - blo) {
                best = Some((lo, hi));
            }
        } else {
            run = None;
        }
    }

    let ratio = (E * alpha / beta).powf(beta);
    Ok(DampeningComparison {
        alpha,
        beta,
        per_tau,
        admissible_interval: best,
        chi_threshold_tau: (ratio > 1.0).then(|| 1.0 / (ratio - 1.0)),
    })
}

/// The `α` values for which the exponential function dominates on every
/// `τ ∈ [lo, hi]`: `(β/e, min_τ ln(τ+1)/τ^{1/β}]`, or `None` when empty.
pub fn admissible_alpha_range(beta: f64, lo: u64, hi: u64) -> Option<(f64, f64)> {
    let lower = beta / E;
    let upper = (lo.max(1)..=hi)
        .map(|tau| {
            let t = tau as f64;
            (t + 1.0).ln() / t.powf(1.0 / beta)
        })
        .fold(f64::INFINITY, f64::min);
    (upper > lower).then_some((lower, upper))
}
