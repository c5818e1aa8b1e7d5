//! Experiment configuration: JSON schema, defaults and validation.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dampening::DampeningSpec;
use crate::error::{Error, Result};
use crate::filter::{FilterOptions, FilterState};
use crate::optim::{BlobSpec, CostFunction, CostSpec, Dataset};
use crate::sim::{StalenessModel, WorkerSpec};

pub const SCHEMA_VERSION: u32 = 1;

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_jitter() -> f64 {
    0.5
}

fn default_variance_trials() -> usize {
    64
}

/// How the base learning rate `γ` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrConfig {
    Fixed { gamma: f64 },
    /// `γ = √((Q(x₁) − Q*) / (K·T·M·dσ²))`. `Q*` defaults to the known optimum's
    /// cost, or 0; `dσ²` defaults to a minibatch-variance probe at `x₁`.
    Horizon {
        #[serde(default)]
        q_opt: Option<f64>,
        #[serde(default)]
        d_sigma2: Option<f64>,
        #[serde(default = "default_variance_trials")]
        variance_trials: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "yes")]
    pub lipschitz: bool,
    #[serde(default = "yes")]
    pub frequency: bool,
    /// Enforce `n > 3f + 1`.
    #[serde(default = "yes")]
    pub require_resilience_bound: bool,
    /// Epochs during which the Lipschitz stage is bypassed.
    #[serde(default)]
    pub warmup_epochs: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            enabled: true,
            lipschitz: true,
            frequency: true,
            require_resilience_bound: true,
            warmup_epochs: 0,
        }
    }
}

impl FilterConfig {
    pub fn options(&self) -> FilterOptions {
        FilterOptions {
            lipschitz: self.lipschitz,
            frequency: self.frequency,
            require_resilience_bound: self.require_resilience_bound,
        }
    }
}

/// Delivery ordering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Every worker, Byzantine or not, finishes after a random compute time.
    #[default]
    Fair,
    /// Byzantine messages that the filter would accept are delivered before
    /// any honest one; the others are held back.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    /// Compute time of one gradient is `U[1 − jitter, 1 + jitter)` divided
    /// by the worker's rate multiplier.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { jitter: default_jitter() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub n: usize,
    pub f: usize,
    /// Accepted gradients per model update.
    #[serde(default = "one")]
    pub m: usize,
    /// Model updates to apply.
    pub epochs: u64,
    pub seed: u64,
    pub cost: CostSpec,
    #[serde(default)]
    pub dataset: Option<BlobSpec>,
    pub workers: Vec<WorkerSpec>,
    pub staleness: StalenessModel,
    pub dampening: DampeningSpec,
    pub lr: LrConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub scheduler: SchedulerKind,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub target_grad_norm: Option<f64>,
    /// Stop once every configured target is met.
    #[serde(default = "yes")]
    pub stop_at_target: bool,
    /// Deliveries after which the run is declared stalled.
    #[serde(default)]
    pub max_deliveries: Option<u64>,
    /// Standard deviation of the Gaussian initial model; zero starts at the
    /// origin.
    #[serde(default)]
    pub init_scale: f64,
    /// Gradient Lipschitz constant for diagnostics; estimated when absent.
    #[serde(default)]
    pub lipschitz_k: Option<f64>,
    /// Keep the model parameters of every epoch in the trace.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub record_params: bool,
}

impl ExperimentConfig {
    /// All-honest configuration with every optional field at its default.
    pub fn honest(name: &str, n: usize, f: usize, cost: CostSpec, gamma: f64) -> Self {
        let dataset = cost.needs_dataset().then(BlobSpec::default);
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            n,
            f,
            m: 1,
            epochs: 1000,
            seed: 1,
            cost,
            dataset,
            workers: (0..n).map(|i| WorkerSpec::honest(i, 32)).collect(),
            staleness: StalenessModel::Zero,
            dampening: DampeningSpec::constant(),
            lr: LrConfig::Fixed { gamma },
            filter: FilterConfig::default(),
            scheduler: SchedulerKind::Fair,
            timing: TimingConfig::default(),
            replicates: 1,
            target_loss: None,
            target_grad_norm: None,
            stop_at_target: true,
            max_deliveries: None,
            init_scale: 0.0,
            lipschitz_k: None,
            record_params: false,
        }
    }

    pub fn byzantine_count(&self) -> usize {
        self.workers.iter().filter(|w| !w.behavior.is_honest()).count()
    }

    /// Delivery cap in effect.
    pub fn delivery_cap(&self) -> u64 {
        self.max_deliveries
            .unwrap_or_else(|| 20u64.saturating_mul(self.epochs).saturating_mul(self.m as u64).saturating_add(1000))
    }

    /// Fills defaults that depend on other fields so the echo is complete.
    pub fn materialize(&mut self) {
        if self.dataset.is_none() && self.cost.needs_dataset() {
            self.dataset = Some(BlobSpec::default());
        }
        if self.max_deliveries.is_none() {
            self.max_deliveries = Some(self.delivery_cap());
        }
    }

    pub fn build_cost(&self) -> Result<CostFunction> {
        let data = match (&self.dataset, self.cost.needs_dataset()) {
            (Some(spec), true) => Some(Arc::new(Dataset::blobs(spec)?)),
            (None, true) => Some(Arc::new(Dataset::blobs(&BlobSpec::default())?)),
            (_, false) => None,
        };
        self.cost.build(data)
    }

    /// Checks every invariant; the first violation is reported with its
    /// field path.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.f >= self.n {
            return Err(Error::config("f", format!("f = {} must be below n = {}", self.f, self.n)));
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be positive"));
        }
        if self.workers.len() != self.n {
            return Err(Error::config(
                "workers",
                format!("{} workers declared but n = {}", self.workers.len(), self.n),
            ));
        }
        for (i, w) in self.workers.iter().enumerate() {
            if w.worker_id != i {
                return Err(Error::config(
                    format!("workers[{i}].worker_id"),
                    format!("expected {i}, got {}", w.worker_id),
                ));
            }
            if w.batch_size == 0 {
                return Err(Error::config(format!("workers[{i}].batch_size"), "must be positive"));
            }
            w.behavior.validate(&format!("workers[{i}].behavior"))?;
        }
        let byz = self.byzantine_count();
        if byz > self.f {
            return Err(Error::config(
                "workers",
                format!("{byz} non-honest workers declared but f = {}", self.f),
            ));
        }
        if self.filter.enabled {
            FilterState::with_options(self.n, self.f, self.filter.options())?;
        }
        self.staleness.validate()?;
        self.dampening.validate()?;
        match &self.lr {
            LrConfig::Fixed { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(Error::config("lr.gamma", format!("must be positive and finite, got {gamma}")));
                }
            }
            LrConfig::Horizon {
                q_opt,
                d_sigma2,
                variance_trials,
            } => {
                if q_opt.is_some_and(|q| !q.is_finite()) {
                    return Err(Error::config("lr.q_opt", "must be finite"));
                }
                if d_sigma2.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                    return Err(Error::config("lr.d_sigma2", "must be positive and finite"));
                }
                if *variance_trials < 2 {
                    return Err(Error::config("lr.variance_trials", "must be at least 2"));
                }
            }
        }
        if !(self.timing.jitter.is_finite() && (0.0..1.0).contains(&self.timing.jitter)) {
            return Err(Error::config("timing.jitter", "must lie in [0, 1)"));
        }
        for (field, v) in [("target_loss", self.target_loss), ("target_grad_norm", self.target_grad_norm)] {
            if v.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::config("init_scale", "must be finite and >= 0"));
        }
        if self.lipschitz_k.is_some_and(|k| !(k.is_finite() && k > 0.0)) {
            return Err(Error::config("lipschitz_k", "must be positive and finite"));
        }
        if self.max_deliveries == Some(0) {
            return Err(Error::config("max_deliveries", "must be positive"));
        }
        if let Some(spec) = &self.dataset {
            if spec.dim == 0 || spec.samples == 0 {
                return Err(Error::config("dataset", "dim and samples must be positive"));
            }
            if !spec.separation.is_finite() {
                return Err(Error::config("dataset.separation", "must be finite"));
            }
        }
        self.build_cost()?;
        Ok(())
    }

    /// Parses, validates and materializes a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        cfg.materialize();
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text)
}
