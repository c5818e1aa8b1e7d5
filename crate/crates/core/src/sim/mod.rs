//! Discrete-event simulation of an asynchronous parameter server.
//!
//! Each worker repeatedly computes a gradient and delivers it. Delivery order
//! comes from an event queue keyed by simulated completion time. Staleness is
//! sampled per delivery in server epochs, and the gradient is evaluated on
//! the model that many epochs old. The server runs every delivery through the
//! filter, accumulates `M` accepted gradients, then applies one dampened
//! update.

mod queue;
mod staleness;
mod trace;
mod worker;

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

pub use queue::{Event, EventQueue};
pub use staleness::{StalenessModel, StalenessSampler};
pub use trace::{Acceptance, EpochRecord, RunSummary, RunTrace, VerdictCounts};
pub use worker::{byzantine_step, honest_step, AdversaryView, Behavior, Snapshot, WorkerSpec};

use crate::dampening::{
    horizon_base_gamma, prerequisite_check, DampeningSpec, EpochDampening, LearningRateSchedule, RateMode,
};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, LrConfig, SchedulerKind};
use crate::filter::{self, FilterState, FilterVerdict, VerdictReason};
use crate::optim::{apply_update, CostFunction, GradientMessage, Model};
use crate::rng::{self, StreamRng};
use crate::vecops;

/// Loss growth over the initial loss that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

struct Pending {
    worker_id: usize,
    grad: Vec<f64>,
    lambda: f64,
    tau: u64,
}

struct Simulator<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    cost: CostFunction,
    dampening: DampeningSpec,
    filter: Option<FilterState>,
    lr: LearningRateSchedule,
    model: Model,
    /// Recent models, newest last; long enough for the largest staleness.
    history: VecDeque<Vec<f64>>,
    history_cap: usize,
    initial_params: Vec<f64>,
    staleness: StalenessSampler,
    worker_rngs: Vec<StreamRng>,
    sched_rng: StreamRng,
    stale_rng: StreamRng,
    batch_ids: Vec<u64>,
    queue: EventQueue,
    pending: Vec<Pending>,
    total: VerdictCounts,
    since_epoch: VerdictCounts,
    honest_lipschitz_pass: u64,
    max_accepted_k: Option<f64>,
    acceptances: Vec<Acceptance>,
    records: Vec<EpochRecord>,
    initial_loss: f64,
    divergence_threshold: f64,
    last_loss: f64,
    last_grad_norm: f64,
    epochs_to_target_loss: Option<u64>,
    epochs_to_target_grad_norm: Option<u64>,
    diverged: bool,
    numeric_fault: bool,
    stalled: bool,
    reached_target: bool,
}

fn initial_params(cfg: &ExperimentConfig, dim: usize, seed: u64) -> Vec<f64> {
    if cfg.init_scale == 0.0 {
        return vec![0.0; dim];
    }
    let mut r = rng::stream(seed, rng::stream::MODEL_INIT);
    (0..dim)
        .map(|_| cfg.init_scale * r.sample::<f64, _>(StandardNormal))
        .collect()
}

fn base_gamma(cfg: &ExperimentConfig, cost: &CostFunction, x1: &[f64], seed: u64) -> Result<f64> {
    match &cfg.lr {
        LrConfig::Fixed { gamma } => Ok(*gamma),
        LrConfig::Horizon {
            q_opt,
            d_sigma2,
            variance_trials,
        } => {
            let q_x1 = cost.cost(x1)?;
            let q_opt = match (q_opt, cost.optimum()) {
                (Some(q), _) => *q,
                (None, Some(opt)) => cost.cost(opt)?,
                (None, None) => 0.0,
            };
            let k = cfg
                .lipschitz_k
                .or_else(|| cost.lipschitz_bound())
                .ok_or_else(|| Error::config("lipschitz_k", "required by the horizon rate for this cost"))?;
            let d_sigma2 = match d_sigma2 {
                Some(v) => *v,
                None => {
                    let mut probe = rng::stream(seed, rng::stream::VARIANCE_PROBE);
                    cost.grad_variance_estimate(x1, cfg.workers[0].batch_size, *variance_trials, &mut probe)?
                }
            };
            horizon_base_gamma(q_x1, q_opt, k, cfg.epochs, cfg.m, d_sigma2)
        }
    }
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Result<Self> {
        let cost = cfg.build_cost()?;
        let params = initial_params(cfg, cost.dim(), seed);
        let gamma = base_gamma(cfg, &cost, &params, seed)?;
        let mode = match cfg.lr {
            LrConfig::Fixed { .. } => RateMode::FixedBase,
            LrConfig::Horizon { .. } => RateMode::HorizonBase,
        };
        let lr = LearningRateSchedule::new(gamma, mode)?;
        let filter = if cfg.filter.enabled {
            Some(FilterState::with_options(cfg.n, cfg.f, cfg.filter.options())?)
        } else {
            None
        };
        let staleness = cfg.staleness.sampler()?;
        let history_cap = staleness.cap() as usize + 2;
        let initial_loss = cost.cost(&params)?;
        let initial_grad_norm = vecops::norm(&cost.full_gradient(&params)?);
        let divergence_threshold = if initial_loss > 0.0 {
            DIVERGENCE_FACTOR * initial_loss
        } else {
            DIVERGENCE_FACTOR
        };
        let mut history = VecDeque::with_capacity(history_cap);
        history.push_back(params.clone());
        let initial_params = params.clone();
        Ok(Simulator {
            cfg,
            seed,
            cost,
            dampening: cfg.dampening,
            filter,
            lr,
            model: Model::new(params),
            history,
            history_cap,
            initial_params,
            staleness,
            worker_rngs: (0..cfg.n).map(|i| rng::worker_stream(seed, i)).collect(),
            sched_rng: rng::stream(seed, rng::stream::SCHEDULER),
            stale_rng: rng::stream(seed, rng::stream::STALENESS),
            batch_ids: vec![0; cfg.n],
            queue: EventQueue::new(),
            pending: Vec::with_capacity(cfg.m),
            total: VerdictCounts::default(),
            since_epoch: VerdictCounts::default(),
            honest_lipschitz_pass: 0,
            max_accepted_k: None,
            acceptances: Vec::new(),
            records: Vec::with_capacity(cfg.epochs.min(1 << 20) as usize),
            initial_loss,
            divergence_threshold,
            last_loss: initial_loss,
            last_grad_norm: initial_grad_norm,
            epochs_to_target_loss: None,
            epochs_to_target_grad_norm: None,
            diverged: false,
            numeric_fault: false,
            stalled: false,
            reached_target: false,
        })
    }

    fn done(&self) -> bool {
        self.model.epoch >= self.cfg.epochs
            || self.diverged
            || self.numeric_fault
            || self.stalled
            || (self.cfg.stop_at_target && self.reached_target)
    }

    fn is_honest(&self, worker_id: usize) -> bool {
        self.cfg.workers[worker_id].behavior.is_honest()
    }

    fn dispatch(&mut self, worker_id: usize, now: f64) {
        let jitter = self.cfg.timing.jitter;
        let base = if jitter > 0.0 {
            self.sched_rng.random_range(1.0 - jitter..1.0 + jitter)
        } else {
            1.0
        };
        let rate = self.cfg.workers[worker_id].behavior.rate_multiplier();
        self.queue.push(now + base / rate, worker_id);
    }

    fn next_batch_id(&mut self, worker_id: usize) -> u64 {
        let id = self.batch_ids[worker_id];
        self.batch_ids[worker_id] += 1;
        id
    }

    /// Builds the message `worker_id` delivers now, with its staleness.
    fn build_message(&mut self, worker_id: usize) -> Result<(GradientMessage, u64)> {
        let honest = self.is_honest(worker_id);
        let epoch = self.model.epoch;
        let sampled = if honest { self.staleness.sample(&mut self.stale_rng) } else { 0 };
        let tau = sampled.min(epoch).min(self.history.len() as u64 - 1);
        let params = &self.history[self.history.len() - 1 - tau as usize];
        let snapshot = Snapshot {
            params,
            epoch: epoch - tau,
        };
        let batch_id = self.batch_ids[worker_id];
        let spec = &self.cfg.workers[worker_id];
        let rng = &mut self.worker_rngs[worker_id];
        let msg = if honest {
            honest_step(spec, &self.cost, snapshot, batch_id, rng)?
        } else {
            let cost = &self.cost;
            let view = AdversaryView {
                last_applied: self.filter.as_ref().and_then(|f| f.last_accepted_grad()),
            };
            byzantine_step(
                spec,
                snapshot,
                |r: &mut StreamRng| honest_step(spec, cost, snapshot, batch_id, r).map(|m| m.grad),
                view,
                batch_id,
                rng,
            )?
        };
        self.next_batch_id(worker_id);
        Ok((msg, tau))
    }

    fn x_prev_for_filter(&self) -> Option<&[f64]> {
        let len = self.history.len();
        (self.model.epoch >= self.cfg.filter.warmup_epochs && len >= 2).then(|| self.history[len - 2].as_slice())
    }

    /// Dry-run verdict, as an omniscient adversary would compute it.
    fn would_accept(&self, msg: &GradientMessage) -> bool {
        match &self.filter {
            Some(f) => f.evaluate(msg, &self.model.params, self.x_prev_for_filter()).accepted,
            None => true,
        }
    }

    fn deliver(&mut self, msg: GradientMessage, tau: u64) -> Result<()> {
        let worker_id = msg.worker_id;
        let honest = self.is_honest(worker_id);
        let verdict = match self.filter.take() {
            Some(mut f) => {
                let v = f.filter_pipeline(&msg, &self.model.params, self.x_prev_for_filter());
                self.filter = Some(f);
                v
            }
            None => FilterVerdict::unfiltered(),
        };
        self.total.add(honest, verdict.reason);
        self.since_epoch.add(honest, verdict.reason);
        if honest && verdict.reason != VerdictReason::RejectedLipschitz {
            self.honest_lipschitz_pass += 1;
        }
        if !verdict.accepted {
            return Ok(());
        }
        if let Some(k) = verdict.candidate_k.filter(|k| k.is_finite()) {
            self.max_accepted_k = Some(self.max_accepted_k.map_or(k, |m| m.max(k)));
        }
        self.acceptances.push(Acceptance {
            worker_id,
            honest,
            delivery: self.total.delivered(),
            epoch: self.model.epoch,
            timestamp: msg.timestamp,
            tau,
        });
        self.pending.push(Pending {
            worker_id,
            lambda: self.dampening.lambda(tau),
            grad: msg.grad,
            tau,
        });
        if self.pending.len() == self.cfg.m {
            self.apply()?;
        }
        Ok(())
    }

    fn apply(&mut self) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        let lambdas: Vec<f64> = pending.iter().map(|p| p.lambda).collect();
        let step = self.lr.adaptive_rate(&lambdas)?;
        let pairs: Vec<(&[f64], f64)> = pending.iter().map(|p| (p.grad.as_slice(), p.lambda)).collect();
        let next = match apply_update(&self.model, &pairs, step.gamma_t) {
            Ok(m) => m,
            Err(Error::Numeric(_)) => {
                self.numeric_fault = true;
                self.diverged = true;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let mut applied = vec![0.0; self.model.dim()];
        for (g, lambda) in &pairs {
            vecops::axpy(*lambda, g, &mut applied);
        }
        vecops::scale(step.mu / self.cfg.m as f64, &mut applied);
        if let Some(f) = &mut self.filter {
            f.observe_update(&applied);
        }
        debug_assert!(pending.iter().all(|p| p.worker_id < self.cfg.n));

        self.model = next;
        if self.history.len() == self.history_cap {
            let mut recycled = self.history.pop_front().expect("history is never empty");
            recycled.copy_from_slice(&self.model.params);
            self.history.push_back(recycled);
        } else {
            self.history.push_back(self.model.params.clone());
        }

        let (loss, grad_norm) = match (self.cost.cost(&self.model.params), self.cost.full_gradient(&self.model.params)) {
            (Ok(l), Ok(g)) if l.is_finite() => (l, vecops::norm(&g)),
            (Ok(_), Ok(_)) | (Err(Error::Numeric(_)), _) | (_, Err(Error::Numeric(_))) => {
                self.numeric_fault = true;
                self.diverged = true;
                (f64::NAN, f64::NAN)
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let epoch = self.model.epoch;
        self.records.push(EpochRecord {
            epoch,
            loss,
            grad_norm,
            gamma_t: step.gamma_t,
            mu_t: step.mu,
            counts: std::mem::take(&mut self.since_epoch),
            window_hash: self.filter.as_ref().map_or(0, |f| f.window_hash()),
            dampening: pending.iter().map(|p| (p.lambda, p.tau)).collect(),
            params: self.cfg.record_params.then(|| self.model.params.clone()),
        });
        self.last_loss = loss;
        self.last_grad_norm = grad_norm;
        if !self.numeric_fault && loss > self.divergence_threshold {
            self.diverged = true;
        }
        if let Some(t) = self.cfg.target_loss {
            if self.epochs_to_target_loss.is_none() && loss <= t {
                self.epochs_to_target_loss = Some(epoch);
            }
        }
        if let Some(t) = self.cfg.target_grad_norm {
            if self.epochs_to_target_grad_norm.is_none() && grad_norm <= t {
                self.epochs_to_target_grad_norm = Some(epoch);
            }
        }
        let any_target = self.cfg.target_loss.is_some() || self.cfg.target_grad_norm.is_some();
        self.reached_target = any_target
            && (self.cfg.target_loss.is_none() || self.epochs_to_target_loss.is_some())
            && (self.cfg.target_grad_norm.is_none() || self.epochs_to_target_grad_norm.is_some());
        Ok(())
    }

    fn check_cap(&mut self) -> bool {
        if self.total.delivered() >= self.cfg.delivery_cap() {
            self.stalled = true;
        }
        self.stalled
    }

    fn run_fair(&mut self) -> Result<()> {
        for w in 0..self.cfg.n {
            self.dispatch(w, 0.0);
        }
        while !self.done() && !self.check_cap() {
            let Some(ev) = self.queue.pop() else {
                self.stalled = true;
                break;
            };
            let (msg, tau) = self.build_message(ev.worker_id)?;
            self.deliver(msg, tau)?;
            self.dispatch(ev.worker_id, ev.time);
        }
        Ok(())
    }

    fn run_adversarial(&mut self) -> Result<()> {
        let byz: Vec<usize> = (0..self.cfg.n).filter(|&w| !self.is_honest(w)).collect();
        for w in 0..self.cfg.n {
            if self.is_honest(w) {
                self.dispatch(w, 0.0);
            }
        }
        while !self.done() && !self.check_cap() {
            let mut burst = true;
            while burst && !self.done() && !self.check_cap() {
                burst = false;
                for &b in &byz {
                    if self.done() || self.check_cap() {
                        break;
                    }
                    let (msg, tau) = self.build_message(b)?;
                    if self.would_accept(&msg) {
                        self.deliver(msg, tau)?;
                        burst = true;
                    }
                }
            }
            if self.done() || self.stalled {
                break;
            }
            let Some(ev) = self.queue.pop() else {
                self.stalled = true;
                break;
            };
            let (msg, tau) = self.build_message(ev.worker_id)?;
            self.deliver(msg, tau)?;
            self.dispatch(ev.worker_id, ev.time);
        }
        Ok(())
    }

    fn finish(self) -> RunTrace {
        let counts = self.total;
        let honest_seq: Vec<bool> = self.acceptances.iter().map(|a| a.honest).collect();
        let frequency_on = self.cfg.filter.enabled && self.cfg.filter.frequency;
        let lipschitz_k = self
            .cfg
            .lipschitz_k
            .or_else(|| self.cost.lipschitz_bound())
            .or(self.max_accepted_k);
        let prerequisite = lipschitz_k.map(|k| {
            let epochs: Vec<EpochDampening> = self
                .records
                .iter()
                .map(|r| EpochDampening {
                    gamma_t: r.gamma_t,
                    entries: r.dampening.clone(),
                })
                .collect();
            prerequisite_check(&epochs, k)
        });
        let summary = RunSummary {
            seed: self.seed,
            epochs_applied: self.model.epoch,
            counts,
            sl: (counts.delivered_honest > 0)
                .then(|| self.honest_lipschitz_pass as f64 / counts.delivered_honest as f64),
            drop_ratio: (counts.delivered() > 0).then(|| counts.rejected() as f64 / counts.delivered() as f64),
            byz_accepted: counts.accepted_byz,
            last_byz_acceptance: self.acceptances.iter().filter(|a| !a.honest).map(|a| a.delivery).next_back(),
            initial_loss: self.initial_loss,
            final_loss: self.last_loss,
            final_grad_norm: self.last_grad_norm,
            diverged: self.diverged,
            numeric_fault: self.numeric_fault,
            stalled: self.stalled,
            reached_target: self.reached_target,
            epochs_to_target_loss: self.epochs_to_target_loss,
            epochs_to_target_grad_norm: self.epochs_to_target_grad_norm,
            window_violations: frequency_on.then(|| filter::window_violations(&honest_seq, self.cfg.f)),
            longest_honest_drought: filter::longest_honest_drought(&honest_seq),
            mu_max: self.lr.mu_max_observed,
            chi: self.dampening.chi_bound(),
            lipschitz_k,
            prerequisite,
        };
        RunTrace {
            initial_params: self.initial_params,
            final_params: self.model.params,
            records: self.records,
            acceptances: self.acceptances,
            summary,
        }
    }
}

/// Runs one simulation with the configured seed.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<RunTrace> {
    run_simulation_seeded(cfg, cfg.seed)
}

/// Runs one simulation with an explicit seed, ignoring `cfg.seed`.
pub fn run_simulation_seeded(cfg: &ExperimentConfig, seed: u64) -> Result<RunTrace> {
    cfg.validate()?;
    let mut sim = Simulator::new(cfg, seed)?;
    match cfg.scheduler {
        SchedulerKind::Fair => sim.run_fair()?,
        SchedulerKind::Adversarial => sim.run_adversarial()?,
    }
    Ok(sim.finish())
}

/// Forces the adversarial scheduler regardless of `cfg.scheduler`.
pub fn adversarial_scheduler(cfg: &ExperimentConfig) -> Result<RunTrace> {
    let mut cfg = cfg.clone();
    cfg.scheduler = SchedulerKind::Adversarial;
    run_simulation(&cfg)
}
