//! Byzantine-resilient filtering: an empirical-Lipschitz filter followed by
//! a frequency filter.
//!
//! The Lipschitz filter compares the server-side coefficient of a candidate,
//! `‖g_p − g_q‖ / ‖x_t − x_{t−1}‖` with `g_q` the previously applied
//! gradient, against the `(n−f)`-th smallest of the per-worker coefficients.
//! The frequency filter keeps the ids of the last `2f` accepted gradients and
//! rejects a candidate if, with the candidate appended, the `f` most frequent
//! workers account for more than `f` entries.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::GradientMessage;
use crate::vecops;

/// `‖g_new − g_old‖ / ‖x_new − x_old‖`, with `0/0 = 0` and `c/0 = +∞`.
pub fn empirical_lipschitz(g_new: &[f64], g_old: &[f64], x_new: &[f64], x_old: &[f64]) -> Result<f64> {
    let d = g_new.len();
    if g_old.len() != d || x_new.len() != d || x_old.len() != d {
        return Err(Error::config(
            "gradient",
            format!(
                "dimension mismatch: g_new {d}, g_old {}, x_new {}, x_old {}",
                g_old.len(),
                x_new.len(),
                x_old.len()
            ),
        ));
    }
    let num = vecops::dist(g_new, g_old);
    let den = vecops::dist(x_new, x_old);
    Ok(if den == 0.0 {
        if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        num / den
    })
}

/// The `(n−f)`-th smallest of exactly `n` values (1-based order statistic).
pub fn lipschitz_quantile(values: &[f64], n: usize, f: usize) -> Result<f64> {
    if values.len() != n {
        return Err(Error::config(
            "filter",
            format!("quantile needs exactly n = {n} values, got {}", values.len()),
        ));
    }
    if f >= n {
        return Err(Error::config("filter.f", format!("f = {f} must be below n = {n}")));
    }
    let mut scratch = values.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(n - f - 1, f64::total_cmp);
    Ok(*kth)
}

/// Accepted honest updates over delivered updates; absent when nothing was
/// delivered.
pub fn slowdown(accepted_honest: u64, total_delivered: u64) -> Option<f64> {
    (total_delivered > 0).then(|| accepted_honest as f64 / total_delivered as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRecord {
    pub worker_id: usize,
    /// Last gradient of this worker that the server applied.
    pub last_grad: Option<Vec<f64>>,
    pub last_model_epoch: Option<u64>,
    /// Most recent empirical coefficient measured for this worker.
    pub k_hat: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictReason {
    Accepted,
    RejectedLipschitz,
    RejectedFrequency,
    /// Accepted before the server had a previous update to compare against.
    AcceptedWarmup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reason: VerdictReason,
    pub candidate_k: Option<f64>,
    pub threshold_k: Option<f64>,
}

impl FilterVerdict {
    /// Verdict used when filtering is disabled.
    pub fn unfiltered() -> Self {
        Self::new(VerdictReason::Accepted, None, None)
    }

    fn new(reason: VerdictReason, candidate_k: Option<f64>, threshold_k: Option<f64>) -> Self {
        FilterVerdict {
            accepted: matches!(reason, VerdictReason::Accepted | VerdictReason::AcceptedWarmup),
            reason,
            candidate_k,
            threshold_k,
        }
    }
}

/// Which sub-filters run and whether `n > 3f + 1` is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub lipschitz: bool,
    pub frequency: bool,
    pub require_resilience_bound: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            lipschitz: true,
            frequency: true,
            require_resilience_bound: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LipschitzOutcome {
    Disabled,
    Warmup,
    Malformed,
    Checked { k: f64, threshold: f64, passed: bool },
}

/// Server-side filter state. Single writer: the server loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    n: usize,
    f: usize,
    options: FilterOptions,
    records: Vec<LipschitzRecord>,
    window: VecDeque<usize>,
    last_accepted_grad: Option<Vec<f64>>,
}

impl FilterState {
    /// Filter for `n` workers tolerating `f` Byzantine ones; requires
    /// `n > 3f + 1`.
    pub fn new(n: usize, f: usize) -> Result<Self> {
        Self::with_options(n, f, FilterOptions::default())
    }

    pub fn with_options(n: usize, f: usize, options: FilterOptions) -> Result<Self> {
        if options.require_resilience_bound && n <= 3 * f + 1 {
            return Err(Error::config(
                "n",
                format!("n must exceed 3f+1 (n = {n}, f = {f})"),
            ));
        }
        if f >= n {
            return Err(Error::config("f", format!("f = {f} must be below n = {n}")));
        }
        if options.frequency && n < 2 * f + 1 {
            return Err(Error::config(
                "n",
                format!("the frequency filter needs n >= 2f+1 (n = {n}, f = {f})"),
            ));
        }
        Ok(FilterState {
            n,
            f,
            options,
            records: (0..n)
                .map(|worker_id| LipschitzRecord {
                    worker_id,
                    last_grad: None,
                    last_model_epoch: None,
                    k_hat: None,
                })
                .collect(),
            window: VecDeque::with_capacity(2 * f + 1),
            last_accepted_grad: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn options(&self) -> FilterOptions {
        self.options
    }

    pub fn records(&self) -> &[LipschitzRecord] {
        &self.records
    }

    /// Worker ids of the last (at most `2f`) accepted gradients, oldest first.
    pub fn window(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.window.iter().copied()
    }

    pub fn window_hash(&self) -> u64 {
        vecops::fnv1a(self.window.iter().map(|&w| w as u64))
    }

    /// The gradient applied at the previous epoch (`g_q`).
    pub fn last_accepted_grad(&self) -> Option<&[f64]> {
        self.last_accepted_grad.as_deref()
    }

    /// Overwrites a worker's coefficient. Used to stage filter states.
    pub fn set_k_hat(&mut self, worker_id: usize, k: Option<f64>) {
        self.records[worker_id].k_hat = k;
    }

    /// Replaces the window contents. Used to stage filter states.
    pub fn set_window(&mut self, ids: &[usize]) {
        self.window = ids.iter().copied().collect();
        while self.window.len() > 2 * self.f {
            self.window.pop_front();
        }
    }

    /// Records the gradient the server just applied; it becomes `g_q` for the
    /// next epoch.
    pub fn observe_update(&mut self, applied: &[f64]) {
        match &mut self.last_accepted_grad {
            Some(g) if g.len() == applied.len() => g.copy_from_slice(applied),
            slot => *slot = Some(applied.to_vec()),
        }
    }

    /// Threshold for a candidate from `sender` with coefficient `k`: the
    /// `(n−f)`-th smallest of the per-worker coefficients, the sender's own
    /// entry taking the fresh value. Absent entries count as the largest
    /// present one.
    fn threshold_for(&self, sender: usize, k: f64) -> f64 {
        let fill = self
            .records
            .iter()
            .filter(|r| r.worker_id != sender)
            .filter_map(|r| r.k_hat)
            .fold(k, f64::max);
        let values: Vec<f64> = self
            .records
            .iter()
            .map(|r| if r.worker_id == sender { k } else { r.k_hat.unwrap_or(fill) })
            .collect();
        lipschitz_quantile(&values, self.n, self.f).expect("n values and f < n by construction")
    }

    fn lipschitz_outcome(&self, msg: &GradientMessage, x_t: &[f64], x_prev: Option<&[f64]>) -> LipschitzOutcome {
        if !self.options.lipschitz {
            return LipschitzOutcome::Disabled;
        }
        if msg.worker_id >= self.n || msg.grad.len() != x_t.len() || !vecops::all_finite(&msg.grad) {
            return LipschitzOutcome::Malformed;
        }
        let (Some(g_q), Some(x_prev)) = (self.last_accepted_grad.as_deref(), x_prev) else {
            return LipschitzOutcome::Warmup;
        };
        let Ok(k) = empirical_lipschitz(&msg.grad, g_q, x_t, x_prev) else {
            return LipschitzOutcome::Malformed;
        };
        let threshold = self.threshold_for(msg.worker_id, k);
        LipschitzOutcome::Checked {
            k,
            threshold,
            passed: k.is_finite() && k <= threshold,
        }
    }

    /// The `f` workers with the largest counts in the window extended by
    /// `candidate`, as `(worker_id, count)`; equal counts go to the smaller id.
    pub fn heaviest_workers(&self, candidate: usize) -> Vec<(usize, usize)> {
        let mut counts: Vec<(usize, usize)> = Vec::with_capacity(2 * self.f + 1);
        for id in self.window.iter().copied().chain(std::iter::once(candidate)) {
            match counts.iter_mut().find(|(w, _)| *w == id) {
                Some((_, c)) => *c += 1,
                None => counts.push((id, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts.truncate(self.f);
        counts
    }

    fn frequency_passes(&self, worker_id: usize) -> bool {
        if !self.options.frequency {
            return true;
        }
        let top: usize = self.heaviest_workers(worker_id).iter().map(|&(_, c)| c).sum();
        top <= self.f
    }

    /// Full pipeline verdict without touching the state.
    pub fn evaluate(&self, msg: &GradientMessage, x_t: &[f64], x_prev: Option<&[f64]>) -> FilterVerdict {
        let (reason_if_pass, k, threshold) = match self.lipschitz_outcome(msg, x_t, x_prev) {
            LipschitzOutcome::Malformed => {
                return FilterVerdict::new(VerdictReason::RejectedLipschitz, None, None)
            }
            LipschitzOutcome::Checked { k, threshold, passed: false } => {
                return FilterVerdict::new(VerdictReason::RejectedLipschitz, Some(k), Some(threshold))
            }
            LipschitzOutcome::Checked { k, threshold, passed: true } => {
                (VerdictReason::Accepted, Some(k), Some(threshold))
            }
            LipschitzOutcome::Warmup => (VerdictReason::AcceptedWarmup, None, None),
            LipschitzOutcome::Disabled => (VerdictReason::Accepted, None, None),
        };
        if self.frequency_passes(msg.worker_id) {
            FilterVerdict::new(reason_if_pass, k, threshold)
        } else {
            FilterVerdict::new(VerdictReason::RejectedFrequency, k, threshold)
        }
    }

    fn refresh_coefficient(&mut self, worker_id: usize, k: Option<f64>) {
        if let Some(k) = k {
            self.records[worker_id].k_hat = Some(k);
        }
    }

    fn record_acceptance(&mut self, msg: &GradientMessage) {
        let rec = &mut self.records[msg.worker_id];
        rec.last_grad = Some(msg.grad.clone());
        rec.last_model_epoch = Some(msg.timestamp);
    }

    fn push_window(&mut self, worker_id: usize) {
        if self.f == 0 {
            return;
        }
        self.window.push_back(worker_id);
        while self.window.len() > 2 * self.f {
            self.window.pop_front();
        }
    }

    /// Lipschitz stage alone. The sender's coefficient is refreshed whenever
    /// one is computed; its last-gradient record moves only on a pass.
    pub fn lipschitz_filter(&mut self, msg: &GradientMessage, x_t: &[f64], x_prev: Option<&[f64]>) -> FilterVerdict {
        let verdict = match self.lipschitz_outcome(msg, x_t, x_prev) {
            LipschitzOutcome::Malformed => FilterVerdict::new(VerdictReason::RejectedLipschitz, None, None),
            LipschitzOutcome::Checked { k, threshold, passed } => {
                let reason = if passed { VerdictReason::Accepted } else { VerdictReason::RejectedLipschitz };
                FilterVerdict::new(reason, Some(k), Some(threshold))
            }
            LipschitzOutcome::Warmup => FilterVerdict::new(VerdictReason::AcceptedWarmup, None, None),
            LipschitzOutcome::Disabled => FilterVerdict::new(VerdictReason::Accepted, None, None),
        };
        if msg.worker_id < self.n {
            self.refresh_coefficient(msg.worker_id, verdict.candidate_k);
            if verdict.accepted {
                self.record_acceptance(msg);
            }
        }
        verdict
    }

    /// Frequency stage alone; on acceptance the worker joins the window and
    /// the oldest entry beyond `2f` is evicted.
    pub fn frequency_filter(&mut self, worker_id: usize) -> FilterVerdict {
        if self.frequency_passes(worker_id) {
            self.push_window(worker_id);
            FilterVerdict::new(VerdictReason::Accepted, None, None)
        } else {
            FilterVerdict::new(VerdictReason::RejectedFrequency, None, None)
        }
    }

    /// Lipschitz filter, then frequency filter. The window and the sender's
    /// last-gradient record change only on full acceptance; the sender's
    /// coefficient is refreshed whenever the Lipschitz stage measured one.
    pub fn filter_pipeline(&mut self, msg: &GradientMessage, x_t: &[f64], x_prev: Option<&[f64]>) -> FilterVerdict {
        let verdict = self.evaluate(msg, x_t, x_prev);
        if msg.worker_id < self.n {
            self.refresh_coefficient(msg.worker_id, verdict.candidate_k);
            if verdict.accepted {
                self.record_acceptance(msg);
                self.push_window(msg.worker_id);
            }
        }
        verdict
    }
}

/// Counts windows of `2f+1` consecutive accepted gradients that hold fewer
/// than `f+1` honest ones. `honest[i]` is the class of the i-th acceptance.
pub fn window_violations(honest: &[bool], f: usize) -> usize {
    let w = 2 * f + 1;
    if honest.len() < w {
        return 0;
    }
    let mut count = honest[..w].iter().filter(|h| **h).count();
    let mut violations = usize::from(count < f + 1);
    for i in w..honest.len() {
        count += usize::from(honest[i]);
        count -= usize::from(honest[i - w]);
        violations += usize::from(count < f + 1);
    }
    violations
}

/// Longest run of consecutive acceptances with no honest gradient.
pub fn longest_honest_drought(honest: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &h in honest {
        run = if h { 0 } else { run + 1 };
        best = best.max(run);
    }
    best
}

/// Longest run of consecutive acceptances from one worker.
pub fn longest_single_worker_run(ids: &[usize]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev = None;
    for &id in ids {
        run = if prev == Some(id) { run + 1 } else { 1 };
        prev = Some(id);
        best = best.max(run);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(worker_id: usize, grad: Vec<f64>) -> GradientMessage {
        GradientMessage {
            worker_id,
            grad,
            timestamp: 0,
            batch_id: 0,
        }
    }

    fn relaxed(n: usize, f: usize) -> FilterState {
        FilterState::with_options(
            n,
            f,
            FilterOptions {
                require_resilience_bound: false,
                ..FilterOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn lipschitz_coefficient_examples() {
        let k = empirical_lipschitz(&[2.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[0.5, 0.0]).unwrap();
        assert_eq!(k, 2.0);
        let same = empirical_lipschitz(&[1.0, 1.0], &[1.0, 1.0], &[3.0, 0.0], &[3.0, 0.0]).unwrap();
        assert_eq!(same, 0.0);
        let inf = empirical_lipschitz(&[1.0, 2.0], &[1.0, 1.0], &[3.0, 0.0], &[3.0, 0.0]).unwrap();
        assert_eq!(inf, f64::INFINITY);
        assert!(empirical_lipschitz(&[1.0], &[1.0, 2.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(lipschitz_quantile(&[10.0, 1.0, 3.0, 2.0], 4, 1).unwrap(), 3.0);
        assert_eq!(lipschitz_quantile(&[7.5; 6], 6, 1).unwrap(), 7.5);
        assert_eq!(lipschitz_quantile(&[4.0, 9.0, 1.0], 3, 0).unwrap(), 9.0);
        assert!(lipschitz_quantile(&[1.0, 2.0], 3, 0).is_err());
    }

    #[test]
    fn resilience_bound_enforced() {
        let err = FilterState::new(10, 3).unwrap_err();
        assert!(err.to_string().contains("n must exceed 3f+1"));
        assert!(FilterState::new(11, 3).is_ok());
        assert!(FilterState::new(2, 0).is_ok());
        assert!(FilterState::new(1, 0).is_err());
    }

    /// n=4, f=1 with per-worker K̂ = {1, 2, 3, 10}; the candidate comes from
    /// the worker holding 10, so the other three give a threshold of 3.0.
    fn staged_lipschitz_state() -> (FilterState, Vec<f64>, Vec<f64>) {
        let mut s = relaxed(4, 1);
        for (w, k) in [1.0, 2.0, 3.0, 10.0].into_iter().enumerate() {
            s.set_k_hat(w, Some(k));
        }
        s.observe_update(&[0.0, 0.0]);
        (s, vec![1.0, 0.0], vec![0.0, 0.0])
    }

    #[test]
    fn lipschitz_filter_accepts_below_quantile() {
        let (mut s, x_t, x_prev) = staged_lipschitz_state();
        // ‖g − 0‖ / ‖x_t − x_prev‖ = 2.5
        let v = s.lipschitz_filter(&msg(3, vec![2.5, 0.0]), &x_t, Some(&x_prev));
        assert!(v.accepted);
        assert_eq!(v.reason, VerdictReason::Accepted);
        assert_eq!(v.candidate_k, Some(2.5));
    }

    #[test]
    fn lipschitz_filter_rejects_above_quantile() {
        let (mut s, x_t, x_prev) = staged_lipschitz_state();
        let v = s.lipschitz_filter(&msg(3, vec![5.0, 0.0]), &x_t, Some(&x_prev));
        assert!(!v.accepted);
        assert_eq!(v.reason, VerdictReason::RejectedLipschitz);
        assert_eq!(v.threshold_k, Some(3.0));
    }

    #[test]
    fn unchanged_model_with_changed_gradient_is_rejected() {
        let (mut s, _, _) = staged_lipschitz_state();
        let x = vec![1.0, 1.0];
        let v = s.lipschitz_filter(&msg(0, vec![0.5, 0.0]), &x, Some(&x));
        assert_eq!(v.candidate_k, Some(f64::INFINITY));
        assert_eq!(v.reason, VerdictReason::RejectedLipschitz);
    }

    #[test]
    fn malformed_gradients_are_rejected() {
        let (mut s, x_t, x_prev) = staged_lipschitz_state();
        let v = s.filter_pipeline(&msg(0, vec![1.0]), &x_t, Some(&x_prev));
        assert_eq!(v.reason, VerdictReason::RejectedLipschitz);
        let v = s.filter_pipeline(&msg(0, vec![f64::NAN, 0.0]), &x_t, Some(&x_prev));
        assert_eq!(v.reason, VerdictReason::RejectedLipschitz);
    }

    #[test]
    fn frequency_examples() {
        let mut s = relaxed(4, 1);
        s.set_window(&[1, 2]);
        assert_eq!(s.frequency_filter(3).reason, VerdictReason::Accepted);
        assert_eq!(s.window().collect::<Vec<_>>(), vec![2, 3]);

        let mut s = relaxed(4, 1);
        s.set_window(&[1, 1]);
        assert_eq!(s.frequency_filter(1).reason, VerdictReason::RejectedFrequency);
        assert_eq!(s.window().collect::<Vec<_>>(), vec![1, 1]);

        let mut s = relaxed(5, 2);
        s.set_window(&[1, 2, 1, 3]);
        assert_eq!(s.heaviest_workers(2), vec![(1, 2), (2, 2)]);
        assert_eq!(s.frequency_filter(2).reason, VerdictReason::RejectedFrequency);
    }

    #[test]
    fn frequency_ties_prefer_lower_ids() {
        let mut s = relaxed(7, 3);
        s.set_window(&[5, 4, 3, 2, 1, 0]);
        assert_eq!(s.heaviest_workers(6), vec![(0, 1), (1, 1), (2, 1)]);
    }

    #[test]
    fn pipeline_rejection_on_lipschitz_keeps_window() {
        let (mut s, x_t, x_prev) = staged_lipschitz_state();
        s.set_window(&[0, 1]);
        let v = s.filter_pipeline(&msg(3, vec![5.0, 0.0]), &x_t, Some(&x_prev));
        assert_eq!(v.reason, VerdictReason::RejectedLipschitz);
        assert_eq!(s.window().collect::<Vec<_>>(), vec![0, 1]);
        assert!(s.records()[3].last_grad.is_none());
    }

    #[test]
    fn pipeline_acceptance_updates_window_and_record() {
        let (mut s, x_t, x_prev) = staged_lipschitz_state();
        let v = s.filter_pipeline(&msg(2, vec![0.5, 0.0]), &x_t, Some(&x_prev));
        assert_eq!(v.reason, VerdictReason::Accepted);
        assert_eq!(s.window().collect::<Vec<_>>(), vec![2]);
        assert_eq!(s.records()[2].k_hat, Some(0.5));
        assert_eq!(s.records()[2].last_grad.as_deref(), Some(&[0.5, 0.0][..]));
    }

    #[test]
    fn warmup_bypasses_lipschitz_but_not_frequency() {
        let mut s = relaxed(4, 1);
        let x = vec![0.0, 0.0];
        let v = s.filter_pipeline(&msg(0, vec![100.0, 0.0]), &x, None);
        assert_eq!(v.reason, VerdictReason::AcceptedWarmup);
        assert!(v.accepted);
        let v = s.filter_pipeline(&msg(0, vec![100.0, 0.0]), &x, None);
        assert_eq!(v.reason, VerdictReason::RejectedFrequency);
        let v = s.filter_pipeline(&msg(1, vec![100.0, 0.0]), &x, None);
        assert_eq!(v.reason, VerdictReason::AcceptedWarmup);
    }

    #[test]
    fn frequency_rejection_only_refreshes_coefficient() {
        let (mut s, x_t, x_prev) = staged_lipschitz_state();
        s.set_window(&[2, 2]);
        let before = s.clone();
        let v = s.filter_pipeline(&msg(2, vec![0.5, 0.0]), &x_t, Some(&x_prev));
        assert_eq!(v.reason, VerdictReason::RejectedFrequency);
        let mut expect = before;
        expect.set_k_hat(2, Some(0.5));
        assert_eq!(s, expect);
    }

    #[test]
    fn slowdown_examples() {
        assert_eq!(slowdown(70, 100), Some(0.7));
        assert_eq!(slowdown(0, 5), Some(0.0));
        assert_eq!(slowdown(0, 0), None);
        let lower: f64 = (10.0 - 6.0) / (10.0 - 3.0);
        assert!((lower - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn window_audit() {
        // f = 1: windows of 3 need >= 2 honest.
        assert_eq!(window_violations(&[true, false, true, true], 1), 0);
        assert_eq!(window_violations(&[true, false, false, true], 1), 2);
        assert_eq!(longest_honest_drought(&[true, false, false, true, false]), 2);
        assert_eq!(longest_single_worker_run(&[1, 1, 2, 2, 2, 1]), 3);
    }
}
