mod common;

use byzsgd::dampening::DampeningSpec;
use byzsgd::experiment::{presets, ExperimentConfig, SchedulerKind};
use byzsgd::filter::window_violations;
use byzsgd::optim::CostSpec;
use byzsgd::rng;
use byzsgd::sim::{
    honest_step, run_simulation, Behavior, RunTrace, Snapshot, StalenessModel, VerdictCounts, WorkerSpec,
};

fn bowl(dim: usize) -> CostSpec {
    CostSpec::QuadraticBowl {
        dim,
        curvature: 1.0,
        center: None,
    }
}

fn shortened(name: &str, epochs: u64) -> ExperimentConfig {
    let mut c = presets::by_name(name).unwrap_or_else(|| panic!("preset {name}"));
    c.epochs = epochs;
    c.max_deliveries = None;
    c.materialize();
    c
}

/// Checks shared by every trace a test produces.
fn audit(cfg: &ExperimentConfig, trace: &RunTrace) {
    let s = &trace.summary;
    let m = cfg.m;
    let applied = trace.records.len();
    assert_eq!(s.epochs_applied as usize, applied);
    let held = trace.acceptances.len() - applied * m;
    assert!(held < m, "{} acceptances for {applied} updates of {m}", trace.acceptances.len());
    assert_eq!(s.counts.accepted() as usize, trace.acceptances.len());
    assert_eq!(s.counts.delivered(), s.counts.accepted() + s.counts.rejected());

    let mut per_epoch = VerdictCounts::default();
    for r in &trace.records {
        assert_eq!(r.dampening.len(), m);
        for &(lambda, tau) in &r.dampening {
            assert_eq!(lambda, cfg.dampening.lambda(tau));
        }
        let c = &r.counts;
        per_epoch.delivered_honest += c.delivered_honest;
        per_epoch.delivered_byz += c.delivered_byz;
        per_epoch.accepted_honest += c.accepted_honest;
        per_epoch.accepted_byz += c.accepted_byz;
    }
    assert!(per_epoch.accepted_honest + per_epoch.accepted_byz <= s.counts.accepted());
    assert!(per_epoch.delivered_honest + per_epoch.delivered_byz <= s.counts.delivered());

    for a in &trace.acceptances {
        assert!(a.timestamp <= a.epoch);
        assert_eq!(a.tau, a.epoch - a.timestamp);
        if !a.honest {
            assert_eq!(a.tau, 0);
        }
    }

    if cfg.filter.enabled && cfg.filter.frequency {
        let honest = trace.honest_sequence();
        assert_eq!(window_violations(&honest, cfg.f), 0);
        if let Some(min) = common::min_honest_per_window(&honest, cfg.f) {
            assert!(min > cfg.f);
        }
        assert_eq!(s.window_violations, Some(0));
    }
}

#[test]
fn same_config_same_trace() {
    for (name, epochs) in [("attack-negate10", 300), ("lemma1-audit", 200), ("attack-stall", 200)] {
        let cfg = shortened(name, epochs);
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        audit(&cfg, &a);
    }
}

#[test]
fn seed_changes_the_trace() {
    let mut cfg = shortened("attack-negate10", 100);
    let a = run_simulation(&cfg).unwrap();
    cfg.seed += 1;
    let b = run_simulation(&cfg).unwrap();
    assert_ne!(a.records, b.records);
}

#[test]
fn every_preset_trace_passes_audit() {
    for mut cfg in presets::all() {
        cfg.epochs = cfg.epochs.min(150);
        cfg.max_deliveries = None;
        cfg.materialize();
        let trace = run_simulation(&cfg).unwrap();
        audit(&cfg, &trace);
    }
}

#[test]
fn stale_gradients_are_computed_on_the_stamped_model() {
    // With M = 1 and no filter each update is x' = x − γ_t·λ·g, so the
    // gradient can be recovered and compared with ∇Q at the stamped model.
    let mut cfg = ExperimentConfig::honest("stale", 4, 0, bowl(3), 0.05);
    cfg.filter.enabled = false;
    cfg.staleness = StalenessModel::Gaussian { mean: 3.0, sigma: 2.0 };
    cfg.dampening = DampeningSpec::exponential(0.2, 1.0);
    cfg.epochs = 300;
    cfg.record_params = true;
    let trace = run_simulation(&cfg).unwrap();
    audit(&cfg, &trace);
    let model_at = |e: u64| -> &[f64] {
        if e == 0 {
            &trace.initial_params
        } else {
            trace.records[e as usize - 1].params.as_deref().unwrap()
        }
    };
    let mut stale = 0;
    for (t, (rec, acc)) in trace.records.iter().zip(&trace.acceptances).enumerate() {
        assert_eq!(acc.epoch, t as u64);
        stale += usize::from(acc.tau > 0);
        let (lambda, tau) = rec.dampening[0];
        assert_eq!(tau, acc.tau);
        let before = model_at(t as u64);
        let after = rec.params.as_deref().unwrap();
        let stamped = model_at(acc.timestamp);
        for k in 0..3 {
            let recovered = (before[k] - after[k]) / (rec.gamma_t * lambda);
            let expected = stamped[k] - 1.0;
            assert!((recovered - expected).abs() <= 1e-9 * expected.abs().max(1.0), "epoch {t}: {recovered} vs {expected}");
        }
    }
    assert!(stale > 200, "only {stale} stale updates");
}

#[test]
fn honest_steps_are_stochastic_across_streams() {
    let cfg = ExperimentConfig::honest("noise", 10, 3, CostSpec::LogisticRegression, 0.1);
    let cost = cfg.build_cost().unwrap();
    let x = vec![0.05; cost.dim()];
    let snap = Snapshot { params: &x, epoch: 7 };
    let (w0, w1) = (WorkerSpec::honest(0, 32), WorkerSpec::honest(1, 32));
    let mut r0 = rng::worker_stream(3, 0);
    let mut r1 = rng::worker_stream(3, 1);
    let mut differ = 0;
    for i in 0..100 {
        let a = honest_step(&w0, &cost, snap, i, &mut r0).unwrap();
        let b = honest_step(&w1, &cost, snap, i, &mut r1).unwrap();
        assert_eq!(a.timestamp, 7);
        assert_eq!(b.timestamp, 7);
        differ += usize::from(a.grad != b.grad);
    }
    assert!(differ >= 95, "{differ} of 100 draws differ");

    let mut again = rng::worker_stream(3, 0);
    let mut replay = rng::worker_stream(3, 0);
    let a = honest_step(&w0, &cost, snap, 0, &mut again).unwrap();
    let b = honest_step(&w0, &cost, snap, 0, &mut replay).unwrap();
    assert_eq!(a, b);
}

fn flood(multiplier: f64, frequency: bool, scheduler: SchedulerKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::honest("flood", 5, 1, bowl(5), 0.05);
    c.epochs = 400;
    c.staleness = StalenessModel::Gaussian { mean: 2.0, sigma: 1.0 };
    c.dampening = DampeningSpec::inverse();
    c.filter.frequency = frequency;
    c.scheduler = scheduler;
    c.workers[4] = WorkerSpec::byzantine(
        4,
        Behavior::Flood {
            multiplier,
            payload: Box::new(Behavior::RandomVector { scale: 1e-3 }),
        },
        32,
    );
    c
}

#[test]
fn flood_submits_at_the_multiplied_rate() {
    let mut cfg = flood(10.0, true, SchedulerKind::Fair);
    cfg.filter.enabled = false;
    let trace = run_simulation(&cfg).unwrap();
    audit(&cfg, &trace);
    let c = trace.summary.counts;
    let per_honest = c.delivered_honest as f64 / 4.0;
    let ratio = c.delivered_byz as f64 / per_honest;
    assert!((8.0..=12.0).contains(&ratio), "flood ratio {ratio}");
}

#[test]
fn frequency_filter_caps_flood_acceptances() {
    let cfg = flood(10.0, true, SchedulerKind::Fair);
    let trace = run_simulation(&cfg).unwrap();
    audit(&cfg, &trace);
    let c = trace.summary.counts;
    assert!(c.delivered_byz > c.delivered_honest, "flood did not flood: {c:?}");
    // At most f of every 2f+1 consecutive acceptances.
    let accepted = trace.acceptances.len() as u64;
    assert!(c.accepted_byz <= accepted.div_ceil(3), "{} of {accepted}", c.accepted_byz);
}

#[test]
fn adversarial_flood_without_frequency_filter_starves_honest_workers() {
    let mut cfg = flood(10.0, false, SchedulerKind::Adversarial);
    cfg.workers[4].behavior = Behavior::Flood {
        multiplier: 10.0,
        payload: Box::new(Behavior::TinyLipschitzStall { scale: 0.0 }),
    };
    let off = run_simulation(&cfg).unwrap();
    audit(&cfg, &off);
    assert!(common::longest_false_run(&off.honest_sequence()) >= 300);

    cfg.filter.frequency = true;
    let on = run_simulation(&cfg).unwrap();
    audit(&cfg, &on);
    assert_eq!(common::min_honest_per_window(&on.honest_sequence(), 1), Some(2));
}

#[test]
fn runaway_learning_rate_is_flagged() {
    let mut cfg = ExperimentConfig::honest("runaway", 1, 0, bowl(2), 5.0);
    cfg.filter.enabled = false;
    cfg.epochs = 200;
    let trace = run_simulation(&cfg).unwrap();
    assert!(trace.summary.diverged);
    assert!(trace.summary.epochs_applied < 200);
}
