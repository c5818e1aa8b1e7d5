//! Named experiment suites. Each suite is a list of configurations whose
//! names start with the suite name; `presets/*.json` mirrors them.

use crate::dampening::DampeningSpec;
use crate::optim::{BlobSpec, CostSpec};
use crate::sim::{Behavior, StalenessModel, WorkerSpec};

use super::{ExperimentConfig, SchedulerKind};

pub const SUITES: [&str; 8] = [
    "figure3",
    "figure4-D1",
    "figure4-D2",
    "attack-negate10",
    "attack-stall",
    "attack-flood",
    "lemma1-audit",
    "slowdown-bounds",
];

fn gaussian_12_4() -> StalenessModel {
    StalenessModel::Gaussian { mean: 12.0, sigma: 4.0 }
}

fn uniform_staleness(lo: usize, hi: usize) -> StalenessModel {
    let mut weights = vec![0.0; hi + 1];
    weights[lo..=hi].fill(1.0);
    StalenessModel::Empirical { weights }
}

fn bowl(dim: usize) -> CostSpec {
    CostSpec::QuadraticBowl {
        dim,
        curvature: 1.0,
        center: None,
    }
}

/// n = 10, f = 3 with the filter on, below the strict `n > 3f + 1` bound.
fn ten_three(name: &str, cost: CostSpec, gamma: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::honest(name, 10, 3, cost, gamma);
    c.filter.require_resilience_bound = false;
    c.staleness = gaussian_12_4();
    if c.cost.needs_dataset() {
        c.dataset = Some(BlobSpec::default());
    }
    c
}

fn with_byzantine(mut c: ExperimentConfig, ids: &[usize], behavior: Behavior) -> ExperimentConfig {
    for &i in ids {
        c.workers[i] = WorkerSpec::byzantine(i, behavior.clone(), c.workers[i].batch_size);
    }
    c
}

fn finish(mut c: ExperimentConfig) -> ExperimentConfig {
    c.max_deliveries = None;
    c.materialize();
    c
}

fn figure3() -> Vec<ExperimentConfig> {
    let families = [
        ("sync", DampeningSpec::constant(), StalenessModel::Zero),
        ("constant", DampeningSpec::constant(), gaussian_12_4()),
        ("inverse", DampeningSpec::inverse(), gaussian_12_4()),
        ("exp-0.5", DampeningSpec::exponential(0.5, 1.0), gaussian_12_4()),
        ("exp-0.2", DampeningSpec::exponential(0.2, 1.0), gaussian_12_4()),
    ];
    let mut out = Vec::new();
    for (cost_name, cost, gamma, epochs, target) in [
        ("bowl", bowl(10), 0.017, 5000, Some(1e-10)),
        ("logistic", CostSpec::LogisticRegression, 0.0335, 3000, None),
    ] {
        for (label, dampening, staleness) in &families {
            let mut c = ten_three(&format!("figure3-{cost_name}-{label}"), cost.clone(), gamma);
            c.m = 7;
            c.epochs = epochs;
            c.dampening = *dampening;
            c.staleness = staleness.clone();
            c.target_grad_norm = target;
            out.push(finish(c));
        }
    }
    out
}

fn figure4(suite: &str, staleness: StalenessModel) -> Vec<ExperimentConfig> {
    [("inverse", DampeningSpec::inverse()), ("exp", DampeningSpec::exponential(0.685, 1.85))]
        .into_iter()
        .map(|(label, dampening)| {
            let mut c = ten_three(&format!("{suite}-{label}"), bowl(10), 0.005);
            c.m = 7;
            c.epochs = 20_000;
            c.dampening = dampening;
            c.staleness = staleness.clone();
            c.target_loss = Some(1e-6);
            c.replicates = 5;
            finish(c)
        })
        .collect()
}

fn attack_negate10() -> Vec<ExperimentConfig> {
    let mut c = ten_three("attack-negate10", CostSpec::LogisticRegression, 0.1);
    c.epochs = 2000;
    c.dampening = DampeningSpec::exponential(0.2, 1.0);
    let reference = {
        let mut h = c.clone();
        h.name = "attack-negate10-honest".into();
        finish(h)
    };
    let attacked = with_byzantine(c, &[7, 8, 9], Behavior::NegateAmplify { kappa: 10.0 });
    vec![finish(attacked), reference]
}

fn attack_stall() -> Vec<ExperimentConfig> {
    let mut c = ten_three("attack-stall", CostSpec::LogisticRegression, 0.1);
    c.epochs = 2000;
    c.dampening = DampeningSpec::exponential(0.2, 1.0);
    c.scheduler = SchedulerKind::Adversarial;
    c.replicates = 5;
    vec![finish(with_byzantine(c, &[7, 8, 9], Behavior::TinyLipschitzStall { scale: 0.0 }))]
}

fn flood_base(name: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::honest(name, 5, 1, bowl(5), 0.05);
    c.epochs = 3000;
    c.staleness = gaussian_12_4();
    c.dampening = DampeningSpec::exponential(0.2, 1.0);
    c.scheduler = SchedulerKind::Adversarial;
    c.target_grad_norm = Some(1e-8);
    c.stop_at_target = false;
    with_byzantine(
        c,
        &[4],
        Behavior::Flood {
            multiplier: 10.0,
            payload: Box::new(Behavior::TinyLipschitzStall { scale: 0.0 }),
        },
    )
}

fn attack_flood() -> Vec<ExperimentConfig> {
    let on = flood_base("attack-flood");
    let mut off = flood_base("attack-flood-nofreq");
    off.filter.frequency = false;
    vec![finish(on), finish(off)]
}

fn lemma1_audit() -> Vec<ExperimentConfig> {
    let mut c = ExperimentConfig::honest("lemma1-audit", 7, 2, bowl(4), 0.05);
    c.epochs = 200;
    c.staleness = StalenessModel::Gaussian { mean: 3.0, sigma: 2.0 };
    c.dampening = DampeningSpec::exponential(0.2, 1.0);
    c.scheduler = SchedulerKind::Adversarial;
    c.filter.require_resilience_bound = false;
    c.timing.jitter = 0.5;
    c = with_byzantine(
        c,
        &[5],
        Behavior::Flood {
            multiplier: 10.0,
            payload: Box::new(Behavior::TinyLipschitzStall { scale: 0.01 }),
        },
    );
    vec![finish(with_byzantine(c, &[6], Behavior::TinyLipschitzStall { scale: 0.0 }))]
}

fn slowdown_bounds() -> Vec<ExperimentConfig> {
    let mut c = ten_three("slowdown-bounds", CostSpec::LogisticRegression, 0.1);
    c.epochs = 1000;
    c.dampening = DampeningSpec::exponential(0.2, 1.0);
    c.replicates = 5;
    vec![finish(c)]
}

/// Configurations of a named suite, or `None` for an unknown name.
pub fn suite(name: &str) -> Option<Vec<ExperimentConfig>> {
    Some(match name {
        "figure3" => figure3(),
        "figure4-D1" => figure4("figure4-D1", uniform_staleness(1, 10)),
        "figure4-D2" => figure4("figure4-D2", uniform_staleness(11, 33)),
        "attack-negate10" => attack_negate10(),
        "attack-stall" => attack_stall(),
        "attack-flood" => attack_flood(),
        "lemma1-audit" => lemma1_audit(),
        "slowdown-bounds" => slowdown_bounds(),
        _ => return None,
    })
}

/// Every preset configuration, suite by suite.
pub fn all() -> Vec<ExperimentConfig> {
    SUITES.iter().flat_map(|s| suite(s).expect("listed suite")).collect()
}

/// A single preset by its configuration name.
pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    all().into_iter().find(|c| c.name == name)
}
