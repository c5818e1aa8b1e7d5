//! Replicate orchestration and metrics persistence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{run_simulation_seeded, RunSummary, RunTrace};

use super::ExperimentConfig;

pub const CSV_HEADER: [&str; 9] = [
    "epoch",
    "loss",
    "grad_norm",
    "gamma_t",
    "mu_t",
    "accepted_honest",
    "accepted_byz",
    "rejected_lipschitz",
    "rejected_frequency",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    /// CSV file name, relative to the summary.
    pub csv: String,
    pub summary: RunSummary,
}

/// Mean and sample standard deviation over the replicates that report the
/// metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    #[serde(with = "crate::serde_real::option")]
    pub mean: Option<f64>,
    #[serde(with = "crate::serde_real::option")]
    pub stddev: Option<f64>,
    #[serde(with = "crate::serde_real::option")]
    pub min: Option<f64>,
    #[serde(with = "crate::serde_real::option")]
    pub max: Option<f64>,
}

impl Aggregate {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let count = v.len();
        if count == 0 {
            return Aggregate {
                count,
                mean: None,
                stddev: None,
                min: None,
                max: None,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let stddev = (count > 1)
            .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt());
        Aggregate {
            count,
            mean: Some(mean),
            stddev,
            min: v.iter().copied().reduce(f64::min),
            max: v.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub sl: Aggregate,
    pub drop_ratio: Aggregate,
    pub byz_accepted: Aggregate,
    pub final_loss: Aggregate,
    pub final_grad_norm: Aggregate,
    pub epochs_applied: Aggregate,
    pub epochs_to_target_loss: Aggregate,
    pub epochs_to_target_grad_norm: Aggregate,
    pub mu_max: Aggregate,
    pub diverged_count: usize,
    pub numeric_fault_count: usize,
}

impl Aggregates {
    fn of(runs: &[ReplicateResult]) -> Self {
        let agg = |f: &dyn Fn(&RunSummary) -> Option<f64>| Aggregate::of(runs.iter().map(|r| f(&r.summary)));
        Aggregates {
            sl: agg(&|s| s.sl),
            drop_ratio: agg(&|s| s.drop_ratio),
            byz_accepted: agg(&|s| Some(s.byz_accepted as f64)),
            final_loss: agg(&|s| Some(s.final_loss)),
            final_grad_norm: agg(&|s| Some(s.final_grad_norm)),
            epochs_applied: agg(&|s| Some(s.epochs_applied as f64)),
            epochs_to_target_loss: agg(&|s| s.epochs_to_target_loss.map(|e| e as f64)),
            epochs_to_target_grad_norm: agg(&|s| s.epochs_to_target_grad_norm.map(|e| e as f64)),
            mu_max: agg(&|s| Some(s.mu_max)),
            diverged_count: runs.iter().filter(|r| r.summary.diverged).count(),
            numeric_fault_count: runs.iter().filter(|r| r.summary.numeric_fault).count(),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub replicates: Vec<ReplicateResult>,
    pub aggregate: Aggregates,
}

impl ExperimentReport {
    pub fn numeric_fault(&self) -> bool {
        self.aggregate.numeric_fault_count > 0
    }
}

/// Seed of replicate `i`.
pub fn replicate_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Runs every replicate on a pool of `parallel` threads; traces come back in
/// replicate order.
pub fn run_replicates(cfg: &ExperimentConfig, parallel: usize) -> Result<Vec<RunTrace>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::config("parallel", e.to_string()))?;
    pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|i| run_simulation_seeded(cfg, replicate_seed(cfg.seed, i)))
            .collect()
    })
}

pub fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &trace.records {
        w.write_record([
            r.epoch.to_string(),
            fmt_real(r.loss),
            fmt_real(r.grad_norm),
            fmt_real(r.gamma_t),
            fmt_real(r.mu_t),
            r.counts.accepted_honest.to_string(),
            r.counts.accepted_byz.to_string(),
            r.counts.rejected_lipschitz().to_string(),
            r.counts.rejected_frequency().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs all replicates and writes `replicate-{i}.csv` plus `summary.json`
/// into `out_dir`. Divergence is recorded, not raised.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, parallel: usize) -> Result<ExperimentReport> {
    let traces = run_replicates(cfg, parallel)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut replicates = Vec::with_capacity(traces.len());
    for (i, trace) in traces.iter().enumerate() {
        let csv = format!("replicate-{i}.csv");
        write_trace_csv(&out_dir.join(&csv), trace)?;
        replicates.push(ReplicateResult {
            replicate: i,
            seed: trace.summary.seed,
            csv,
            summary: trace.summary.clone(),
        });
    }
    let report = ExperimentReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        aggregate: Aggregates::of(&replicates),
        replicates,
    };
    let path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Loss,
    GradNorm,
    /// Accepted over delivered, per epoch.
    Acceptance,
}

impl PlotMetric {
    pub fn label(self) -> &'static str {
        match self {
            PlotMetric::Loss => "loss",
            PlotMetric::GradNorm => "grad_norm",
            PlotMetric::Acceptance => "acceptance",
        }
    }
}

impl std::str::FromStr for PlotMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(PlotMetric::Loss),
            "grad_norm" => Ok(PlotMetric::GradNorm),
            "acceptance" => Ok(PlotMetric::Acceptance),
            other => Err(Error::config("metric", format!("unknown metric `{other}`"))),
        }
    }
}

fn read_metric(path: &Path, metric: PlotMetric) -> Result<Vec<(u64, f64)>> {
    let bad = |msg: String| Error::config(path.display().to_string(), msg);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let epoch = col("epoch")?;
    let cols: Vec<usize> = match metric {
        PlotMetric::Loss => vec![col("loss")?],
        PlotMetric::GradNorm => vec![col("grad_norm")?],
        PlotMetric::Acceptance => vec![
            col("accepted_honest")?,
            col("accepted_byz")?,
            col("rejected_lipschitz")?,
            col("rejected_frequency")?,
        ],
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| bad(format!("row {}: {e}", out.len() + 1)))
        };
        let e = row[epoch].parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let v = match metric {
            PlotMetric::Acceptance => {
                let acc = num(cols[0])? + num(cols[1])?;
                let total = acc + num(cols[2])? + num(cols[3])?;
                if total > 0.0 {
                    acc / total
                } else {
                    f64::NAN
                }
            }
            _ => num(cols[0])?,
        };
        out.push((e, v));
    }
    Ok(out)
}

struct Series {
    name: String,
    diverged: bool,
    replicates: usize,
    points: Vec<(u64, f64)>,
}

/// Long-format rows `series, epoch, value, replicates, diverged`, one series
/// per summary with the replicate mean at each epoch. Series of different
/// lengths are cut to the shortest; each cut is reported in the returned
/// warnings.
pub fn emit_plot_data(summaries: &[PathBuf], metric: PlotMetric, out: &Path) -> Result<Vec<String>> {
    if summaries.is_empty() {
        return Err(Error::config("summaries", "at least one summary is required"));
    }
    let mut warnings = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for path in summaries {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: ExperimentReport = serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut runs = Vec::new();
        for r in &report.replicates {
            runs.push(read_metric(&dir.join(&r.csv), metric)?);
        }
        let len = runs.iter().map(Vec::len).min().unwrap_or(0);
        if runs.iter().any(|r| r.len() != len) {
            warnings.push(format!("{}: replicates truncated to {len} epochs", report.name));
        }
        let mean: Vec<(u64, f64)> = (0..len)
            .map(|i| {
                let v = runs.iter().map(|r| r[i].1).sum::<f64>() / runs.len() as f64;
                (runs[0][i].0, v)
            })
            .collect();
        let mut name = report.name.clone();
        let mut k = 2;
        while series.iter().any(|s| s.name == name) {
            name = format!("{}#{k}", report.name);
            k += 1;
        }
        series.push(Series {
            name,
            diverged: report.aggregate.diverged_count > 0,
            replicates: runs.len(),
            points: mean,
        });
    }
    let common = series.iter().map(|s| s.points.len()).min().unwrap_or(0);
    for s in &mut series {
        if s.points.len() != common {
            warnings.push(format!("{}: truncated from {} to {common} epochs", s.name, s.points.len()));
            s.points.truncate(common);
        }
    }
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(out, source),
        other => Error::io(out, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(out).map_err(io)?;
    w.write_record(["series", "metric", "epoch", "value", "replicates", "diverged"]).map_err(io)?;
    for s in &series {
        for (epoch, v) in &s.points {
            w.write_record([
                s.name.as_str(),
                metric.label(),
                &epoch.to_string(),
                &fmt_real(*v),
                &s.replicates.to_string(),
                if s.diverged { "true" } else { "false" },
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(warnings)
}

/// Writes each configuration as `<name>.json` into `dir`.
pub fn write_configs(configs: &[ExperimentConfig], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    configs
        .iter()
        .map(|c| {
            let path = dir.join(format!("{}.json", c.name));
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", c.to_json()).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
