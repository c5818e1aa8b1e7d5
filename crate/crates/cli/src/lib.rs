//! Command-line front-end of the simulator.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use byzsgd::experiment::{self, presets, ExperimentConfig, PlotMetric};
use byzsgd::Error;
use clap::{Parser, Subcommand};

/// Deterministic simulator for asynchronous Byzantine-resilient SGD.
#[derive(Parser)]
#[command(name = "byzsgd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate of an experiment and write CSV and summary files.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `out/<config name>`.
        #[arg(long, env = "BYZSGD_OUT_DIR")]
        out: Option<PathBuf>,
        /// Override the configured replicate count.
        #[arg(long)]
        replicates: Option<usize>,
        /// Worker threads for replicates.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Reshape one or more summaries into long-format CSV for plotting.
    PlotData {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, value_parser = ["loss", "grad_norm", "acceptance"])]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration and print it with every default filled in.
    Validate { config: PathBuf },
    /// Print or write the configurations of a named preset suite.
    Preset {
        /// Suite name; omit to list the suites.
        name: Option<String>,
        /// Write one `<name>.json` per configuration into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes a line; a closed pipe is not an error.
fn say(w: &mut dyn Write, line: impl std::fmt::Display) {
    let _ = writeln!(w, "{line}");
}

fn run(w: &mut dyn Write, config: &Path, out: Option<PathBuf>, replicates: Option<usize>, parallel: usize) -> Result<ExitCode, Error> {
    let mut cfg = experiment::load_config(config)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
        cfg.validate()?;
    }
    let out = out.unwrap_or_else(|| Path::new("out").join(&cfg.name));
    let report = experiment::run_experiment(&cfg, &out, parallel)?;
    for r in &report.replicates {
        let s = &r.summary;
        say(w, format!(
            "{} replicate {} seed {}: epochs {} loss {:.6e} grad_norm {:.3e} SL {} drop {} byz_accepted {}{}",
            report.name,
            r.replicate,
            r.seed,
            s.epochs_applied,
            s.final_loss,
            s.final_grad_norm,
            s.sl.map_or("n/a".into(), |v| format!("{v:.4}")),
            s.drop_ratio.map_or("n/a".into(), |v| format!("{v:.4}")),
            s.byz_accepted,
            if s.diverged { " DIVERGED" } else { "" },
        ));
    }
    say(w, format!("wrote {}", out.join("summary.json").display()));
    if report.numeric_fault() {
        eprintln!("error: a replicate hit a numeric fault");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn plot_data(summaries: &[PathBuf], metric: &str, out: &Path) -> Result<ExitCode, Error> {
    let metric: PlotMetric = metric.parse()?;
    for w in experiment::emit_plot_data(summaries, metric, out)? {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(w: &mut dyn Write, config: &Path) -> Result<ExitCode, Error> {
    let cfg = experiment::load_config(config)?;
    say(w, cfg.to_json());
    Ok(ExitCode::SUCCESS)
}

fn preset(w: &mut dyn Write, name: Option<&str>, out: Option<&Path>) -> Result<ExitCode, Error> {
    let Some(name) = name else {
        for s in presets::SUITES {
            say(w, s);
        }
        return Ok(ExitCode::SUCCESS);
    };
    let configs = presets::suite(name)
        .ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`; known: {}", presets::SUITES.join(", "))))?;
    match out {
        Some(dir) => {
            for p in experiment::write_configs(&configs, dir)? {
                say(w, p.display());
            }
        }
        None => {
            let all: Vec<&ExperimentConfig> = configs.iter().collect();
            say(w, serde_json::to_string_pretty(&all).expect("configs serialize"));
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses `args` (program name first) and executes the command, writing
/// normal output to `w` and diagnostics to stderr.
pub fn run_cli<I, T>(args: I, w: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            replicates,
            parallel,
        } => run(w, config, out.clone(), *replicates, *parallel),
        Command::PlotData { summaries, metric, out } => plot_data(summaries, metric, out),
        Command::Validate { config } => validate(w, config),
        Command::Preset { name, out } => preset(w, name.as_deref(), out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
