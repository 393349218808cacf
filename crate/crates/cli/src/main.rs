//! `beamkd`: command-line driver for the beam-prediction workbench.
//!
//! Exit codes: 0 success, 1 failed assertion or gradient check, 2 config
//! error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use beamkd::config::ExperimentConfig;
use beamkd::error::{Error, ErrorClass};
use beamkd::experiment::{run, Command, Inputs};
use beamkd::metrics::MetricsReport;
use clap::{Args, Parser, Subcommand};

const EXIT_ASSERTION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "beamkd",
    version,
    about = "Sensing-aided mmWave beam prediction with relational distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build scenes and one episode per seed, exported as JSON.
    SceneGen(Common),
    /// Generate, label, split and write the dataset.
    DatasetGen(Common),
    /// Train the multimodal teacher for each seed.
    TrainTeacher(Common),
    /// Train a student with the configured method for each seed.
    Distill(Common),
    /// Score a checkpoint on the test split.
    Evaluate(Common),
    /// Check every analytic gradient against finite differences.
    GradCheck(Common),
    /// Teacher and all student methods across seeds, with a comparison table.
    Reproduce(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed `N` or inclusive range `A..B`; replaces the config's seeds.
    #[arg(long, value_parser = parse_seeds)]
    seed: Option<Seeds>,
    /// Output root; the run goes to `<out>/<run-id>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override `dotted.key=value` (value parsed as JSON, else string).
    #[arg(long = "set", value_name = "K=V")]
    overrides: Vec<String>,
    /// Fail (exit 1) when the test MPR falls below this percentage.
    #[arg(long, value_name = "X")]
    assert_mpr_min: Option<f64>,
    /// Fail (exit 1) when Top-K accuracy falls below MIN.
    #[arg(long, value_name = "K:MIN", value_parser = parse_topk)]
    assert_topk: Vec<(usize, f64)>,
    /// Combine paths in the power domain instead of summing dB values.
    #[arg(long)]
    power_domain: bool,
    /// Existing dataset directory instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Teacher checkpoint header (`distill`).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Checkpoint header to score (`evaluate`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|e| format!("bad seed `{t}`: {e}"))
    };
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("empty seed range {s}"));
            }
            Ok(Seeds((a..=b).collect()))
        }
        None => Ok(Seeds(vec![num(s)?])),
    }
}

fn parse_topk(s: &str) -> Result<(usize, f64), String> {
    let (k, min) = s
        .split_once(':')
        .ok_or_else(|| format!("expected K:MIN, got `{s}`"))?;
    let k = k
        .parse::<usize>()
        .map_err(|e| format!("bad K `{k}`: {e}"))?;
    let min = min
        .parse::<f64>()
        .map_err(|e| format!("bad MIN `{min}`: {e}"))?;
    Ok((k, min))
}

fn exit_for(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Threshold failures, one message per violated assertion.
fn check_assertions(common: &Common, reports: &[(String, MetricsReport)]) -> Vec<String> {
    let mut failures = Vec::new();
    for (name, r) in reports {
        if let Some(min) = common.assert_mpr_min {
            if r.mpr_percent.is_nan() || r.mpr_percent < min {
                failures.push(format!("{name}: MPR {:.3} < {min}", r.mpr_percent));
            }
        }
        for &(k, min) in &common.assert_topk {
            match r.top_k.get(&k) {
                Some(&acc) if acc >= min => {}
                Some(&acc) => failures.push(format!("{name}: top-{k} {acc:.4} < {min}")),
                None => failures.push(format!("{name}: top-{k} is not reported")),
            }
        }
    }
    failures
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::SceneGen(c) => (Command::SceneGen, c),
        Cmd::DatasetGen(c) => (Command::DatasetGen, c),
        Cmd::TrainTeacher(c) => (Command::TrainTeacher, c),
        Cmd::Distill(c) => (Command::Distill, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::GradCheck(c) => (Command::GradCheck, c),
        Cmd::Reproduce(c) => (Command::Reproduce, c),
    };

    let mut overrides = common.overrides.clone();
    if let Some(Seeds(seeds)) = &common.seed {
        overrides.push(format!("seeds={seeds:?}"));
    }
    if common.power_domain {
        overrides.push("channel.power_domain_combining=true".into());
    }
    let mut config = match ExperimentConfig::load(common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    let inputs = Inputs {
        dataset: common.dataset.clone(),
        teacher: common.teacher.clone(),
        checkpoint: common.checkpoint.clone(),
    };

    let outcome = match run(command, &config, &inputs) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    print!("{}", outcome.text);
    println!("run directory: {}", outcome.run_dir.display());
    let failures = check_assertions(&common, &outcome.reports);
    for f in &failures {
        eprintln!("assertion failed: {f}");
    }
    if !outcome.passed {
        eprintln!("gradient check failed");
    }
    if failures.is_empty() && outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}
