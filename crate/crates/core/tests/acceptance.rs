//! Acceptance run: one PASS / FAIL / WARN line per criterion. Exits non-zero
//! when any criterion fails.

mod support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use beamkd::checks::TOLERANCE;
use beamkd::config::{ExperimentConfig, Method};
use beamkd::dataset::read_dataset;
use beamkd::experiment::{
    generate_dataset, grad_check_report, run, Command, Inputs, GRAD_CHECK_CONFIGURATIONS,
};
use serde_json::Value;

const GRAD_BUDGET: Duration = Duration::from_secs(120);
const REPRODUCE_BUDGET: Duration = Duration::from_secs(20 * 60);
const MAX_PARAM_RATIO: f64 = 0.15;

enum Status {
    Pass,
    Fail,
    Warn,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn pass(detail: impl Into<String>) -> Self {
        Outcome {
            status: Status::Pass,
            detail: detail.into(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Outcome {
            status: Status::Fail,
            detail: detail.into(),
        }
    }

    fn check(ok: bool, detail: impl Into<String>) -> Self {
        if ok {
            Self::pass(detail)
        } else {
            Self::fail(detail)
        }
    }
}

/// Runs one criterion, turning a panic into a failure with its message.
fn criterion(id: usize, name: &str, failed: &mut bool, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Outcome::fail(msg)
    });
    let tag = match outcome.status {
        Status::Pass => "PASS",
        Status::Warn => "WARN",
        Status::Fail => {
            *failed = true;
            "FAIL"
        }
    };
    println!(
        "[{tag}] {id}. {name}: {} ({:.1}s)",
        outcome.detail,
        start.elapsed().as_secs_f64()
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(base).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let (results, _) = grad_check_report(1).expect("gradient suite runs");
    let elapsed = start.elapsed();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .unwrap();
    let configurations = results.iter().map(|r| r.configurations).min().unwrap_or(0);
    let failing: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let detail = format!(
        "{} checks x {configurations} configurations, worst rel err {:.2e} ({}), limit {TOLERANCE:.0e}, {:.1}s",
        results.len(),
        worst.max_relative_error,
        worst.name,
        elapsed.as_secs_f64()
    );
    if !failing.is_empty() {
        return Outcome::fail(format!("{detail}; failing: {}", failing.join(", ")));
    }
    Outcome::check(
        configurations >= GRAD_CHECK_CONFIGURATIONS && elapsed < GRAD_BUDGET,
        detail,
    )
}

/// The full default comparison: three seeds on the desk dataset.
fn distillation_direction(report: &Value, elapsed: Duration) -> Outcome {
    let median = |m: Method| report["medians"][m.name()]["mpr_percent"].as_f64().unwrap();
    let (without, kd, rkd) = (
        median(Method::WithoutKd),
        median(Method::Kd),
        median(Method::RkdBoth),
    );
    let kd_ok = report["ordering"]["kd_ge_without_kd"].as_bool().unwrap();
    let rkd_ok = report["ordering"]["rkd_both_ge_without_kd"]
        .as_bool()
        .unwrap();
    assert_eq!(kd_ok, kd >= without);
    assert_eq!(rkd_ok, rkd >= without);
    let deltas: Vec<String> = report["mpr_deltas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| {
            format!(
                "s{}: KD {:+.3}, RKD {:+.3}",
                d["seed"],
                d["kd_minus_without_kd"].as_f64().unwrap(),
                d["rkd_both_minus_without_kd"].as_f64().unwrap()
            )
        })
        .collect();
    let d = &report["dataset"];
    let detail = format!(
        "{} samples / {} episodes, seeds {}; median test MPR RKD-both {rkd:.3}, KD {kd:.3}, withoutKD {without:.3}; per-seed [{}]; {:.0}s of {}s",
        d["samples"],
        d["episodes"],
        report["seeds"],
        deltas.join("; "),
        elapsed.as_secs_f64(),
        REPRODUCE_BUDGET.as_secs()
    );
    let sized = (1500..=2500).contains(&d["samples"].as_u64().unwrap())
        && d["episodes"].as_u64().unwrap() >= 10;
    let three_seeds = report["seeds"].as_array().unwrap().len() == 3;
    Outcome::check(
        kd_ok && rkd_ok && sized && three_seeds && elapsed <= REPRODUCE_BUDGET,
        detail,
    )
}

fn parameter_economy(report: &Value) -> Outcome {
    let p = &report["params"];
    let (teacher, student) = (
        p["teacher"].as_u64().unwrap(),
        p["student"].as_u64().unwrap(),
    );
    let ratio = student as f64 / teacher as f64;
    Outcome::check(
        ratio <= MAX_PARAM_RATIO,
        format!("student {student} / teacher {teacher} = {ratio:.4} (limit {MAX_PARAM_RATIO})"),
    )
}

fn determinism(root: &Path) -> Outcome {
    let config = |dir: &str| {
        let mut c = ExperimentConfig::from_json(
            "{}",
            &[
                "dataset.episodes=3".into(),
                "scene.episode_length=40".into(),
                "train.epochs=3".into(),
                "seeds=[1,2]".into(),
            ],
        )
        .unwrap();
        c.output_dir = root.join(dir);
        c
    };
    let a = run(Command::Reproduce, &config("a"), &Inputs::default()).unwrap();
    let b = run(Command::Reproduce, &config("b"), &Inputs::default()).unwrap();
    let (fa, fb) = (files(&a.run_dir), files(&b.run_dir));
    assert_eq!(
        fa.keys().collect::<Vec<_>>(),
        fb.keys().collect::<Vec<_>>(),
        "artifact lists differ"
    );
    let metric_files: Vec<&String> = fa
        .keys()
        .filter(|k| k.ends_with(".json") && k.as_str() != "config.json")
        .collect();
    let differing: Vec<&&String> = metric_files.iter().filter(|k| fa[**k] != fb[**k]).collect();
    assert!(differing.is_empty(), "differing files: {differing:?}");

    // Dataset round trip on the default dataset.
    let data = generate_dataset(&ExperimentConfig::default()).unwrap();
    let dir = root.join("dataset");
    data.write(&dir).unwrap();
    let (manifest, samples) = read_dataset(&dir.join("dataset")).unwrap();
    let exact = manifest == data.manifest
        && samples == data.samples
        && samples.iter().zip(&data.samples).all(|(x, y)| {
            x.rss_vector
                .iter()
                .map(|v| v.to_bits())
                .eq(y.rss_vector.iter().map(|v| v.to_bits()))
        });
    Outcome::check(
        exact,
        format!(
            "{} JSON files byte-identical across two reproduce runs; {} samples round-trip {}",
            metric_files.len(),
            samples.len(),
            if exact {
                "bit-exactly"
            } else {
                "with differences"
            }
        ),
    )
}

fn dataset_sanity() -> Outcome {
    let data = generate_dataset(&ExperimentConfig::default()).unwrap();
    let s = data.label_summary();
    let mut order: Vec<usize> = (0..s.histogram.len()).collect();
    order.sort_by_key(|&b| (std::cmp::Reverse(s.histogram[b]), b));
    let top: Vec<String> = order
        .iter()
        .take(10)
        .map(|&b| format!("{b}:{}", s.histogram[b]))
        .collect();
    let detail = format!(
        "{}/{} labels = argmax(rss); top-10 coverage {:.3} ({} of 10 single-beam); top labels [{}]",
        s.consistent_labels,
        s.samples,
        s.top10_coverage,
        s.top10_single_beam,
        top.join(" ")
    );
    if s.consistent_labels != s.samples {
        Outcome::fail(detail)
    } else if !s.concentrated() {
        Outcome {
            status: Status::Warn,
            detail: format!("{detail}; coverage not above 0.5"),
        }
    } else {
        Outcome::pass(detail)
    }
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut failed = false;

    criterion(1, "gradient fidelity", &mut failed, gradient_fidelity);
    criterion(2, "channel oracle equivalence", &mut failed, || {
        Outcome::pass(support::channel::verify())
    });
    criterion(3, "hyperbolic geometry", &mut failed, || {
        Outcome::pass(format!(
            "{}; {}",
            support::geometry::verify_metric_axioms(),
            support::geometry::verify_mobius_identities()
        ))
    });
    criterion(4, "metrics oracle", &mut failed, || {
        Outcome::pass(support::metrics::verify())
    });
    criterion(5, "codebook", &mut failed, || {
        Outcome::pass(support::codebook::verify())
    });

    let config = ExperimentConfig {
        output_dir: scratch.path().join("reproduce"),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let reproduced = panic::catch_unwind(AssertUnwindSafe(|| {
        let outcome = run(Command::Reproduce, &config, &Inputs::default()).expect("reproduce runs");
        let text = fs::read_to_string(outcome.run_dir.join("report.json")).unwrap();
        serde_json::from_str::<Value>(&text).unwrap()
    }));
    let elapsed = start.elapsed();
    criterion(
        6,
        "distillation direction of effect",
        &mut failed,
        || match &reproduced {
            Ok(report) => distillation_direction(report, elapsed),
            Err(_) => Outcome::fail("reproduce did not complete"),
        },
    );
    criterion(7, "parameter economy", &mut failed, || match &reproduced {
        Ok(report) => parameter_economy(report),
        Err(_) => Outcome::fail("reproduce did not complete"),
    });
    criterion(8, "determinism", &mut failed, || {
        determinism(&scratch.path().join("determinism"))
    });
    criterion(9, "dataset sanity", &mut failed, dataset_sanity);

    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
