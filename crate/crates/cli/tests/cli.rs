use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: [&str; 8] = [
    "--set",
    "dataset.episodes=3",
    "--set",
    "scene.episode_length=30",
    "--set",
    "train.epochs=2",
    "--set",
    "train.batch_size=16",
];

fn beamkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamkd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn is_empty_or_missing(dir: &Path) -> bool {
    !dir.exists() || fs::read_dir(dir).unwrap().next().is_none()
}

fn run_dir(o: &Output) -> std::path::PathBuf {
    let out = stdout(o);
    let line = out
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    line.into()
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.json");
    fs::write(&config, "{ \"seeds\": [1, ").unwrap();
    let out = tmp.path().join("out");
    let o = beamkd(&[
        "dataset-gen",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(is_empty_or_missing(&out));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("typo.json");
    fs::write(&config, r#"{ "scene": { "vehicle_cuont": 4 } }"#).unwrap();
    let out = tmp.path().join("out");
    let o = beamkd(&[
        "scene-gen",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vehicle_cuont"), "{}", stderr(&o));
    assert!(is_empty_or_missing(&out));

    let o = beamkd(&[
        "scene-gen",
        "--set",
        "nonsense.key=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(is_empty_or_missing(&out));
}

#[test]
fn grad_check_passes_and_prints_each_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let o = beamkd(&["grad-check", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for name in [
        "focal loss",
        "kl distillation",
        "latent relation",
        "output relation",
    ] {
        assert!(
            text.to_lowercase().contains(name),
            "{name} missing from:\n{text}"
        );
    }
}

#[test]
fn seed_ranges_expand_inclusively() {
    let tmp = tempfile::tempdir().unwrap();
    let o = beamkd(&[
        "scene-gen",
        "--seed",
        "3..5",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let config: Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&o).join("config.json")).unwrap())
            .unwrap();
    assert_eq!(config["seeds"], serde_json::json!([3, 4, 5]));

    for bad in ["5..3", "x", "1..y"] {
        let o = beamkd(&[
            "scene-gen",
            "--seed",
            bad,
            "--out",
            tmp.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "--seed {bad}");
    }
}

#[test]
fn unmet_mpr_assertion_exits_1_and_met_one_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let data = beamkd(&[&["dataset-gen", "--seed", "1", "--out", out][..], &TINY].concat());
    assert_eq!(data.status.code(), Some(0), "{}", stderr(&data));
    let dataset = run_dir(&data).join("dataset");
    let dataset = dataset.to_str().unwrap();

    let base = [
        &[
            "train-teacher",
            "--seed",
            "1",
            "--out",
            out,
            "--dataset",
            dataset,
        ][..],
        &TINY,
    ]
    .concat();
    let o = beamkd(&[&base[..], &["--assert-mpr-min", "100.5"]].concat());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("assertion failed"));

    let o = beamkd(
        &[
            &base[..],
            &["--assert-mpr-min", "0", "--assert-topk", "10:0"],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("nowhere");
    let o = beamkd(&[
        "train-teacher",
        "--dataset",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(is_empty_or_missing(&out));
}
