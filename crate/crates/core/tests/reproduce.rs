use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use beamkd::config::ExperimentConfig;
use beamkd::experiment::{run, Command, Inputs};

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn tiny(out: &Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::from_json(
        "{}",
        &[
            "dataset.episodes=3".into(),
            "scene.episode_length=30".into(),
            "train.epochs=2".into(),
            "train.batch_size=16".into(),
            "seeds=[1,2]".into(),
        ],
    )
    .unwrap();
    config.output_dir = out.to_path_buf();
    config
}

#[test]
fn reproduce_twice_gives_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(Command::Reproduce, &tiny(a.path()), &Inputs::default()).unwrap();
    let second = run(Command::Reproduce, &tiny(b.path()), &Inputs::default()).unwrap();
    assert_eq!(first.run_dir.file_name(), second.run_dir.file_name());
    assert_eq!(first.text, second.text);

    let (fa, fb) = (files(&first.run_dir), files(&second.run_dir));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        // config.json records the output directory, which differs by design.
        if name != "config.json" {
            assert!(bytes == &fb[name], "{name} differs between runs");
        }
    }
    for expected in [
        "report.json",
        "report.txt",
        "manifest.json",
        "seed1/RKD-both_metrics.json",
        "seed2/teacher.params.bin",
    ] {
        assert!(
            fa.contains_key(expected),
            "missing {expected}: {:?}",
            fa.keys().collect::<Vec<_>>()
        );
    }
    // No staging directories are left behind.
    let leftovers: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn a_failed_run_leaves_no_partial_directory() {
    let out = tempfile::tempdir().unwrap();
    let config = tiny(out.path());
    let inputs = Inputs {
        dataset: Some(out.path().join("does-not-exist")),
        ..Inputs::default()
    };
    assert!(run(Command::TrainTeacher, &config, &inputs).is_err());
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 0);
}
