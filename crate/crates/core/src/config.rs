//! The experiment config: one JSON document drives every subcommand.
//!
//! Unknown keys are rejected at every level. Overrides of the form
//! `dotted.path=value` are applied to the JSON tree before parsing, so they
//! are part of the digest input like any other field.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::beams::{build_codebook, CodebookSpec};
use crate::channel::ChannelConfig;
use crate::dataset::DatasetConfig;
use crate::distill::{DistillConfig, Objective};
use crate::error::{Error, Result};
use crate::nn::{StudentArch, TeacherArch, TrainConfig};
use crate::scene::SceneConfig;

/// Which model a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "teacher")]
    Teacher,
    #[serde(rename = "withoutKD")]
    WithoutKd,
    #[serde(rename = "KD")]
    Kd,
    #[serde(rename = "RKD-manifold")]
    RkdManifold,
    #[serde(rename = "RKD-beamStr")]
    RkdBeamStr,
    #[serde(rename = "RKD-both")]
    RkdBoth,
}

impl Method {
    pub const STUDENTS: [Method; 5] = [
        Method::WithoutKd,
        Method::Kd,
        Method::RkdManifold,
        Method::RkdBeamStr,
        Method::RkdBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Teacher => "teacher",
            Method::WithoutKd => "withoutKD",
            Method::Kd => "KD",
            Method::RkdManifold => "RKD-manifold",
            Method::RkdBeamStr => "RKD-beamStr",
            Method::RkdBoth => "RKD-both",
        }
    }

    /// Student objective; `None` for the teacher. `RKD-both` follows the
    /// latent/output toggles of the distill section.
    pub fn objective(self, distill: &DistillConfig) -> Option<Objective> {
        match self {
            Method::Teacher => None,
            Method::WithoutKd => Some(Objective::Supervised),
            Method::Kd => Some(Objective::Kd),
            Method::RkdManifold => Some(Objective::Rkd {
                latent: true,
                output: false,
            }),
            Method::RkdBeamStr => Some(Objective::Rkd {
                latent: false,
                output: true,
            }),
            Method::RkdBoth => Some(Objective::Rkd {
                latent: distill.latent,
                output: distill.output,
            }),
        }
    }

    pub fn needs_teacher(self) -> bool {
        !matches!(self, Method::Teacher | Method::WithoutKd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub channel: ChannelConfig,
    pub codebook: CodebookSpec,
    pub dataset: DatasetConfig,
    pub teacher: TeacherArch,
    pub student: StudentArch,
    /// Schedule for student runs.
    pub train: TrainConfig,
    /// Schedule for the teacher; the student schedule when absent.
    pub teacher_train: Option<TrainConfig>,
    pub distill: DistillConfig,
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Root under which run directories are created. Not part of the digest.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneConfig::default(),
            channel: ChannelConfig::default(),
            codebook: CodebookSpec::default(),
            dataset: DatasetConfig::default(),
            teacher: TeacherArch::default(),
            student: StudentArch::default(),
            train: TrainConfig::default(),
            teacher_train: None,
            distill: DistillConfig::default(),
            method: Method::RkdBoth,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.channel.validate()?;
        build_codebook(&self.codebook).map_err(|e| Error::Config(format!("codebook: {e}")))?;
        self.dataset.validate()?;
        if self.dataset.gps.slots < self.scene.vehicle_count {
            return Err(Error::Config(format!(
                "dataset.gps.slots ({}) must cover every vehicle ({})",
                self.dataset.gps.slots, self.scene.vehicle_count
            )));
        }
        if self.scene.episode_length < self.dataset.window + 1 {
            return Err(Error::Config(format!(
                "scene.episode_length ({}) must exceed dataset.window ({})",
                self.scene.episode_length, self.dataset.window
            )));
        }
        self.teacher.validate()?;
        self.student.validate()?;
        self.train.validate()?;
        if let Some(t) = &self.teacher_train {
            t.validate()?;
        }
        self.distill.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn teacher_schedule(&self) -> &TrainConfig {
        self.teacher_train.as_ref().unwrap_or(&self.train)
    }

    /// Parses a JSON document, applies `key=value` overrides, and validates.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        if !value.is_object() {
            return Err(Error::Config("the config must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, or starts from the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => "{}".to_string(),
        };
        Self::from_json(&text, overrides)
    }

    /// Canonical JSON: every field spelled out, object keys sorted, compact.
    /// The output directory is left out so relocating a run does not change it.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("output_dir");
        }
        value.to_string()
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Applies one `dotted.path=value` override. The value is read as JSON when
/// it parses, otherwise taken as a plain string; missing objects along the
/// path are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!(
            "override key `{path}` has an empty segment"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            _ => {
                return Err(Error::Config(format!(
                    "override `{path}`: `{}` is not an object",
                    keys[..i].join(".")
                )))
            }
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("keys is non-empty")
}
