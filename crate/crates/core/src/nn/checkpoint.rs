//! Model checkpoints: a JSON header next to a little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{Mlp, MlpSpec, Parameterized};
use super::model::{TeacherNet, TeacherSpec};
use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "kebab-case")]
pub enum ModelSpec {
    Student { network: MlpSpec },
    Teacher { network: TeacherSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Student(Mlp),
    Teacher(TeacherNet),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Student(m) => ModelSpec::Student { network: m.spec() },
            Model::Teacher(t) => ModelSpec::Teacher { network: t.spec() },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Student(m) => m.param_count(),
            Model::Teacher(t) => t.param_count(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Model::Student(m) => m.params(),
            Model::Teacher(t) => t.params(),
        }
    }

    fn from_spec(spec: &ModelSpec, params: &[f64]) -> Result<Self> {
        // Parameters are overwritten right away; the seed only fixes shapes.
        let mut rng = seed::rng(0, &[]);
        let mut model = match spec {
            ModelSpec::Student { network } => Model::Student(Mlp::new(network, &mut rng)?),
            ModelSpec::Teacher { network } => Model::Teacher(TeacherNet::new(network, &mut rng)?),
        };
        if model.param_count() != params.len() {
            return Err(Error::shape(
                format!("{} parameters", model.param_count()),
                params.len(),
            ));
        }
        match &mut model {
            Model::Student(m) => m.read_params(params),
            Model::Teacher(t) => t.read_params(params),
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelSpec,
    pub seed: u64,
    pub config_digest: String,
    pub param_count: usize,
    pub params_file: String,
    pub params_sha256: String,
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, String) {
    let blob = format!("{stem}.params.bin");
    (dir.join(format!("{stem}.json")), dir.join(&blob), blob)
}

/// Writes `<stem>.json` and `<stem>.params.bin` into `dir`.
pub fn save_checkpoint(
    model: &Model,
    seed: u64,
    config_digest: &str,
    dir: &Path,
    stem: &str,
) -> Result<()> {
    let params = model.params();
    let mut blob = Vec::with_capacity(params.len() * 4);
    for p in &params {
        blob.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let (hpath, bpath, blob_name) = paths(dir, stem);
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        model: model.spec(),
        seed,
        config_digest: config_digest.to_string(),
        param_count: params.len(),
        params_file: blob_name,
        params_sha256: hex::encode(Sha256::digest(&blob)),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&bpath, &blob).map_err(|e| Error::io(&bpath, e))?;
    fs::write(&hpath, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&hpath, e))
}

/// Reads a checkpoint written by [`save_checkpoint`] given its header path.
pub fn load_checkpoint(header_path: &Path) -> Result<(CheckpointHeader, Model)> {
    let raw = fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&raw)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0);
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: CheckpointHeader = serde_json::from_value(value)?;
    let bpath = header_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&header.params_file);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let expected = header.param_count as u64 * 4;
    if (blob.len() as u64) < expected {
        return Err(Error::Truncated {
            path: bpath,
            expected,
            found: blob.len() as u64,
        });
    }
    if blob.len() as u64 != expected || hex::encode(Sha256::digest(&blob)) != header.params_sha256 {
        return Err(Error::Digest(bpath));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let model = Model::from_spec(&header.model, &params)?;
    Ok((header, model))
}
