//! Windowed multimodal samples with RSS labels, splits and on-disk format.

mod bev;
mod features;
mod gps;
mod io;
mod radar;

use serde::{Deserialize, Serialize};

pub use bev::{synthesize_bev, BevConfig, BevGrid};
pub use features::{student_input_dim, student_row, teacher_input_dim, teacher_row, FeatureLayout};
pub use gps::{synthesize_gps, GpsConfig, GpsFrame};
pub use io::{read_dataset, write_dataset, FORMAT_VERSION};
pub use radar::{highest_point_sampling, synthesize_radar, RadarConfig, RadarFrame, RadarPoint};

use crate::beams::Codebook;
use crate::channel::{self, ChannelConfig};
use crate::error::{Error, Result};
use crate::scene::{self, Episode, SceneConfig};
use crate::seed;

const STREAM_SENSING: u64 = 21;
const STREAM_SPLIT: u64 = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Observation window length `P`.
    pub window: usize,
    pub episodes: usize,
    /// Seed for sensing noise and shadowing; episode mobility seeds derive
    /// from the scene seed.
    pub seed: u64,
    pub radar: RadarConfig,
    pub bev: BevConfig,
    pub gps: GpsConfig,
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            window: 5,
            episodes: 20,
            seed: 0,
            radar: RadarConfig::default(),
            bev: BevConfig::default(),
            gps: GpsConfig::default(),
            split_fractions: [0.7, 0.15, 0.15],
            split_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.episodes == 0 {
            return Err(Error::Config(
                "window and episodes must be at least 1".into(),
            ));
        }
        validate_fractions(&self.split_fractions)?;
        self.radar.validate()?;
        self.bev.validate()?;
        self.gps.validate()
    }
}

fn validate_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {f:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

/// One time step of sensing.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingFrame {
    pub radar: RadarFrame,
    pub bev: BevGrid,
    pub gps: GpsFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub episode_id: u32,
    /// Last step of the observation window; the label belongs to `t + 1`.
    pub t: u32,
    pub window: Vec<SensingFrame>,
    /// Per-beam RSS summed over vehicles, dBm.
    pub rss_vector: Vec<f32>,
    pub label: u32,
}

/// Sample indices per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub counts: Counts,
    pub splits: Splits,
    pub split_fractions: [f64; 3],
    pub seed: u64,
    /// Hex SHA-256 of the generating experiment config.
    pub config_digest: String,
    /// Hex SHA-256 of the codebook weights the labels refer to.
    pub codebook_digest: String,
    pub codebook_size: usize,
}

/// Sensing features for every frame of an episode.
pub fn sense_episode(
    episode: &Episode,
    episode_id: u32,
    config: &DatasetConfig,
) -> Vec<SensingFrame> {
    episode
        .frames
        .iter()
        .enumerate()
        .map(|(k, frame)| {
            let mut rng = seed::rng(config.seed, &[STREAM_SENSING, episode_id as u64, k as u64]);
            SensingFrame {
                radar: synthesize_radar(&frame.vehicles, &episode.scene, &config.radar, &mut rng),
                bev: synthesize_bev(&frame.vehicles, &episode.scene.buildings, &config.bev),
                gps: synthesize_gps(&frame.vehicles, &config.gps, &mut rng),
            }
        })
        .collect()
}

/// Per-beam RSS totals for one frame, rounded to storage precision, and the
/// label computed on the rounded vector.
pub fn frame_label(
    episode: &Episode,
    step: usize,
    codebook: &Codebook,
    channel: &ChannelConfig,
    shadow_seed: u64,
) -> Result<(Vec<f32>, u32)> {
    let frame = &episode.frames[step];
    let rss = channel::rss_matrix(
        &episode.scene,
        &frame.vehicles,
        codebook,
        channel,
        shadow_seed,
        step as u64,
    )?;
    let totals: Vec<f32> = channel::beam_totals(&rss)
        .into_iter()
        .map(|x| x as f32)
        .collect();
    let label = channel::argmax_lowest(totals.iter().map(|&x| x as f64))?;
    Ok((totals, label as u32))
}

/// One sample per window end `t ∈ [P-1, frames-1)`, labelled with the optimal
/// beam of step `t + 1`.
pub fn build_samples(
    episode: &Episode,
    episode_id: u32,
    codebook: &Codebook,
    channel: &ChannelConfig,
    config: &DatasetConfig,
) -> Result<Vec<Sample>> {
    let p = config.window;
    let n = episode.frames.len();
    if n < p + 1 {
        return Err(Error::Invalid(format!(
            "episode has {n} frames; a window of {p} plus the predicted step needs {}",
            p + 1
        )));
    }
    let sensing = sense_episode(episode, episode_id, config);
    let shadow_seed = seed::derive(config.seed, &[episode_id as u64]);
    let mut out = Vec::with_capacity(n - p);
    for t in (p - 1)..(n - 1) {
        let (rss_vector, label) = frame_label(episode, t + 1, codebook, channel, shadow_seed)?;
        out.push(Sample {
            episode_id,
            t: t as u32,
            window: sensing[t + 1 - p..=t].to_vec(),
            rss_vector,
            label,
        });
    }
    Ok(out)
}

pub fn episode_scene_config(scene: &SceneConfig, episode: usize) -> SceneConfig {
    SceneConfig {
        seed: seed::derive(scene.seed, &[episode as u64]),
        ..scene.clone()
    }
}

pub fn generate_samples(
    scene: &SceneConfig,
    channel: &ChannelConfig,
    codebook: &Codebook,
    config: &DatasetConfig,
) -> Result<Vec<Sample>> {
    config.validate()?;
    channel.validate()?;
    let mut out = Vec::new();
    for e in 0..config.episodes {
        let ep = scene::generate_episode(&episode_scene_config(scene, e))?;
        out.extend(build_samples(&ep, e as u32, codebook, channel, config)?);
    }
    Ok(out)
}

/// Shuffles episodes, lays their samples out in time order, and cuts the
/// sequence at the requested fractions. At most two episodes straddle a
/// split boundary.
pub fn split_dataset(
    samples: &[Sample],
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot split an empty dataset".into()));
    }
    validate_fractions(&fractions)?;
    let mut episodes: Vec<u32> = samples.iter().map(|s| s.episode_id).collect();
    episodes.sort_unstable();
    episodes.dedup();
    let mut rng = seed::rng(seed, &[STREAM_SPLIT]);
    rand::seq::SliceRandom::shuffle(episodes.as_mut_slice(), &mut rng);

    let mut order: Vec<usize> = Vec::with_capacity(samples.len());
    for e in &episodes {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].episode_id == *e)
            .collect();
        idx.sort_by_key(|&i| (samples[i].t, i));
        order.extend(idx);
    }

    let n = samples.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let splits = Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    Ok(DatasetManifest {
        counts: Counts {
            samples: n,
            train: splits.train.len(),
            val: splits.val.len(),
            test: splits.test.len(),
        },
        splits,
        split_fractions: fractions,
        seed,
        config_digest: String::new(),
        codebook_digest: String::new(),
        codebook_size: samples[0].rss_vector.len(),
    })
}

/// Count of each label over `0..beams`.
pub fn label_histogram(samples: &[Sample], beams: usize) -> Vec<usize> {
    let mut h = vec![0; beams];
    for s in samples {
        if let Some(c) = h.get_mut(s.label as usize) {
            *c += 1;
        }
    }
    h
}

/// Fraction of samples covered by the `k` most frequent labels.
pub fn top_label_coverage(histogram: &[usize], k: usize) -> f64 {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut sorted = histogram.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.iter().take(k).sum::<usize>() as f64 / total as f64
}
