//! Uniform rectangular array model and the beam codebook.
//!
//! Element `(m, n)` sits in row `m` (vertical) and column `n` (horizontal),
//! flattened row-major as `m * cols + n`. For azimuth `θ` and elevation `φ`,
//! both measured from broadside, its phase is
//! `2π·d·(m·sin φ + n·cos φ·sin θ)` with `d` the spacing in wavelengths.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub element_spacing_wavelengths: f64,
    pub carrier_hz: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry {
            rows: 4,
            cols: 16,
            element_spacing_wavelengths: 0.5,
            carrier_hz: 28e9,
        }
    }
}

impl ArrayGeometry {
    pub fn element_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count() == 0 || !(self.element_spacing_wavelengths > 0.0) {
            return Err(Error::Config(
                "array needs at least one element and positive spacing".into(),
            ));
        }
        Ok(())
    }
}

/// Array response `a(θ, φ)`; every entry has unit magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(pub Vec<Complex64>);

/// A beam direction in degrees, relative to broadside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamPattern {
    pub index: usize,
    /// Unit-norm weight vector `w_b`.
    pub weights: Vec<Complex64>,
    pub components: Vec<Direction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub azimuth_span_deg: f64,
    pub elevation_span_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub geometry: ArrayGeometry,
    pub sector: Sector,
    pub patterns: Vec<BeamPattern>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

pub fn steering_vector(
    geom: &ArrayGeometry,
    azimuth_deg: f64,
    elevation_deg: f64,
) -> Result<SteeringVector> {
    if !(azimuth_deg.abs() <= 90.0 && elevation_deg.abs() <= 90.0) {
        return Err(Error::OutOfSector {
            azimuth_deg,
            elevation_deg,
        });
    }
    let (th, ph) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let k = 2.0 * PI * geom.element_spacing_wavelengths;
    let (v, h) = (ph.sin(), ph.cos() * th.sin());
    let mut out = Vec::with_capacity(geom.element_count());
    for m in 0..geom.rows {
        for n in 0..geom.cols {
            out.push(Complex64::from_polar(
                1.0,
                k * (m as f64 * v + n as f64 * h),
            ));
        }
    }
    Ok(SteeringVector(out))
}

/// `w^H a` for equal-length vectors.
pub fn hermitian_dot(w: &[Complex64], a: &[Complex64]) -> Complex64 {
    w.iter().zip(a).map(|(w, a)| w.conj() * a).sum()
}

pub fn l2_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `10·log10 |w^H a|`; an exact null yields `-inf`.
pub fn array_response_db(w: &BeamPattern, a: &SteeringVector) -> Result<f64> {
    if w.weights.len() != a.0.len() {
        return Err(Error::shape(w.weights.len(), a.0.len()));
    }
    Ok(response_db(&w.weights, &a.0))
}

pub(crate) fn response_db(w: &[Complex64], a: &[Complex64]) -> f64 {
    let mag = hermitian_dot(w, a).norm();
    if mag > 0.0 {
        10.0 * mag.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// `|w_iᴴ w_j| / (‖w_i‖ ‖w_j‖)`.
pub fn beam_similarity(wi: &BeamPattern, wj: &BeamPattern) -> Result<f64> {
    vector_similarity(&wi.weights, &wj.weights)
}

pub fn vector_similarity(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("zero-norm beam weight vector".into()));
    }
    Ok((hermitian_dot(a, b).norm() / (na * nb)).min(1.0))
}

/// Combination of grid beams, expressed as (azimuth step, elevation step)
/// offsets from a base grid cell. The rule is instantiated at every base cell
/// for which all offsets land on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiBeamRule {
    pub offsets: Vec<[i32; 2]>,
    /// Azimuth indices wrap around the grid instead of falling off the edge.
    #[serde(default)]
    pub wrap_azimuth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookSpec {
    pub geometry: ArrayGeometry,
    pub azimuth_span_deg: f64,
    pub elevation_span_deg: f64,
    pub azimuth_beams: usize,
    pub elevation_beams: usize,
    pub multi_beam: Vec<MultiBeamRule>,
}

impl Default for CodebookSpec {
    /// 32 grid beams, 96 pairs and 24 triples: 152 patterns in total.
    fn default() -> Self {
        let rule = |offsets: &[[i32; 2]], wrap_azimuth| MultiBeamRule {
            offsets: offsets.to_vec(),
            wrap_azimuth,
        };
        CodebookSpec {
            geometry: ArrayGeometry::default(),
            azimuth_span_deg: 180.0,
            elevation_span_deg: 70.0,
            azimuth_beams: 16,
            elevation_beams: 2,
            multi_beam: vec![
                rule(&[[0, 0], [1, 0]], true),
                rule(&[[0, 0], [2, 0]], true),
                rule(&[[0, 0], [0, 1]], false),
                rule(&[[0, 0], [1, 1]], true),
                rule(&[[0, 0], [2, 0], [4, 0]], false),
            ],
        }
    }
}

impl CodebookSpec {
    fn grid_direction(&self, az: usize, el: usize) -> Direction {
        let step_az = self.azimuth_span_deg / self.azimuth_beams as f64;
        let step_el = self.elevation_span_deg / self.elevation_beams as f64;
        Direction {
            azimuth_deg: -0.5 * self.azimuth_span_deg + (az as f64 + 0.5) * step_az,
            elevation_deg: -0.5 * self.elevation_span_deg + (el as f64 + 0.5) * step_el,
        }
    }
}

fn matched_weights(geom: &ArrayGeometry, d: Direction) -> Result<Vec<Complex64>> {
    let a = steering_vector(geom, d.azimuth_deg, d.elevation_deg)?;
    Ok(normalized(a.0))
}

fn normalized(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let n = l2_norm(&v);
    for z in &mut v {
        *z /= n;
    }
    v
}

/// Builds the codebook: matched single beams on the azimuth × elevation grid
/// (azimuth-major within each elevation row), followed by every multi-beam
/// rule instance in rule order.
pub fn build_codebook(spec: &CodebookSpec) -> Result<Codebook> {
    spec.geometry.validate()?;
    if spec.azimuth_beams == 0 || spec.elevation_beams == 0 {
        return Err(Error::Config("beam grid must be non-empty".into()));
    }
    if !(spec.azimuth_span_deg > 0.0
        && spec.azimuth_span_deg <= 180.0
        && spec.elevation_span_deg > 0.0
        && spec.elevation_span_deg <= 180.0)
    {
        return Err(Error::Config(
            "sector spans must lie in (0, 180] degrees".into(),
        ));
    }

    let (n_az, n_el) = (spec.azimuth_beams, spec.elevation_beams);
    let mut grid = vec![Vec::new(); n_az * n_el];
    let mut patterns = Vec::new();
    let mut seen: BTreeSet<Vec<(usize, usize)>> = BTreeSet::new();

    for el in 0..n_el {
        for az in 0..n_az {
            let d = spec.grid_direction(az, el);
            let w = matched_weights(&spec.geometry, d)?;
            grid[el * n_az + az] = w.clone();
            seen.insert(vec![(az, el)]);
            patterns.push(BeamPattern {
                index: patterns.len(),
                weights: w,
                components: vec![d],
            });
        }
    }

    for rule in &spec.multi_beam {
        if !(2..=3).contains(&rule.offsets.len()) {
            return Err(Error::Config(format!(
                "multi-beam rule must combine 2 or 3 beams, got {}",
                rule.offsets.len()
            )));
        }
        for el in 0..n_el {
            for az in 0..n_az {
                let cells: Option<Vec<(usize, usize)>> = rule
                    .offsets
                    .iter()
                    .map(|&[da, de]| {
                        let e = el as i64 + de as i64;
                        let mut a = az as i64 + da as i64;
                        if rule.wrap_azimuth {
                            a = a.rem_euclid(n_az as i64);
                        }
                        ((0..n_az as i64).contains(&a) && (0..n_el as i64).contains(&e))
                            .then_some((a as usize, e as usize))
                    })
                    .collect();
                let Some(cells) = cells else { continue };
                let mut key = cells.clone();
                key.sort_unstable();
                let distinct = key.windows(2).all(|w| w[0] != w[1]);
                if !distinct || !seen.insert(key) {
                    return Err(Error::Config(format!(
                        "codebook spec produces duplicate directions at {cells:?}"
                    )));
                }
                let mut sum = vec![Complex64::new(0.0, 0.0); spec.geometry.element_count()];
                for &(a, e) in &cells {
                    for (s, w) in sum.iter_mut().zip(&grid[e * n_az + a]) {
                        *s += w;
                    }
                }
                if l2_norm(&sum) == 0.0 {
                    return Err(Error::Config(format!(
                        "beam combination {cells:?} cancels out"
                    )));
                }
                patterns.push(BeamPattern {
                    index: patterns.len(),
                    weights: normalized(sum),
                    components: cells
                        .iter()
                        .map(|&(a, e)| spec.grid_direction(a, e))
                        .collect(),
                });
            }
        }
    }

    Ok(Codebook {
        geometry: spec.geometry,
        sector: Sector {
            azimuth_span_deg: spec.azimuth_span_deg,
            elevation_span_deg: spec.elevation_span_deg,
        },
        patterns,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookMetadata {
    format_version: u32,
    geometry: ArrayGeometry,
    sector: Sector,
    element_count: usize,
    patterns: Vec<PatternMetadata>,
    weights_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternMetadata {
    index: usize,
    components: Vec<Direction>,
}

const CODEBOOK_FORMAT_VERSION: u32 = 1;

fn weight_blob(codebook: &Codebook) -> Vec<u8> {
    let mut blob = Vec::with_capacity(codebook.len() * codebook.geometry.element_count() * 16);
    for p in &codebook.patterns {
        for z in &p.weights {
            blob.extend_from_slice(&z.re.to_le_bytes());
            blob.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    blob
}

/// Hex SHA-256 of the codebook weights as written by [`write_codebook`].
pub fn codebook_digest(codebook: &Codebook) -> String {
    hex::encode(Sha256::digest(weight_blob(codebook)))
}

/// Writes `<stem>.json` metadata and `<stem>.weights.bin`, the latter holding
/// interleaved little-endian f64 `(re, im)` pairs, pattern after pattern.
pub fn write_codebook(codebook: &Codebook, dir: &Path, stem: &str) -> Result<()> {
    let weights_file = format!("{stem}.weights.bin");
    let meta = CodebookMetadata {
        format_version: CODEBOOK_FORMAT_VERSION,
        geometry: codebook.geometry,
        sector: codebook.sector,
        element_count: codebook.geometry.element_count(),
        patterns: codebook
            .patterns
            .iter()
            .map(|p| PatternMetadata {
                index: p.index,
                components: p.components.clone(),
            })
            .collect(),
        weights_file: weights_file.clone(),
    };
    let blob = weight_blob(codebook);
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_vec_pretty(&meta)?)
        .map_err(|e| Error::io(&json_path, e))?;
    let bin_path = dir.join(weights_file);
    fs::write(&bin_path, blob).map_err(|e| Error::io(&bin_path, e))
}

pub fn read_codebook(dir: &Path, stem: &str) -> Result<Codebook> {
    let json_path = dir.join(format!("{stem}.json"));
    let raw = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: CodebookMetadata = serde_json::from_slice(&raw)?;
    if meta.format_version != CODEBOOK_FORMAT_VERSION {
        return Err(Error::Version {
            found: meta.format_version,
            expected: CODEBOOK_FORMAT_VERSION,
        });
    }
    let bin_path = dir.join(&meta.weights_file);
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let n = meta.element_count;
    let expected = (meta.patterns.len() * n * 16) as u64;
    if blob.len() as u64 != expected {
        return Err(Error::Truncated {
            path: bin_path,
            expected,
            found: blob.len() as u64,
        });
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let patterns = meta
        .patterns
        .into_iter()
        .map(|p| {
            let weights = (0..n)
                .map(|_| {
                    let re = values.next().expect("length checked");
                    let im = values.next().expect("length checked");
                    Complex64::new(re, im)
                })
                .collect();
            BeamPattern {
                index: p.index,
                weights,
                components: p.components,
            }
        })
        .collect();
    Ok(Codebook {
        geometry: meta.geometry,
        sector: meta.sector,
        patterns,
    })
}
