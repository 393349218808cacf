//! `manifest.json` + `tensors.bin`.
//!
//! `tensors.bin` starts with a 64-byte header (`BKDTENS\0`, u32 LE format
//! version, u64 LE sample count, zero padding), followed by one section per
//! array in manifest order. Every section is little-endian f32, row-major,
//! and starts on a 64-byte boundary. The last 32 bytes are the SHA-256 of
//! everything before them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BevGrid, DatasetManifest, GpsFrame, RadarFrame, Sample, SensingFrame};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BKDTENS\0";
const ALIGN: usize = 64;
const HEADER_BYTES: usize = 64;
const DIGEST_BYTES: usize = 32;
const MANIFEST_FILE: &str = "manifest.json";
const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Shapes {
    window: usize,
    radar_points: usize,
    radar_columns: usize,
    bev_rows: usize,
    bev_cols: usize,
    bev_cell_size_m: f64,
    gps_slots: usize,
    gps_columns: usize,
    beams: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format_version: u32,
    dataset: DatasetManifest,
    shapes: Shapes,
    arrays: Vec<ArrayEntry>,
    tensors_file: String,
    /// Length of `tensors.bin` without the trailing digest.
    tensors_bytes: u64,
    tensors_digest: String,
}

fn shapes_of(samples: &[Sample]) -> Result<Shapes> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invalid("cannot write an empty dataset".into()))?;
    let f0 = first
        .window
        .first()
        .ok_or_else(|| Error::Invalid("samples need a non-empty window".into()))?;
    let shapes = Shapes {
        window: first.window.len(),
        radar_points: f0.radar.points.len(),
        radar_columns: 4,
        bev_rows: f0.bev.rows,
        bev_cols: f0.bev.cols,
        bev_cell_size_m: f0.bev.cell_size_m,
        gps_slots: f0.gps.slots.len(),
        gps_columns: 4,
        beams: first.rss_vector.len(),
    };
    for s in samples {
        let ok = s.window.len() == shapes.window
            && s.rss_vector.len() == shapes.beams
            && s.window.iter().all(|f| {
                f.radar.points.len() == shapes.radar_points
                    && f.radar.mask.len() == shapes.radar_points
                    && f.bev.rows == shapes.bev_rows
                    && f.bev.cols == shapes.bev_cols
                    && f.bev.cell_size_m == shapes.bev_cell_size_m
                    && f.bev.occupancy.len() == shapes.bev_rows * shapes.bev_cols
                    && f.gps.slots.len() == shapes.gps_slots
                    && f.gps.mask.len() == shapes.gps_slots
            });
        if !ok {
            return Err(Error::Invalid(format!(
                "sample (episode {}, t {}) does not match the dataset shapes",
                s.episode_id, s.t
            )));
        }
    }
    Ok(shapes)
}

type Extract = fn(&Sample, &mut Vec<f32>);

fn flag(b: bool) -> f32 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn array_specs(sh: &Shapes) -> Vec<(&'static str, Vec<usize>, Extract)> {
    let (p, k, h, w, g, b) = (
        sh.window,
        sh.radar_points,
        sh.bev_rows,
        sh.bev_cols,
        sh.gps_slots,
        sh.beams,
    );
    vec![
        ("episode_id", vec![], |s, o| o.push(s.episode_id as f32)),
        ("t", vec![], |s, o| o.push(s.t as f32)),
        ("label", vec![], |s, o| o.push(s.label as f32)),
        ("rss", vec![b], |s, o| o.extend_from_slice(&s.rss_vector)),
        ("radar", vec![p, k, 4], |s, o| {
            s.window
                .iter()
                .for_each(|f| f.radar.points.iter().for_each(|pt| o.extend_from_slice(pt)))
        }),
        ("radar_mask", vec![p, k], |s, o| {
            s.window
                .iter()
                .for_each(|f| o.extend(f.radar.mask.iter().map(|m| flag(*m))))
        }),
        ("bev", vec![p, h, w], |s, o| {
            s.window
                .iter()
                .for_each(|f| o.extend_from_slice(&f.bev.occupancy))
        }),
        ("gps", vec![p, g, 4], |s, o| {
            s.window
                .iter()
                .for_each(|f| f.gps.slots.iter().for_each(|v| o.extend_from_slice(v)))
        }),
        ("gps_mask", vec![p, g], |s, o| {
            s.window
                .iter()
                .for_each(|f| o.extend(f.gps.mask.iter().map(|m| flag(*m))))
        }),
    ]
}

fn pad_to_alignment(buf: &mut Vec<u8>) {
    let rem = buf.len() % ALIGN;
    if rem != 0 {
        buf.resize(buf.len() + ALIGN - rem, 0);
    }
}

pub fn write_dataset(manifest: &DatasetManifest, samples: &[Sample], dir: &Path) -> Result<()> {
    if manifest.counts.samples != samples.len() {
        return Err(Error::Invalid(format!(
            "manifest counts {} samples but {} were given",
            manifest.counts.samples,
            samples.len()
        )));
    }
    let shapes = shapes_of(samples)?;
    let n = samples.len();

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.resize(HEADER_BYTES, 0);

    let mut arrays = Vec::new();
    let mut values = Vec::new();
    for (name, inner, extract) in array_specs(&shapes) {
        pad_to_alignment(&mut buf);
        values.clear();
        for s in samples {
            extract(s, &mut values);
        }
        let mut shape = vec![n];
        shape.extend(inner);
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let offset = buf.len() as u64;
        for v in &values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape,
            offset,
            bytes: buf.len() as u64 - offset,
        });
    }
    let digest = Sha256::digest(&buf);
    let tensors_bytes = buf.len() as u64;
    buf.extend_from_slice(&digest);

    let file = ManifestFile {
        format_version: FORMAT_VERSION,
        dataset: manifest.clone(),
        shapes,
        arrays,
        tensors_file: TENSORS_FILE.into(),
        tensors_bytes,
        tensors_digest: hex::encode(digest),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tpath = dir.join(TENSORS_FILE);
    fs::write(&tpath, &buf).map_err(|e| Error::io(&tpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(&mpath, e))
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let value: serde_json::Value = serde_json::from_slice(&raw)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Invalid("manifest has no format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    let file: ManifestFile = serde_json::from_value(value)?;

    let tpath = dir.join(&file.tensors_file);
    let buf = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
    if buf.len() >= 12 && &buf[..8] == MAGIC {
        let v = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
        if v != FORMAT_VERSION {
            return Err(Error::Version {
                found: v,
                expected: FORMAT_VERSION,
            });
        }
    }
    let expected = file.tensors_bytes + DIGEST_BYTES as u64;
    if (buf.len() as u64) < expected {
        return Err(Error::Truncated {
            path: tpath,
            expected,
            found: buf.len() as u64,
        });
    }
    if buf.len() as u64 != expected || &buf[..8] != MAGIC {
        return Err(Error::Invalid(format!(
            "{} is not a tensors file of the declared size",
            tpath.display()
        )));
    }
    let body = &buf[..file.tensors_bytes as usize];
    let digest = Sha256::digest(body);
    if digest.as_slice() != &buf[body.len()..] || hex::encode(digest) != file.tensors_digest {
        return Err(Error::Digest(tpath));
    }

    let sh = file.shapes;
    let n = file.dataset.counts.samples;
    let specs = array_specs(&sh);
    if file.arrays.len() != specs.len() {
        return Err(Error::Invalid(
            "manifest array list does not match this format".into(),
        ));
    }
    let mut cols: Vec<&[u8]> = Vec::new();
    for ((name, inner, _), entry) in specs.iter().zip(&file.arrays) {
        let mut shape = vec![n];
        shape.extend(inner.iter().copied());
        if entry.name != *name || entry.shape != shape || entry.dtype != "f32" {
            return Err(Error::Invalid(format!("unexpected array entry {entry:?}")));
        }
        let (o, b) = (entry.offset as usize, entry.bytes as usize);
        if b != shape.iter().product::<usize>() * 4 || o + b > body.len() {
            return Err(Error::Invalid(format!(
                "array {name} lies outside the tensors file"
            )));
        }
        cols.push(&body[o..o + b]);
    }
    let f32s = |bytes: &[u8], start: usize, len: usize| -> Vec<f32> {
        bytes[start * 4..(start + len) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    };

    let (p, k, h, w, g, b) = (
        sh.window,
        sh.radar_points,
        sh.bev_rows,
        sh.bev_cols,
        sh.gps_slots,
        sh.beams,
    );
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let scalar = |c: usize| f32s(cols[c], i, 1)[0];
        let radar = f32s(cols[4], i * p * k * 4, p * k * 4);
        let radar_mask = f32s(cols[5], i * p * k, p * k);
        let bev = f32s(cols[6], i * p * h * w, p * h * w);
        let gps = f32s(cols[7], i * p * g * 4, p * g * 4);
        let gps_mask = f32s(cols[8], i * p * g, p * g);
        let window = (0..p)
            .map(|f| SensingFrame {
                radar: RadarFrame {
                    points: radar[f * k * 4..(f + 1) * k * 4]
                        .chunks_exact(4)
                        .map(|c| [c[0], c[1], c[2], c[3]])
                        .collect(),
                    mask: radar_mask[f * k..(f + 1) * k]
                        .iter()
                        .map(|m| *m != 0.0)
                        .collect(),
                },
                bev: BevGrid {
                    rows: h,
                    cols: w,
                    cell_size_m: sh.bev_cell_size_m,
                    occupancy: bev[f * h * w..(f + 1) * h * w].to_vec(),
                },
                gps: GpsFrame {
                    slots: gps[f * g * 4..(f + 1) * g * 4]
                        .chunks_exact(4)
                        .map(|c| [c[0], c[1], c[2], c[3]])
                        .collect(),
                    mask: gps_mask[f * g..(f + 1) * g]
                        .iter()
                        .map(|m| *m != 0.0)
                        .collect(),
                },
            })
            .collect();
        samples.push(Sample {
            episode_id: scalar(0) as u32,
            t: scalar(1) as u32,
            label: scalar(2) as u32,
            rss_vector: f32s(cols[3], i * b, b),
            window,
        });
    }
    Ok((file.dataset, samples))
}
