//! Specular image-method ray tracing and per-beam received signal strength.
//!
//! Reflectors are the vertical walls of every building box plus an optional
//! ground plane at `z = 0`. Paths up to second order are found by mirroring
//! the transmitter across one or two reflector planes, intersecting the
//! mirrored segment with the reflectors, and checking every leg for blockage.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beams::{self, ArrayGeometry, BeamPattern, Codebook};
use crate::error::{Error, Result};
use crate::scene::{BuildingBox, Scene, Vec3, VehicleState};
use crate::seed;

pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;

/// RSS value for a beam that reaches no path.
pub const NO_COVERAGE: f64 = f64::NEG_INFINITY;

const STREAM_SHADOW: u64 = 11;
const EPS_T: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub delay_s: f64,
    pub length_m: f64,
    pub reflection_count: u8,
    pub surface_loss_db: f64,
    /// Departure azimuth lies within ±90° of broadside.
    pub in_sector: bool,
    pub bounce_points: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub vehicle_id: u32,
    pub paths: Vec<PropagationPath>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossModel {
    /// Loss at the 1 m reference distance.
    pub p0_db: f64,
    pub exponent_los: f64,
    pub exponent_reflected: f64,
    pub shadow_sigma_db: f64,
    pub carrier_hz: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            p0_db: 61.34,
            exponent_los: 2.0,
            exponent_reflected: 3.0,
            shadow_sigma_db: 4.0,
            carrier_hz: 28e9,
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent_los > 0.0 && self.exponent_reflected > 0.0) {
            return Err(Error::Config("path-loss exponents must be positive".into()));
        }
        if !(self.shadow_sigma_db >= 0.0) || !self.p0_db.is_finite() || !(self.carrier_hz > 0.0) {
            return Err(Error::Config("invalid path-loss model".into()));
        }
        Ok(())
    }

    pub fn exponent_for(&self, path: &PropagationPath) -> f64 {
        if path.reflection_count == 0 {
            self.exponent_los
        } else {
            self.exponent_reflected
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub path_loss: PathLossModel,
    pub max_reflections: u8,
    /// Combine paths as `10·log10 Σ 10^{x/10}` instead of summing dB terms.
    pub power_domain_combining: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            path_loss: PathLossModel::default(),
            max_reflections: 2,
            power_domain_combining: false,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_reflections > 2 {
            return Err(Error::Config("max_reflections must be at most 2".into()));
        }
        self.path_loss.validate()
    }
}

/// Axis-aligned reflector: the plane `axis = value`, bounded on the two other
/// axes, reflecting toward `outward`.
#[derive(Debug, Clone, Copy)]
struct Face {
    axis: usize,
    value: f64,
    outward: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    loss_db: f64,
}

impl Face {
    fn others(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    fn in_front(&self, p: Vec3) -> bool {
        (p.axis(self.axis) - self.value) * self.outward > 0.0
    }

    fn mirror(&self, p: Vec3) -> Vec3 {
        p.with_axis(self.axis, 2.0 * self.value - p.axis(self.axis))
    }

    /// Where the segment `from → to` crosses the face, if it does.
    fn hit(&self, from: Vec3, to: Vec3) -> Option<Vec3> {
        let (fa, ta) = (from.axis(self.axis), to.axis(self.axis));
        let denom = ta - fa;
        if denom == 0.0 {
            return None;
        }
        let t = (self.value - fa) / denom;
        if !(t > EPS_T && t < 1.0 - EPS_T) {
            return None;
        }
        let p = from + (to - from) * t;
        let p = p.with_axis(self.axis, self.value);
        let inside = self
            .others()
            .iter()
            .enumerate()
            .all(|(k, &a)| p.axis(a) >= self.lo[k] && p.axis(a) <= self.hi[k]);
        inside.then_some(p)
    }
}

fn faces(scene: &Scene) -> Vec<Face> {
    let mut out = Vec::new();
    for b in &scene.buildings {
        let (lo, hi) = (b.min_corner, b.max_corner);
        for axis in 0..2 {
            let other = 1 - axis;
            let bounds_lo = [lo.axis(other), lo.z];
            let bounds_hi = [hi.axis(other), hi.z];
            for (value, outward) in [(lo.axis(axis), -1.0), (hi.axis(axis), 1.0)] {
                out.push(Face {
                    axis,
                    value,
                    outward,
                    lo: bounds_lo,
                    hi: bounds_hi,
                    loss_db: b.reflection_loss_db,
                });
            }
        }
    }
    if let Some(loss_db) = scene.ground_reflection_loss_db {
        out.push(Face {
            axis: 2,
            value: 0.0,
            outward: 1.0,
            lo: [f64::NEG_INFINITY; 2],
            hi: [f64::INFINITY; 2],
            loss_db,
        });
    }
    out
}

/// True when the open segment `a → b` passes through the interior of `bx`.
pub fn segment_blocked_by(a: Vec3, b: Vec3, bx: &BuildingBox) -> bool {
    let (mut t0, mut t1) = (EPS_T, 1.0 - EPS_T);
    for axis in 0..3 {
        let (pa, d) = (a.axis(axis), b.axis(axis) - a.axis(axis));
        let (lo, hi) = (bx.min_corner.axis(axis), bx.max_corner.axis(axis));
        if d == 0.0 {
            if pa <= lo || pa >= hi {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - pa) / d, (hi - pa) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 >= t1 {
            return false;
        }
    }
    true
}

fn clear(scene: &Scene, a: Vec3, b: Vec3) -> bool {
    !scene
        .buildings
        .iter()
        .any(|bx| segment_blocked_by(a, b, bx))
}

fn make_path(
    scene: &Scene,
    tx: Vec3,
    first_hop: Vec3,
    length_m: f64,
    bounces: Vec<Vec3>,
    surface_loss_db: f64,
) -> PropagationPath {
    let d = first_hop - tx;
    let heading = d.y.atan2(d.x).to_degrees();
    let mut az = heading - scene.bs_boresight_deg;
    az = (az + 180.0).rem_euclid(360.0) - 180.0;
    let el = d.z.atan2(d.x.hypot(d.y)).to_degrees();
    PropagationPath {
        azimuth_deg: az,
        elevation_deg: el,
        delay_s: length_m / SPEED_OF_LIGHT_MPS,
        length_m,
        reflection_count: bounces.len() as u8,
        surface_loss_db,
        in_sector: az.abs() <= 90.0,
        bounce_points: bounces,
    }
}

/// All LoS and specular paths of order `<= max_reflections` from the base
/// station to `rx`, sorted by length.
pub fn trace_paths(scene: &Scene, vehicle_id: u32, rx: Vec3, max_reflections: u8) -> PathSet {
    let tx = scene.bs_position;
    let mut paths = Vec::new();

    if clear(scene, tx, rx) {
        paths.push(make_path(scene, tx, rx, (rx - tx).norm(), vec![], 0.0));
    }

    let fs = if max_reflections >= 1 {
        faces(scene)
    } else {
        Vec::new()
    };

    if max_reflections >= 1 {
        for f in &fs {
            if !f.in_front(tx) || !f.in_front(rx) {
                continue;
            }
            let image = f.mirror(tx);
            let Some(p) = f.hit(image, rx) else { continue };
            if clear(scene, tx, p) && clear(scene, p, rx) {
                paths.push(make_path(
                    scene,
                    tx,
                    p,
                    (rx - image).norm(),
                    vec![p],
                    f.loss_db,
                ));
            }
        }
    }

    if max_reflections >= 2 {
        for (i, f1) in fs.iter().enumerate() {
            if !f1.in_front(tx) {
                continue;
            }
            let image1 = f1.mirror(tx);
            for (j, f2) in fs.iter().enumerate() {
                if i == j || !f2.in_front(rx) || !f2.in_front(image1) {
                    continue;
                }
                let image2 = f2.mirror(image1);
                let Some(p2) = f2.hit(image2, rx) else {
                    continue;
                };
                if !f1.in_front(p2) {
                    continue;
                }
                let Some(p1) = f1.hit(image1, p2) else {
                    continue;
                };
                if !f2.in_front(p1) {
                    continue;
                }
                if clear(scene, tx, p1) && clear(scene, p1, p2) && clear(scene, p2, rx) {
                    paths.push(make_path(
                        scene,
                        tx,
                        p1,
                        (rx - image2).norm(),
                        vec![p1, p2],
                        f1.loss_db + f2.loss_db,
                    ));
                }
            }
        }
    }

    paths.sort_by(|a, b| a.length_m.total_cmp(&b.length_m));
    PathSet { vehicle_id, paths }
}

/// `P0 + 10·α·log10(d) + shadow + surface loss`, in dB.
pub fn path_loss_db(
    path: &PropagationPath,
    model: &PathLossModel,
    shadow_sample_db: f64,
) -> Result<f64> {
    if !(path.length_m >= 1.0) {
        return Err(Error::BelowReferenceDistance(path.length_m));
    }
    Ok(model.p0_db
        + 10.0 * model.exponent_for(path) * path.length_m.log10()
        + shadow_sample_db
        + path.surface_loss_db)
}

/// `e^{-j 2π f_c τ}`. Labels only use magnitudes, so the default pipeline
/// never consumes this.
pub fn path_phase(path: &PropagationPath, carrier_hz: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * carrier_hz * path.delay_s)
}

/// One shadowing draw per path, keyed by (seed, time step, vehicle).
pub fn shadow_samples(pathset: &PathSet, model: &PathLossModel, seed: u64, step: u64) -> Vec<f64> {
    if model.shadow_sigma_db == 0.0 {
        return vec![0.0; pathset.paths.len()];
    }
    let normal = Normal::new(0.0, model.shadow_sigma_db).expect("validated sigma");
    let mut rng = seed::rng(seed, &[STREAM_SHADOW, step, pathset.vehicle_id as u64]);
    pathset
        .paths
        .iter()
        .map(|_| normal.sample(&mut rng))
        .collect()
}

/// Per-path `(steering vector, path loss)` for the in-sector paths.
fn path_terms(
    pathset: &PathSet,
    model: &PathLossModel,
    geom: &ArrayGeometry,
    shadow: &[f64],
) -> Result<Vec<(Vec<Complex64>, f64)>> {
    if shadow.len() != pathset.paths.len() {
        return Err(Error::shape(pathset.paths.len(), shadow.len()));
    }
    let mut out = Vec::with_capacity(pathset.paths.len());
    for (p, &s) in pathset.paths.iter().zip(shadow) {
        if !p.in_sector {
            continue;
        }
        let a = beams::steering_vector(geom, p.azimuth_deg, p.elevation_deg)?;
        out.push((a.0, path_loss_db(p, model, s)?));
    }
    Ok(out)
}

fn combine(terms: &[(Vec<Complex64>, f64)], w: &[Complex64], power_domain: bool) -> f64 {
    if terms.is_empty() {
        return NO_COVERAGE;
    }
    if power_domain {
        let total: f64 = terms
            .iter()
            .map(|(a, pl)| 10f64.powf((beams::response_db(w, a) - pl) / 10.0))
            .sum();
        if total > 0.0 {
            10.0 * total.log10()
        } else {
            NO_COVERAGE
        }
    } else {
        terms
            .iter()
            .map(|(a, pl)| beams::response_db(w, a) - pl)
            .sum()
    }
}

/// `S(c_b) = Σ_l (R_tx(c_b, l) - PL_l)` over in-sector paths, or the
/// power-domain combination when `power_domain` is set. Empty or fully
/// out-of-sector path sets return [`NO_COVERAGE`].
pub fn rss_for_beam(
    pathset: &PathSet,
    beam: &BeamPattern,
    model: &PathLossModel,
    geom: &ArrayGeometry,
    shadow: &[f64],
    power_domain: bool,
) -> Result<f64> {
    if beam.weights.len() != geom.element_count() {
        return Err(Error::shape(geom.element_count(), beam.weights.len()));
    }
    let terms = path_terms(pathset, model, geom, shadow)?;
    Ok(combine(&terms, &beam.weights, power_domain))
}

/// RSS of every codebook beam for one path set.
pub fn rss_row(
    pathset: &PathSet,
    codebook: &Codebook,
    model: &PathLossModel,
    shadow: &[f64],
    power_domain: bool,
) -> Result<Vec<f64>> {
    let terms = path_terms(pathset, model, &codebook.geometry, shadow)?;
    Ok(codebook
        .patterns
        .iter()
        .map(|p| combine(&terms, &p.weights, power_domain))
        .collect())
}

/// `[V × B]` RSS matrix for one frame; row `v` follows the frame's vehicle
/// order.
pub fn rss_matrix(
    scene: &Scene,
    vehicles: &[VehicleState],
    codebook: &Codebook,
    config: &ChannelConfig,
    shadow_seed: u64,
    step: u64,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((vehicles.len(), codebook.len()));
    for (v, veh) in vehicles.iter().enumerate() {
        let ps = trace_paths(scene, veh.id, veh.position, config.max_reflections);
        let shadow = shadow_samples(&ps, &config.path_loss, shadow_seed, step);
        let row = rss_row(
            &ps,
            codebook,
            &config.path_loss,
            &shadow,
            config.power_domain_combining,
        )?;
        for (b, x) in row.into_iter().enumerate() {
            out[[v, b]] = x;
        }
    }
    Ok(out)
}

/// Column sums of an RSS matrix (the cumulative strength of each beam).
pub fn beam_totals(rss: &Array2<f64>) -> Vec<f64> {
    rss.columns().into_iter().map(|c| c.iter().sum()).collect()
}

/// Index of the largest entry, lowest index on ties. Fails when every entry is
/// the no-coverage sentinel (or NaN).
pub fn argmax_lowest<I: IntoIterator<Item = f64>>(values: I) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in values.into_iter().enumerate() {
        if x == NO_COVERAGE || x.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, bx)| x > bx) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::NoFeasibleBeam)
}

/// `argmax_b Σ_v rss[v][b]`, lowest index on ties.
pub fn optimal_beam(rss: &Array2<f64>) -> Result<usize> {
    if rss.ncols() == 0 {
        return Err(Error::NoFeasibleBeam);
    }
    argmax_lowest(beam_totals(rss))
}
