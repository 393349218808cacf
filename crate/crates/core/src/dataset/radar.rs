use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::segment_blocked_by;
use crate::error::{Error, Result};
use crate::scene::{
    Scene, Vec3, VehicleState, VEHICLE_HEIGHT_M, VEHICLE_LENGTH_M, VEHICLE_WIDTH_M,
};

/// Columns: radial velocity (m/s), azimuth (deg), altitude (deg), depth (m).
pub type RadarPoint = [f32; 4];

pub const ALTITUDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    /// Fixed point count after highest-point sampling.
    pub max_points: usize,
    pub returns_min: usize,
    pub returns_max: usize,
    pub max_range_m: f64,
    /// Half-angle of the azimuth field of view.
    pub half_fov_deg: f64,
    pub velocity_sigma_mps: f64,
    pub azimuth_sigma_deg: f64,
    pub altitude_sigma_deg: f64,
    pub depth_sigma_m: f64,
    /// Candidate static clutter points per frame.
    pub clutter_candidates: usize,
    pub clutter_prob: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            max_points: 32,
            returns_min: 1,
            returns_max: 3,
            max_range_m: 120.0,
            half_fov_deg: 90.0,
            velocity_sigma_mps: 0.2,
            azimuth_sigma_deg: 1.0,
            altitude_sigma_deg: 1.0,
            depth_sigma_m: 0.3,
            clutter_candidates: 6,
            clutter_prob: 0.3,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_points == 0 {
            return Err(Error::Config("radar max_points must be at least 1".into()));
        }
        if !(1 <= self.returns_min && self.returns_min <= self.returns_max && self.returns_max <= 3)
        {
            return Err(Error::Config(
                "radar returns per vehicle must satisfy 1 <= min <= max <= 3".into(),
            ));
        }
        let sigmas = [
            self.velocity_sigma_mps,
            self.azimuth_sigma_deg,
            self.altitude_sigma_deg,
            self.depth_sigma_m,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) || !(0.0..=1.0).contains(&self.clutter_prob) {
            return Err(Error::Config(
                "radar noise levels must be non-negative".into(),
            ));
        }
        if !(self.max_range_m > 0.0 && self.half_fov_deg > 0.0 && self.half_fov_deg <= 90.0) {
            return Err(Error::Config(
                "radar range and field of view must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrame {
    pub points: Vec<RadarPoint>,
    pub mask: Vec<bool>,
}

impl RadarFrame {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Keeps the `k` points with the largest altitude. Frames with at most `k`
/// points pass through unchanged apart from zero padding; otherwise the kept
/// points stay in their original relative order.
pub fn highest_point_sampling(raw: &[RadarPoint], k: usize) -> RadarFrame {
    let mut keep: Vec<usize> = (0..raw.len()).collect();
    if raw.len() > k {
        keep.sort_by(|&a, &b| {
            raw[b][ALTITUDE]
                .total_cmp(&raw[a][ALTITUDE])
                .then(a.cmp(&b))
        });
        keep.truncate(k);
        keep.sort_unstable();
    }
    let mut points: Vec<RadarPoint> = keep.iter().map(|&i| raw[i]).collect();
    let mut mask = vec![true; points.len()];
    points.resize(k, [0.0; 4]);
    mask.resize(k, false);
    RadarFrame { points, mask }
}

fn measure(radar: Vec3, boresight_deg: f64, p: Vec3, velocity: Vec3) -> (f64, f64, f64, f64) {
    let d = p - radar;
    let depth = d.norm();
    let heading = d.y.atan2(d.x).to_degrees();
    let az = (heading - boresight_deg + 180.0).rem_euclid(360.0) - 180.0;
    let alt = d.z.atan2(d.x.hypot(d.y)).to_degrees();
    let radial = if depth > 0.0 {
        velocity.dot(d) * (1.0 / depth)
    } else {
        0.0
    };
    (radial, az, alt, depth)
}

/// Radar returns seen from the base station for one frame, reduced to a
/// fixed-size point set by [`highest_point_sampling`].
pub fn synthesize_radar(
    vehicles: &[VehicleState],
    scene: &Scene,
    config: &RadarConfig,
    rng: &mut ChaCha8Rng,
) -> RadarFrame {
    let radar = scene.bs_position;
    let noise = |s: f64| Normal::new(0.0, s).expect("validated sigma");
    let (nv, na, nl, nd) = (
        noise(config.velocity_sigma_mps),
        noise(config.azimuth_sigma_deg),
        noise(config.altitude_sigma_deg),
        noise(config.depth_sigma_m),
    );
    let mut raw = Vec::new();
    let mut emit = |rng: &mut ChaCha8Rng, (v, az, alt, depth): (f64, f64, f64, f64)| {
        let depth = (depth + nd.sample(rng)).max(0.1);
        raw.push([
            (v + nv.sample(rng)) as f32,
            (az + na.sample(rng)) as f32,
            (alt + nl.sample(rng)) as f32,
            depth as f32,
        ]);
    };

    for veh in vehicles {
        let (_, az, _, depth) = measure(radar, scene.bs_boresight_deg, veh.position, veh.velocity);
        let visible = az.abs() <= config.half_fov_deg
            && depth <= config.max_range_m
            && !scene
                .buildings
                .iter()
                .any(|b| segment_blocked_by(radar, veh.position, b));
        if !visible {
            continue;
        }
        let returns = rng.random_range(config.returns_min..=config.returns_max);
        for r in 0..returns {
            let p = if r == 0 {
                veh.position
            } else {
                veh.position
                    + Vec3::new(
                        rng.random_range(-0.5..=0.5) * VEHICLE_LENGTH_M,
                        rng.random_range(-0.5..=0.5) * VEHICLE_WIDTH_M,
                        -rng.random_range(0.0..=1.0) * VEHICLE_HEIGHT_M,
                    )
            };
            emit(rng, measure(radar, scene.bs_boresight_deg, p, veh.velocity));
        }
    }

    for _ in 0..config.clutter_candidates {
        let show: f64 = rng.random();
        let az = rng.random_range(-config.half_fov_deg..=config.half_fov_deg);
        let depth = rng.random_range(5.0..=config.max_range_m.max(5.0));
        let alt = rng.random_range(-10.0..=20.0);
        if show < config.clutter_prob {
            emit(rng, (0.0, az, alt, depth));
        }
    }

    highest_point_sampling(&raw, config.max_points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn quiet() -> RadarConfig {
        RadarConfig {
            returns_max: 1,
            velocity_sigma_mps: 0.0,
            azimuth_sigma_deg: 0.0,
            altitude_sigma_deg: 0.0,
            depth_sigma_m: 0.0,
            clutter_prob: 0.0,
            ..RadarConfig::default()
        }
    }

    #[test]
    fn noiseless_vehicle_dead_ahead() {
        let scene = Scene::free_space(Vec3::new(0.0, 0.0, 1.5), 90.0);
        let v = VehicleState {
            id: 0,
            position: Vec3::new(0.0, 30.0, 1.5),
            velocity: Vec3::new(10.0, 0.0, 0.0),
            lane: 0,
        };
        let f = synthesize_radar(&[v], &scene, &quiet(), &mut seed::rng(1, &[]));
        assert_eq!(f.valid_count(), 1);
        let p = f.points[0];
        assert!((p[3] - 30.0).abs() < 1e-5 && p[1].abs() < 1e-5 && p[2].abs() < 1e-5);
        assert!(p[0].abs() < 1e-5);
        assert_eq!(f.points.len(), 32);
    }

    #[test]
    fn hps_keeps_highest_altitudes() {
        let raw: Vec<RadarPoint> = (0..50)
            .map(|i| [0.0, 0.0, ((i * 37) % 50) as f32, 10.0])
            .collect();
        let f = highest_point_sampling(&raw, 32);
        assert_eq!(f.points.len(), 32);
        assert_eq!(f.valid_count(), 32);
        let mut kept: Vec<f32> = f.points.iter().map(|p| p[ALTITUDE]).collect();
        kept.sort_by(f32::total_cmp);
        let expect: Vec<f32> = (18..50).map(|a| a as f32).collect();
        assert_eq!(kept, expect);
    }

    #[test]
    fn hps_is_identity_on_k_sized_frames() {
        let raw: Vec<RadarPoint> = (0..32)
            .map(|i| [i as f32, 1.0, (i % 7) as f32, 5.0])
            .collect();
        let f = highest_point_sampling(&raw, 32);
        assert_eq!(f.points, raw);
        let again = highest_point_sampling(&f.points, 32);
        assert_eq!(again.points, f.points);
    }

    #[test]
    fn empty_scene_gives_empty_mask() {
        let scene = Scene::free_space(Vec3::new(0.0, 0.0, 6.0), 90.0);
        let f = synthesize_radar(&[], &scene, &quiet(), &mut seed::rng(1, &[]));
        assert_eq!(f.valid_count(), 0);
        assert!(f.points.iter().all(|p| *p == [0.0; 4]));
    }
}
