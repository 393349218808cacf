//! Parametric straight-road urban scenes and vehicle mobility.
//!
//! The road runs along +x from `0` to `road_length_m`. Lane `k` occupies
//! `y ∈ [k·w, (k+1)·w]` with `w` the lane width. Building rows flank the road
//! on the near side (`y < 0`, where the base station stands) and the far side.

use std::ops::{Add, Mul, Neg, Sub};

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const VEHICLE_LENGTH_M: f64 = 4.5;
pub const VEHICLE_WIDTH_M: f64 = 1.8;
/// Height of the vehicle reference point (roof antenna / radar centroid).
pub const VEHICLE_HEIGHT_M: f64 = 1.5;

const STREAM_SPAWN: u64 = 1;
const STREAM_MOBILITY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn axis(self, a: usize) -> f64 {
        match a {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with_axis(mut self, a: usize, v: f64) -> Self {
        match a {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned building with a single reflection loss for all its walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingBox {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
    pub reflection_loss_db: f64,
}

impl BuildingBox {
    pub fn new(min_corner: Vec3, max_corner: Vec3, reflection_loss_db: f64) -> Result<Self> {
        let b = BuildingBox {
            min_corner,
            max_corner,
            reflection_loss_db,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|a| self.min_corner.axis(a) < self.max_corner.axis(a))
            && self.min_corner.is_finite()
            && self.max_corner.is_finite()
            && self.reflection_loss_db.is_finite()
            && self.reflection_loss_db >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate building box {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    pub lane: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadSide {
    /// Same side as the base station (`y < 0`).
    Near,
    /// Across the road.
    Far,
}

/// Rows of equally sized blocks along the road edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingLayout {
    pub sides: Vec<RoadSide>,
    /// Distance from the road edge to the building front.
    pub setback_m: f64,
    pub depth_m: f64,
    pub block_length_m: f64,
    pub gap_m: f64,
    /// Heights cycled over consecutive blocks.
    pub heights_m: Vec<f64>,
    pub reflection_loss_db: f64,
}

impl Default for BuildingLayout {
    fn default() -> Self {
        BuildingLayout {
            sides: vec![RoadSide::Near, RoadSide::Far],
            setback_m: 4.0,
            depth_m: 15.0,
            block_length_m: 30.0,
            gap_m: 10.0,
            heights_m: vec![18.0, 12.0, 24.0, 15.0],
            reflection_loss_db: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub lane_count: usize,
    pub lane_width_m: f64,
    pub road_length_m: f64,
    pub buildings: BuildingLayout,
    pub bs_position: Vec3,
    /// Array broadside heading in the horizontal plane, degrees from +x.
    pub bs_boresight_deg: f64,
    /// Ground reflection loss; `None` disables the ground reflector.
    pub ground_reflection_loss_db: Option<f64>,
    pub vehicle_count: usize,
    pub min_spacing_m: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub speed_noise_mps: f64,
    pub lateral_noise_m: f64,
    pub lane_change_prob: f64,
    pub time_step_s: f64,
    pub episode_length: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            lane_count: 2,
            lane_width_m: 3.5,
            road_length_m: 100.0,
            buildings: BuildingLayout::default(),
            bs_position: Vec3::new(50.0, -3.0, 6.0),
            bs_boresight_deg: 90.0,
            ground_reflection_loss_db: Some(8.0),
            vehicle_count: 3,
            min_spacing_m: 8.0,
            speed_min_mps: 8.0,
            speed_max_mps: 14.0,
            speed_noise_mps: 0.1,
            lateral_noise_m: 0.05,
            lane_change_prob: 0.002,
            time_step_s: 0.1,
            episode_length: 100,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(2..=3).contains(&self.lane_count) {
            return fail("lane_count must be 2 or 3");
        }
        if !(self.lane_width_m > VEHICLE_WIDTH_M) {
            return fail("lane_width_m must exceed the vehicle width");
        }
        if !(self.road_length_m > 0.0) {
            return fail("road_length_m must be positive");
        }
        if !(1..=40).contains(&self.vehicle_count) {
            return fail("vehicle_count must be in 1..=40");
        }
        if !(self.time_step_s > 0.0) {
            return fail("time_step_s must be positive");
        }
        if !(1..=200).contains(&self.episode_length) {
            return fail("episode_length must be in 1..=200");
        }
        if !(self.min_spacing_m >= VEHICLE_LENGTH_M) {
            return fail("min_spacing_m must be at least one vehicle length");
        }
        if !(0.0 <= self.speed_min_mps && self.speed_min_mps <= self.speed_max_mps) {
            return fail("speed range must satisfy 0 <= min <= max");
        }
        if !(self.speed_noise_mps >= 0.0 && self.lateral_noise_m >= 0.0) {
            return fail("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.lane_change_prob) {
            return fail("lane_change_prob must be a probability");
        }
        if !self.bs_position.is_finite() || !self.bs_boresight_deg.is_finite() {
            return fail("base station pose must be finite");
        }
        let b = &self.buildings;
        if !(b.depth_m > 0.0 && b.block_length_m > 0.0 && b.gap_m >= 0.0 && b.setback_m >= 0.0) {
            return fail("building layout dimensions are invalid");
        }
        if b.heights_m.is_empty() || b.heights_m.iter().any(|h| !(*h > 0.0)) {
            return fail("building heights must be positive");
        }
        if !(b.reflection_loss_db >= 0.0) {
            return fail("building reflection loss must be non-negative");
        }
        Ok(())
    }

    pub fn road_width_m(&self) -> f64 {
        self.lane_count as f64 * self.lane_width_m
    }

    /// +1 for lanes driving toward +x, -1 otherwise. The last lane is the
    /// oncoming one.
    pub fn lane_direction(&self, lane: usize) -> f64 {
        if lane + 1 == self.lane_count {
            -1.0
        } else {
            1.0
        }
    }

    pub fn lane_center_y(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width_m
    }

    /// Largest lateral deviation from the lane center that keeps the vehicle
    /// body inside its lane.
    pub fn lateral_limit_m(&self) -> f64 {
        0.5 * (self.lane_width_m - VEHICLE_WIDTH_M)
    }

    pub fn slots_per_lane(&self) -> usize {
        (self.road_length_m / self.min_spacing_m).floor() as usize
    }
}

/// Static geometry plus the initial vehicle states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub buildings: Vec<BuildingBox>,
    pub bs_position: Vec3,
    pub bs_boresight_deg: f64,
    pub ground_reflection_loss_db: Option<f64>,
    pub vehicles: Vec<VehicleState>,
}

impl Scene {
    /// Scene with no buildings and no ground reflector.
    pub fn free_space(bs_position: Vec3, bs_boresight_deg: f64) -> Self {
        Scene {
            buildings: Vec::new(),
            bs_position,
            bs_boresight_deg,
            ground_reflection_loss_db: None,
            vehicles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp_s: f64,
    pub vehicles: Vec<VehicleState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub config: SceneConfig,
    pub scene: Scene,
    pub frames: Vec<Frame>,
}

fn layout_buildings(config: &SceneConfig) -> Vec<BuildingBox> {
    let b = &config.buildings;
    let mut out = Vec::new();
    for side in &b.sides {
        let (y0, y1) = match side {
            RoadSide::Near => (-b.setback_m - b.depth_m, -b.setback_m),
            RoadSide::Far => {
                let front = config.road_width_m() + b.setback_m;
                (front, front + b.depth_m)
            }
        };
        let mut x = 0.0;
        let mut k = 0;
        while x < config.road_length_m {
            let x1 = (x + b.block_length_m).min(config.road_length_m);
            let h = b.heights_m[k % b.heights_m.len()];
            out.push(BuildingBox {
                min_corner: Vec3::new(x, y0, 0.0),
                max_corner: Vec3::new(x1, y1, h),
                reflection_loss_db: b.reflection_loss_db,
            });
            x = x1 + b.gap_m;
            k += 1;
        }
    }
    out
}

pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    let per_lane = config.slots_per_lane();
    let capacity = per_lane * config.lane_count;
    if config.vehicle_count > capacity {
        return Err(Error::Capacity {
            requested: config.vehicle_count,
            capacity,
            spacing_m: config.min_spacing_m,
        });
    }
    config.validate()?;
    let buildings = layout_buildings(config);
    for bx in &buildings {
        bx.validate()?;
    }

    let mut rng = seed::rng(config.seed, &[STREAM_SPAWN]);
    let mut slots = index::sample(&mut rng, capacity, config.vehicle_count).into_vec();
    slots.sort_unstable();
    let vehicles = slots
        .into_iter()
        .enumerate()
        .map(|(id, slot)| {
            let lane = slot / per_lane;
            let along = (slot % per_lane) as f64 + 0.5;
            let speed = rng.random_range(config.speed_min_mps..=config.speed_max_mps);
            VehicleState {
                id: id as u32,
                position: Vec3::new(
                    along * config.min_spacing_m,
                    config.lane_center_y(lane),
                    VEHICLE_HEIGHT_M,
                ),
                velocity: Vec3::new(speed * config.lane_direction(lane), 0.0, 0.0),
                lane,
            }
        })
        .collect();

    Ok(Scene {
        buildings,
        bs_position: config.bs_position,
        bs_boresight_deg: config.bs_boresight_deg,
        ground_reflection_loss_db: config.ground_reflection_loss_db,
        vehicles,
    })
}

/// Advances every vehicle by one time step.
///
/// Speeds get Gaussian jitter and are clamped to the configured range.
/// Lateral position follows the lane center with bounded noise; a vehicle may
/// switch to an adjacent lane with the same driving direction. Vehicles leaving
/// the road re-enter at the start of their lane.
pub fn step_vehicles(
    frame: &[VehicleState],
    config: &SceneConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<VehicleState> {
    let speed_noise = Normal::new(0.0, config.speed_noise_mps).expect("validated noise");
    let lateral_noise = Normal::new(0.0, config.lateral_noise_m).expect("validated noise");
    let limit = config.lateral_limit_m();
    let dt = config.time_step_s;

    frame
        .iter()
        .map(|v| {
            let speed = (v.velocity.x.abs() + speed_noise.sample(rng))
                .clamp(config.speed_min_mps, config.speed_max_mps);

            let mut lane = v.lane.min(config.lane_count - 1);
            let mut offset = v.position.y - config.lane_center_y(lane);
            let change: f64 = rng.random();
            if change < config.lane_change_prob {
                let dir = config.lane_direction(lane);
                let candidates: Vec<usize> = [lane.checked_sub(1), Some(lane + 1)]
                    .into_iter()
                    .flatten()
                    .filter(|&l| l < config.lane_count && config.lane_direction(l) == dir)
                    .collect();
                if !candidates.is_empty() {
                    lane = candidates[rng.random_range(0..candidates.len())];
                    offset = 0.0;
                }
            }
            let new_offset = (offset + lateral_noise.sample(rng)).clamp(-limit, limit);
            let vy = if lane == v.lane {
                (new_offset - offset) / dt
            } else {
                0.0
            };

            let dir = config.lane_direction(lane);
            let x = (v.position.x + dir * speed * dt).rem_euclid(config.road_length_m);
            VehicleState {
                id: v.id,
                position: Vec3::new(x, config.lane_center_y(lane) + new_offset, v.position.z),
                velocity: Vec3::new(dir * speed, vy, 0.0),
                lane,
            }
        })
        .collect()
}

pub fn generate_episode(config: &SceneConfig) -> Result<Episode> {
    let scene = build_scene(config)?;
    let mut rng = seed::rng(config.seed, &[STREAM_MOBILITY]);
    let mut frames = Vec::with_capacity(config.episode_length);
    let mut current = scene.vehicles.clone();
    for k in 0..config.episode_length {
        if k > 0 {
            current = step_vehicles(&current, config, &mut rng);
        }
        frames.push(Frame {
            timestamp_s: k as f64 * config.time_step_s,
            vehicles: current.clone(),
        });
    }
    Ok(Episode {
        config: config.clone(),
        scene,
        frames,
    })
}

/// True when the vehicle body lies inside its lane and on the road.
pub fn inside_lane(v: &VehicleState, config: &SceneConfig) -> bool {
    let lo = v.lane as f64 * config.lane_width_m + 0.5 * VEHICLE_WIDTH_M;
    let hi = (v.lane + 1) as f64 * config.lane_width_m - 0.5 * VEHICLE_WIDTH_M;
    let tol = 1e-9;
    v.lane < config.lane_count
        && v.position.y >= lo - tol
        && v.position.y <= hi + tol
        && v.position.x >= 0.0
        && v.position.x < config.road_length_m
}
