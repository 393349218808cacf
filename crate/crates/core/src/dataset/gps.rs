use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::VehicleState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsConfig {
    pub slots: usize,
    pub position_sigma_m: f64,
    pub velocity_sigma_mps: f64,
}

impl Default for GpsConfig {
    fn default() -> Self {
        GpsConfig {
            slots: 40,
            position_sigma_m: 0.5,
            velocity_sigma_mps: 0.2,
        }
    }
}

impl GpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || !(self.position_sigma_m >= 0.0 && self.velocity_sigma_mps >= 0.0) {
            return Err(Error::Config(
                "GPS needs at least one slot and non-negative noise".into(),
            ));
        }
        Ok(())
    }
}

/// Per-vehicle `(x, y, vx, vy)`; slot `i` holds vehicle id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsFrame {
    pub slots: Vec<[f32; 4]>,
    pub mask: Vec<bool>,
}

pub fn synthesize_gps(
    vehicles: &[VehicleState],
    config: &GpsConfig,
    rng: &mut ChaCha8Rng,
) -> GpsFrame {
    let pos = Normal::new(0.0, config.position_sigma_m).expect("validated sigma");
    let vel = Normal::new(0.0, config.velocity_sigma_mps).expect("validated sigma");
    let mut slots = vec![[0f32; 4]; config.slots];
    let mut mask = vec![false; config.slots];
    for v in vehicles {
        let i = v.id as usize;
        if i >= config.slots {
            continue;
        }
        slots[i] = [
            (v.position.x + pos.sample(rng)) as f32,
            (v.position.y + pos.sample(rng)) as f32,
            (v.velocity.x + vel.sample(rng)) as f32,
            (v.velocity.y + vel.sample(rng)) as f32,
        ];
        mask[i] = true;
    }
    GpsFrame { slots, mask }
}
