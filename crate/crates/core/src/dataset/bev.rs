use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BuildingBox, VehicleState, VEHICLE_LENGTH_M, VEHICLE_WIDTH_M};

/// Top-down occupancy grid. Row `r` spans `y ∈ [y0 + r·c, y0 + (r+1)·c]`,
/// column `k` spans `x ∈ [x0 + k·c, x0 + (k+1)·c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevConfig {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_m: f64,
    pub origin_x_m: f64,
    pub origin_y_m: f64,
    /// Cells within this distance of a footprint get `exp(-d / falloff)`;
    /// zero disables the halo.
    pub falloff_m: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        BevConfig {
            rows: 16,
            cols: 48,
            cell_size_m: 2.5,
            origin_x_m: -10.0,
            origin_y_m: -12.0,
            falloff_m: 0.0,
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || !(self.cell_size_m > 0.0) || !(self.falloff_m >= 0.0)
        {
            return Err(Error::Config(
                "BEV grid must be non-empty with positive cells".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_m: f64,
    /// Row-major, values in `[0, 1]`.
    pub occupancy: Vec<f32>,
}

/// Axis-aligned footprint `[x0, x1] × [y0, y1]`.
type Rect = [f64; 4];

fn vehicle_rect(v: &VehicleState) -> Rect {
    let (hx, hy) = (0.5 * VEHICLE_LENGTH_M, 0.5 * VEHICLE_WIDTH_M);
    [
        v.position.x - hx,
        v.position.x + hx,
        v.position.y - hy,
        v.position.y + hy,
    ]
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn synthesize_bev(
    vehicles: &[VehicleState],
    buildings: &[BuildingBox],
    config: &BevConfig,
) -> BevGrid {
    let rects: Vec<Rect> = vehicles
        .iter()
        .map(vehicle_rect)
        .chain(buildings.iter().map(|b| {
            [
                b.min_corner.x,
                b.max_corner.x,
                b.min_corner.y,
                b.max_corner.y,
            ]
        }))
        .collect();
    let c = config.cell_size_m;
    let area = c * c;
    let mut occupancy = vec![0f32; config.rows * config.cols];
    for r in 0..config.rows {
        let y0 = config.origin_y_m + r as f64 * c;
        for k in 0..config.cols {
            let x0 = config.origin_x_m + k as f64 * c;
            let mut value = 0.0f64;
            let mut halo = 0.0f64;
            for rect in &rects {
                let cover =
                    overlap(x0, x0 + c, rect[0], rect[1]) * overlap(y0, y0 + c, rect[2], rect[3]);
                value += cover / area;
                if config.falloff_m > 0.0 && cover == 0.0 {
                    let dx = (rect[0] - (x0 + c)).max(x0 - rect[1]).max(0.0);
                    let dy = (rect[2] - (y0 + c)).max(y0 - rect[3]).max(0.0);
                    halo = halo.max((-(dx.hypot(dy)) / config.falloff_m).exp());
                }
            }
            occupancy[r * config.cols + k] = value.max(halo).clamp(0.0, 1.0) as f32;
        }
    }
    BevGrid {
        rows: config.rows,
        cols: config.cols,
        cell_size_m: c,
        occupancy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;

    fn vehicle(x: f64, y: f64) -> VehicleState {
        VehicleState {
            id: 0,
            position: Vec3::new(x, y, 1.5),
            velocity: Vec3::ZERO,
            lane: 0,
        }
    }

    /// Cells intersecting `[lo, hi]` with positive length along one axis.
    fn cells_touched(origin: f64, cell: f64, n: usize, lo: f64, hi: f64) -> usize {
        (0..n)
            .filter(|&i| {
                let a = origin + i as f64 * cell;
                let b = a + cell;
                hi > a && lo < b
            })
            .count()
    }

    #[test]
    fn empty_frame_is_all_zero() {
        let g = synthesize_bev(&[], &[], &BevConfig::default());
        assert!(g.occupancy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_vehicle_footprint_cells() {
        let cfg = BevConfig::default();
        for (x, y) in [(101.3, 1.75), (87.0, 5.25), (100.0, 0.0)] {
            let g = synthesize_bev(&[vehicle(x, y)], &[], &cfg);
            let nonzero = g.occupancy.iter().filter(|v| **v > 0.0).count();
            let nx = cells_touched(
                cfg.origin_x_m,
                cfg.cell_size_m,
                cfg.cols,
                x - 2.25,
                x + 2.25,
            );
            let ny = cells_touched(cfg.origin_y_m, cfg.cell_size_m, cfg.rows, y - 0.9, y + 0.9);
            assert_eq!(nonzero, nx * ny, "vehicle at ({x}, {y})");
        }
    }

    #[test]
    fn values_are_clamped() {
        let cfg = BevConfig {
            falloff_m: 3.0,
            ..BevConfig::default()
        };
        let pile: Vec<VehicleState> = (0..10)
            .map(|i| vehicle(100.0 + 0.1 * i as f64, 2.0))
            .collect();
        let b = BuildingBox::new(
            Vec3::new(90.0, -19.0, 0.0),
            Vec3::new(120.0, -4.0, 20.0),
            6.0,
        )
        .unwrap();
        let g = synthesize_bev(&pile, &[b], &cfg);
        assert!(g.occupancy.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(g.occupancy.contains(&1.0));
    }
}
