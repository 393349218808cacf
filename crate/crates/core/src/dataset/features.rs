//! Flattened, scaled model inputs.
//!
//! Student rows hold the radar window only. Teacher rows hold the same radar
//! block followed by the BEV block and the GPS block.

use super::{DatasetConfig, Sample};

const VELOCITY_SCALE: f64 = 15.0;
const AZIMUTH_SCALE: f64 = 90.0;
const ALTITUDE_SCALE: f64 = 30.0;
const DEPTH_SCALE: f64 = 100.0;
const ROAD_CENTER_X: f64 = 100.0;
const ROAD_SCALE_X: f64 = 100.0;
const ROAD_SCALE_Y: f64 = 10.0;
const LATERAL_SPEED_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub window: usize,
    pub radar_points: usize,
    pub bev_cells: usize,
    pub gps_slots: usize,
}

impl FeatureLayout {
    pub fn from_config(c: &DatasetConfig) -> Self {
        FeatureLayout {
            window: c.window,
            radar_points: c.radar.max_points,
            bev_cells: c.bev.rows * c.bev.cols,
            gps_slots: c.gps.slots,
        }
    }

    /// Widths of the radar, BEV and GPS blocks of a teacher row.
    pub fn teacher_segments(&self) -> [usize; 3] {
        [
            self.window * self.radar_points * 5,
            self.window * self.bev_cells,
            self.window * self.gps_slots * 5,
        ]
    }
}

pub fn student_input_dim(layout: &FeatureLayout) -> usize {
    layout.teacher_segments()[0]
}

pub fn teacher_input_dim(layout: &FeatureLayout) -> usize {
    layout.teacher_segments().iter().sum()
}

fn write_radar(sample: &Sample, out: &mut [f64]) {
    let mut i = 0;
    for f in &sample.window {
        for (p, &valid) in f.radar.points.iter().zip(&f.radar.mask) {
            out[i] = p[0] as f64 / VELOCITY_SCALE;
            out[i + 1] = p[1] as f64 / AZIMUTH_SCALE;
            out[i + 2] = p[2] as f64 / ALTITUDE_SCALE;
            out[i + 3] = p[3] as f64 / DEPTH_SCALE;
            out[i + 4] = if valid { 1.0 } else { 0.0 };
            i += 5;
        }
    }
}

pub fn student_row(sample: &Sample, out: &mut [f64]) {
    write_radar(sample, out);
}

pub fn teacher_row(sample: &Sample, layout: &FeatureLayout, out: &mut [f64]) {
    let [r, b, _] = layout.teacher_segments();
    write_radar(sample, &mut out[..r]);
    let mut i = r;
    for f in &sample.window {
        for v in &f.bev.occupancy {
            out[i] = *v as f64;
            i += 1;
        }
    }
    debug_assert_eq!(i, r + b);
    for f in &sample.window {
        for (s, &valid) in f.gps.slots.iter().zip(&f.gps.mask) {
            if valid {
                out[i] = (s[0] as f64 - ROAD_CENTER_X) / ROAD_SCALE_X;
                out[i + 1] = s[1] as f64 / ROAD_SCALE_Y;
                out[i + 2] = s[2] as f64 / VELOCITY_SCALE;
                out[i + 3] = s[3] as f64 / LATERAL_SPEED_SCALE;
                out[i + 4] = 1.0;
            } else {
                out[i..i + 5].fill(0.0);
            }
            i += 5;
        }
    }
}
