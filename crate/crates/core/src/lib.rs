//! Sensing-aided mmWave beam prediction workbench.
//!
//! The pipeline runs end to end on a desk machine:
//!
//! - [`scene`] builds straight multi-lane urban scenes and moves vehicles through them.
//! - [`channel`] traces specular paths from the base station and scores every beam.
//! - [`beams`] holds the rectangular-array steering model and the beam codebook.
//! - [`dataset`] turns episodes into windowed radar / BEV / GPS samples with RSS labels.
//! - [`nn`] is a small hand-differentiated MLP stack with focal loss and SGD.
//! - [`distill`] implements temperature KD and the relational (manifold and beam-space) losses.
//! - [`metrics`] computes Top-k accuracy, mean RSS and mean percentile rank.
//! - [`checks`] verifies every hand-derived gradient against finite differences.
//! - [`config`] is the strict JSON experiment config and its digest.
//! - [`experiment`] wires everything together behind that config.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beams;
pub mod channel;
pub mod checks;
pub mod config;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
