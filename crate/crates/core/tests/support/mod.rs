//! Oracle checks shared by the per-module tests and the acceptance run.
#![allow(dead_code)]

pub mod channel;
pub mod codebook;
pub mod geometry;
pub mod metrics;
