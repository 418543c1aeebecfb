//! Coding-prior guided aggregation for compressed video quality enhancement.
//!
//! [`codec`] produces compressed frames and their coding priors, [`data`]
//! turns them into training and evaluation clips, [`model`] holds the
//! network, [`train`] optimizes it and [`metrics`] scores the output.

pub mod ablation;
pub mod cli;
pub mod codec;
pub mod data;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;
