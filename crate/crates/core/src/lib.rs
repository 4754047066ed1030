//! Statistical-feature-guided diffusion (SF-DM) for single-channel wearable
//! sensor windows, the HAR classifier it pretrains, and the experiment
//! harness around both.

pub mod classifier;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fsutil;
pub mod gradcheck;
pub mod ndtensor;
pub mod par;
pub mod params;
pub mod rng;
pub mod signal;
pub mod statfeat;
pub mod trainer;

pub use error::{Error, Result};
