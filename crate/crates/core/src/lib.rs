//! Probabilistic audio-to-facial-animation mapping.
//!
//! Audio is turned into log-mel context windows, each frame's 23 facial
//! attributes (17 action units and 6 head-pose values) are quantized into
//! `D` bins, and a causal transformer with a temporally-biased attention
//! mask predicts a categorical distribution per attribute per frame.
//! Sequences are generated autoregressively with top-k sampling.

pub mod attention;
pub mod audio;
pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
