//! Noise-conditioned speech enhancement: features, corpora, models, training
//! and evaluation.

pub mod corpus;
pub mod dsp;
mod error;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod verify;
pub mod wav;

pub use error::{Error, Result};
