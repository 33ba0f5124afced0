//! Scanpath prediction on chest-X-ray-like images and scanpath-guided
//! multi-label classification, with scanpath similarity and
//! classification metrics.

pub mod classifier;
pub mod error;
pub mod features;
pub mod harness;
pub mod labels;
pub mod layers;
pub mod metrics;
pub mod numerics;
pub mod predictor;
pub mod scanpath;

pub use error::{Error, Result};
