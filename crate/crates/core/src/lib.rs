//! Quality-targeted QP prediction for AV1 encodes.
//!
//! The crate covers the whole pipeline: monotone rate-distortion curves as
//! ground truth, low-complexity frame analysis, feature assembly, a small
//! attention + feed-forward network trained with a tolerance-aware loss, and
//! the evaluation protocol (MAE, coverage, quality bands, CDFs).

pub mod checkpoint;
pub mod complexity;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod media;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rd;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
