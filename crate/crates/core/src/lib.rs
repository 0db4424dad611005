//! Multi-label video-ad tagging with per-modality base learners, out-of-fold
//! stacking into a dropout meta-network, late-fusion baselines and Global
//! Average Precision evaluation.

pub mod dataset;
pub mod error;
pub mod fusion;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod orchestrator;
pub mod seed;
pub mod stacking;
pub mod text;
pub mod util;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Version string embedded in reports and model bundles.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
