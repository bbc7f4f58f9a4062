//! Counting everyday objects in images.
//!
//! The crate bundles the pieces needed to train and evaluate object counters
//! end to end on a small synthetic scene world (or on precomputed features):
//!
//! * [`data`]: annotation/feature/embedding IO, the synthetic scene generator
//!   and the per-cell featurizer.
//! * [`gridgt`]: grid partitions and fractional per-cell ground truth.
//! * [`models`]: glance, associative and sequential subitizing regressors and
//!   the count-classification baseline, with hand-written gradients.
//! * [`metrics`]: post-processing, RMSE families, bootstrap evaluation,
//!   baselines and error analyses.
//! * [`detcount`]: counting by detection (NMS, thresholds, threshold tuning).
//! * [`detboost`]: using predicted counts to pick per-image detection thresholds.
//! * [`qa`]: answering "how many ...?" questions with category counts.

pub mod data;
pub mod detboost;
pub mod detcount;
pub mod error;
pub mod gridgt;
pub mod metrics;
pub mod models;
pub mod qa;
pub mod rng;

pub use error::{Error, Result};
