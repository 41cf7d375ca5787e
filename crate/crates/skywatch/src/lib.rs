//! skywatch — detection of small flying objects in video from a moving
//! camera.
//!
//! The pipeline classifies spatio-temporal image cubes: stacks of patches
//! from consecutive frames, re-centered on the object by an iterative,
//! regression-based motion compensation step before classification.
//!
//! Stages, each its own module:
//!
//! 1. [`imagecore`] — frames, patches, pyramids, gradients.
//! 2. [`features`] — HoG descriptors and oriented gradient-energy channels.
//! 3. [`shift_regressor`] — boosted-tree regressors predicting how far the
//!    object sits from a patch center.
//! 4. [`motion_comp`] — iterative per-slice stabilization of st-cubes.
//! 5. [`cube_classifier`] — AdaBoost over gradient-energy box features (or
//!    3-D HoG stumps).
//! 6. [`detector`] — multi-scale sliding-window detection with NMS.
//! 7. [`evalkit`] — PR curves, Average Precision, size-binned AP.
//! 8. [`synthgen`] — deterministic synthetic benchmarks with ground truth.
//!
//! Everything is deterministic: fixed seeds give bit-identical models,
//! detections and rendered frames, independent of thread count.

pub mod cube_classifier;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod imagecore;
pub mod motion_comp;
pub mod parallel;
pub mod rng;
pub mod shift_regressor;
pub mod synthgen;

mod binio;

pub use error::{Error, Result};

/// Toolkit version, embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
