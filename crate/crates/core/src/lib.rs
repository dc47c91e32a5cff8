//! Equi-depth photon histogramming for single-photon time-of-flight imaging.
//!
//! The crate simulates Poisson photon-timestamp streams from depth scenes,
//! compresses each pixel's stream online with fixed-memory quantile
//! trackers ("binners"), reconstructs distances from the resulting
//! equi-depth boundaries and compares them with equal-width histogram
//! baselines and an oracle.
//!
//! Module map:
//!
//! * [`scene`]: depth maps, photon levels, synthetic scenes and depth I/O
//! * [`transient`]: transient distribution and photon sampling
//! * [`binner`]: fixed and optimized stepping quantile trackers
//! * [`histogram`]: OEDH, PEDH, HEDH boundary sets and EW histograms
//! * [`estimator`]: density estimates and time-of-flight estimators
//! * [`metrics`]: RMSE, MAE, inlier rates, boundary RMSE
//! * [`config`] and [`harness`]: experiment configuration and Monte-Carlo runs

// NaN-rejecting range checks are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binner;
pub mod config;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod histogram;
pub mod metrics;
pub mod scene;
pub mod tensor;
pub mod transient;

pub use error::{Error, Result};
