//! Shapley-based diagnostics of how point-cloud classifiers encode
//! transformations and local structure.
//!
//! A cloud is split into regions; each region is a player, and a coalition's
//! value is the model's reward on the cloud with the remaining regions moved to
//! the centroid. Attributions over families of transformed clouds give
//! sensitivity and smoothness measures, and pairwise interactions give
//! cooperation profiles.

pub mod attack;
pub mod attribution;
pub mod error;
pub mod geometry;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod par;
pub mod seed;
pub mod structure;

pub use error::{Error, Result};
