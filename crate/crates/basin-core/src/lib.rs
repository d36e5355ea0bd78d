//! Core library for training small MLPs and measuring the star-convex basin
//! volumes of the minima they land in.
//!
//! The pieces fit together like this: [`nn`] defines networks over a flat
//! [`nn::ParameterVector`] (forward pass, loss, gradient, filter norms),
//! [`optim`] trains them, [`data`] builds datasets with full provenance, and
//! [`volume`] measures the basin around a trained point by shooting
//! filter-normalized random rays at the loss threshold and aggregating the
//! crossing radii in the log domain. [`oracle`] provides an analytic
//! two-parameter basin with a closed-form volume for validating the
//! estimator, and [`analysis`] fits volume-vs-data power laws and summarizes
//! radii distributions.
//!
//! Everything is deterministic: all randomness flows through the counter-based
//! generator in [`rng`], keyed by explicit seeds, so a fixed configuration
//! reproduces results bit for bit.

pub mod analysis;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
