//! Off-policy evaluation of randomized reviewer-paper assignments.
//!
//! Build randomized assignment policies from similarity scores, sample
//! assignments with prescribed marginals, and estimate the mean review
//! quality another policy would have achieved, with point estimates under
//! imputation and partial-identification bounds under weaker assumptions.

pub mod analysis;
pub mod bounds;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod io;
pub mod lp;
pub mod models;
pub mod rounding;
pub mod sampler;
pub mod similarity;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
