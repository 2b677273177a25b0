//! Nested case-control (NCC) sampling and inverse-probability-weighted analysis.
//!
//! The crate is organised bottom-up:
//!
//! - [`cohort`] simulates cohorts under a Weibull proportional-hazards model
//!   with matching factors `m1`/`m2` and exposures `xa`/`xb`.
//! - [`sampler`] builds risk sets and effective risk sets (caliper, exact and
//!   nearest-neighbour matching) and draws NCC samples.
//! - [`weights`] turns a sample into inclusion probabilities and weights
//!   (Kaplan-Meier / Horvitz-Thompson products and GAM-smoothed estimates).
//! - [`smooth`] is the penalized B-spline logistic regression engine used by
//!   the GAM weights.
//! - [`estimators`] holds weighted Cox, weighted Kaplan-Meier, weighted least
//!   squares, conditional logistic regression and the HT mean functional.
//! - [`harness`] runs replicated bias experiments and exports the results.

pub mod cohort;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod sampler;
pub mod smooth;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
