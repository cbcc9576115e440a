//! Functionally-grounded evaluation of local feature-attribution
//! explanations for process-outcome predictive models.
//!
//! The pipeline runs from a raw event log to per-instance stability and
//! fidelity scores:
//!
//! - [`eventlog`]: CSV ingestion, synthetic logs, prefixes, splitting, balancing
//! - [`encoding`]: bucketing and aggregate / index-based feature encoding
//! - [`model`]: gradient-boosted trees and a logistic-regression oracle
//! - [`explain`]: local surrogate and Shapley explainers
//! - [`metrics`]: stability by subset, stability by weight, perturbation fidelity
//! - [`harness`]: experiment orchestration and report emission

// `!(a > b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoding;
pub mod eventlog;
pub mod explain;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
