//! Stability and fidelity metrics over repeated explanations.

mod fidelity;
mod stability;

pub use fidelity::{
    build_plan, build_plan_for_targets, decile_interval, fidelity, influential_region,
    modal_interval, perturb, sampling_domain, select_perturbation_targets, target_budget,
    FidelityScore, InfluentialRegion, IntervalContext, PerturbationPlan, PerturbationTarget, Piece,
    SamplingDomain, ShapleyReference, FLAG_FALLBACK_INTERVAL,
};
pub use stability::{
    build_subset_matrix, stability_by_subset, stability_by_weight, stability_scores,
    StabilityScore, SubsetMatrix, WeightMatrix, WeightStability, FLAG_DEGENERATE_SUBSET,
    FLAG_SUBSET_BELOW_ZERO, FLAG_WEIGHT_EPSILON, WEIGHT_EPSILON,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("explanation set is empty")]
    EmptySet,
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("mean subset size {k_bar} leaves no variation over {d} features")]
    DegenerateSubsetSize { k_bar: f64, d: usize },
    #[error("row width {got} does not match {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("no influential interval available for column {0}")]
    NoIntervalAvailable(usize),
    #[error("empty sampling domain for column {0}")]
    EmptySamplingDomain(usize),
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Distribution summary of per-instance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Unweighted mean plus quartiles (linear interpolation between order
/// statistics).
pub fn aggregate(scores: &[f64]) -> Result<Summary, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    Ok(Summary {
        n: scores.len(),
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        min: sorted[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: sorted[sorted.len() - 1],
    })
}
