//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use ppmxai::encoding::ObservedDomain;
use ppmxai::explain::exact_shapley;
use ppmxai::explain::CaseRef;
use ppmxai::metrics::{
    perturb, sampling_domain, stability_by_subset, stability_by_weight, InfluentialRegion,
    PerturbationPlan, PerturbationTarget, SamplingDomain, SubsetMatrix, WeightMatrix,
};
use ppmxai::model::{BlackBox, LinearModel};
use ppmxai::rng::seeded;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    let value = match result.and_then(|v| serde_json::to_value(v).map_err(|e| e.to_string())) {
        Ok(v) => v,
        Err(e) => serde_json::json!({ "error": e }),
    };
    value.to_string()
}

fn parse<T: for<'de> Deserialize<'de>>(input: &str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("bad input: {e}"))
}

#[derive(Deserialize)]
pub struct StabilityInput {
    /// One row per repeated explanation: which features were selected.
    pub subsets: Vec<Vec<bool>>,
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
pub struct StabilityOutput {
    /// `None` when every row selects none or all of the features.
    pub by_subset: Option<f64>,
    pub subset_note: Option<String>,
    pub by_weight: Option<f64>,
    pub column_counts: Vec<usize>,
}

pub fn stability_json(input: &str) -> Result<StabilityOutput, String> {
    let req: StabilityInput = parse(input)?;
    let z = SubsetMatrix::from_rows(&req.subsets).map_err(|e| e.to_string())?;
    let (by_subset, subset_note) = match stability_by_subset(&z) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let by_weight = match &req.weights {
        Some(rows) => {
            let w = WeightMatrix::from_rows(rows).map_err(|e| e.to_string())?;
            Some(stability_by_weight(&w).map_err(|e| e.to_string())?.value)
        }
        None => None,
    };
    Ok(StabilityOutput {
        by_subset,
        subset_note,
        by_weight,
        column_counts: z.column_counts(),
    })
}

#[derive(Deserialize)]
pub struct ShapleyInput {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
    pub instance: Vec<f64>,
    pub background: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct ShapleyOutput {
    pub phi: Vec<f64>,
    /// Mean model output over the background.
    pub base: f64,
    pub prediction: f64,
}

/// Exact Shapley values for a logistic model, so the attributions show the
/// interaction the sigmoid introduces.
pub fn shapley_json(input: &str) -> Result<ShapleyOutput, String> {
    let req: ShapleyInput = parse(input)?;
    if req.weights.len() > 12 {
        return Err("the demo caps the feature count at 12".into());
    }
    let model = LinearModel::new(req.weights, req.intercept);
    let phi = exact_shapley(&model, &req.instance, &req.background).map_err(|e| e.to_string())?;
    let base =
        req.background.iter().map(|b| model.predict(b)).sum::<f64>() / req.background.len() as f64;
    Ok(ShapleyOutput {
        phi,
        base,
        prediction: model.predict(&req.instance),
    })
}

#[derive(Deserialize)]
pub struct PerturbInput {
    pub domain_lo: f64,
    pub domain_hi: f64,
    #[serde(default)]
    pub integer: bool,
    pub interval_lo: f64,
    pub interval_hi: f64,
    pub value: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    30
}

#[derive(Serialize)]
pub struct PerturbOutput {
    pub domain: SamplingDomain,
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub counts: Vec<usize>,
    /// Draws that landed inside the influential interval (always 0).
    pub inside: usize,
}

pub fn perturb_json(input: &str) -> Result<PerturbOutput, String> {
    let req: PerturbInput = parse(input)?;
    if !(req.domain_lo <= req.domain_hi) || !(req.interval_lo <= req.interval_hi) {
        return Err("bounds must satisfy lo <= hi".into());
    }
    if req.n == 0 || req.n > 200_000 || req.bins == 0 || req.bins > 500 {
        return Err("n must be in 1..=200000 and bins in 1..=500".into());
    }
    let observed = ObservedDomain {
        lo: req.domain_lo,
        hi: req.domain_hi,
        integer_valued: req.integer,
        is_binary_indicator: false,
        values: Vec::new(),
    };
    let region = InfluentialRegion::Interval {
        lo: req.interval_lo,
        hi: req.interval_hi,
    };
    let domain = sampling_domain(0, &region, &observed).map_err(|e| e.to_string())?;
    if matches!(&domain, SamplingDomain::Discrete { values } if values.is_empty()) {
        return Err("no admissible integer outside the interval".into());
    }
    let plan = PerturbationPlan {
        case_ref: CaseRef::new("demo", 1),
        targets: vec![PerturbationTarget {
            column: 0,
            region: region.clone(),
            domain: domain.clone(),
            flags: Vec::new(),
        }],
        n_perturbations: req.n,
    };
    let mut rng = seeded(req.seed);
    let draws: Vec<f64> = (0..req.n)
        .map(|_| perturb(&[req.value], &plan, &mut rng)[0])
        .collect();
    let lo = draws
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(req.interval_lo);
    let hi = draws
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(req.interval_hi);
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    let mut counts = vec![0; req.bins];
    for &v in &draws {
        let b = (((v - lo) / width) * req.bins as f64) as usize;
        counts[b.min(req.bins - 1)] += 1;
    }
    Ok(PerturbOutput {
        domain,
        hist_lo: lo,
        hist_hi: hi,
        counts,
        inside: draws.iter().filter(|&&v| region.contains(v)).count(),
    })
}

#[wasm_bindgen]
pub fn stability(input: &str) -> String {
    respond(stability_json(input))
}

#[wasm_bindgen]
pub fn shapley(input: &str) -> String {
    respond(shapley_json(input))
}

#[wasm_bindgen]
pub fn perturbation(input: &str) -> String {
    respond(perturb_json(input))
}

#[wasm_bindgen]
pub fn version() -> String {
    env!("CARGO_PKG_VERSION").into()
}
