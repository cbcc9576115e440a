//! Straight-from-definition re-evaluations used as test oracles, plus
//! fixture builders shared by the integration tests.
#![allow(dead_code)]

use ppmxai::eventlog::{generate_synthetic_log, GenSpec, SyntheticLog};

/// Sum of squared deviations divided by `n - 1`.
fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// `None` when the mean selection size is 0 or `d`.
pub fn subset_oracle(rows: &[Vec<bool>]) -> Option<f64> {
    let m = rows.len();
    let d = rows[0].len();
    let k_bar = rows
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count() as f64)
        .sum::<f64>()
        / m as f64;
    if k_bar == 0.0 || k_bar == d as f64 {
        return None;
    }
    let mut total = 0.0;
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| if r[j] { 1.0 } else { 0.0 }).collect();
        total += sample_variance(&col);
    }
    let q = k_bar / d as f64;
    Some(1.0 - (total / d as f64) / (q * (1.0 - q)))
}

pub fn weight_oracle(rows: &[Vec<f64>]) -> f64 {
    let d = rows[0].len();
    let mut total = 0.0;
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let var = sample_variance(&col);
        if var == 0.0 {
            continue;
        }
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        total += var / mean.abs().max(1e-8);
    }
    1.0 - total / d as f64
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// A small log with two static, one dynamic numeric and one dynamic
/// categorical attribute.
pub fn small_spec(n_traces: usize, max_len: usize) -> GenSpec {
    serde_json::from_value(serde_json::json!({
        "n_traces": n_traces,
        "activities": ["a", "b", "c", "d"],
        "trace_length": { "min": 2, "max": max_len },
        "static_attrs": [
            { "name": "amount", "type": "uniform", "lo": 0.0, "hi": 100.0 },
            { "name": "region", "type": "categorical", "values": ["n", "s"] }
        ],
        "dynamic_attrs": [
            { "name": "load", "type": "integer", "lo": 0, "hi": 5 },
            { "name": "team", "type": "categorical", "values": ["x", "y", "z"] }
        ],
        "label_rule": { "kind": "numeric_above", "attr": "amount", "threshold": 55.0 },
        "label_noise": 0.1
    }))
    .unwrap()
}

pub fn small_log(n_traces: usize, max_len: usize, seed: u64) -> SyntheticLog {
    generate_synthetic_log(&small_spec(n_traces, max_len), seed).unwrap()
}
