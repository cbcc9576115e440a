use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_subset_matrix, MetricsError};
use crate::encoding::ObservedDomain;
use crate::explain::{CaseRef, ExplanationSet, Interval};
use crate::model::BlackBox;

pub const FLAG_FALLBACK_INTERVAL: &str = "fallback_interval";

/// Number of perturbation targets for width `d`: a tenth, rounded up, at
/// least one.
pub fn target_budget(d: usize) -> usize {
    d.div_ceil(10).max(1)
}

/// Ranks columns by how many of the top-`k` subsets contain them (ties:
/// larger mean |weight|, then lower index) and keeps [`target_budget`].
pub fn select_perturbation_targets(
    set: &ExplanationSet,
    k: usize,
) -> Result<Vec<usize>, MetricsError> {
    let z = build_subset_matrix(set, k)?;
    let counts = z.column_counts();
    let mut mean_abs = vec![0.0; z.d];
    for e in &set.explanations {
        for (m, w) in mean_abs.iter_mut().zip(e.dense_weights()) {
            *m += w.abs() / z.m as f64;
        }
    }
    let mut order: Vec<usize> = (0..z.d).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then(mean_abs[b].total_cmp(&mean_abs[a]))
            .then(a.cmp(&b))
    });
    order.truncate(target_budget(z.d).min(z.d));
    Ok(order)
}

/// The interval attached most often to `column` across the explanations;
/// ties go to the one seen first.
pub fn modal_interval(set: &ExplanationSet, column: usize) -> Option<Interval> {
    let mut counts: BTreeMap<(u64, u64), (usize, usize, Interval)> = BTreeMap::new();
    let mut seen = 0;
    for e in &set.explanations {
        if let Some(iv) = e.attribution(column).and_then(|a| a.interval) {
            let entry = counts
                .entry((iv.lo.to_bits(), iv.hi.to_bits()))
                .or_insert((0, seen, iv));
            entry.0 += 1;
            seen += 1;
        }
    }
    counts
        .into_values()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, _, iv)| iv)
}

/// Bins `shapley_values` into `n_bins` quantile bins (edges at
/// `sorted[floor(b * n / n_bins)]`) and returns the range of
/// `feature_values` whose Shapley value shares a bin with `instance_value`.
pub fn decile_interval(
    feature_values: &[f64],
    shapley_values: &[f64],
    instance_value: f64,
    n_bins: usize,
) -> Option<Interval> {
    if shapley_values.is_empty() || n_bins == 0 {
        return None;
    }
    let mut sorted = shapley_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..n_bins)
        .map(|b| sorted[(b * n / n_bins).min(n - 1)])
        .collect();
    let bin = |s: f64| edges.iter().filter(|&&e| s >= e).count();
    let target = bin(instance_value);
    let members = feature_values
        .iter()
        .zip(shapley_values)
        .filter(|(v, &s)| !v.is_nan() && bin(s) == target)
        .map(|(&v, _)| v);
    members.fold(None, |acc: Option<Interval>, v| {
        Some(match acc {
            None => Interval { lo: v, hi: v },
            Some(iv) => Interval {
                lo: iv.lo.min(v),
                hi: iv.hi.max(v),
            },
        })
    })
}

/// Per-instance Shapley attributions across a reference set of test rows.
#[derive(Debug, Clone, Default)]
pub struct ShapleyReference {
    pub feature_rows: Vec<Vec<f64>>,
    pub attributions: Vec<Vec<f64>>,
}

/// Inputs for deriving influential regions.
pub struct IntervalContext<'a> {
    /// Training-set domain per column (`None` for all-missing columns).
    pub domains: &'a [Option<ObservedDomain>],
    pub train_std: &'a [f64],
    /// Present for Shapley explanations, which carry no intervals.
    pub shapley: Option<&'a ShapleyReference>,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InfluentialRegion {
    Interval {
        lo: f64,
        hi: f64,
    },
    /// Values of a binary column other than the instance's.
    Complement {
        values: Vec<f64>,
    },
    /// Missing instance value with nothing to exclude.
    Unknown,
}

impl InfluentialRegion {
    pub fn contains(&self, v: f64) -> bool {
        match self {
            Self::Interval { lo, hi } => v >= *lo && v <= *hi,
            Self::Complement { values } => !values.contains(&v),
            Self::Unknown => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Piece {
    fn contains(&self, v: f64) -> bool {
        (if self.lo_open {
            v > self.lo
        } else {
            v >= self.lo
        }) && (if self.hi_open {
            v < self.hi
        } else {
            v <= self.hi
        })
    }

    fn is_empty(&self) -> bool {
        self.hi < self.lo || (self.hi == self.lo && (self.lo_open || self.hi_open))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SamplingDomain {
    Continuous { pieces: Vec<Piece> },
    Discrete { values: Vec<f64> },
}

impl SamplingDomain {
    pub fn contains(&self, v: f64) -> bool {
        match self {
            Self::Continuous { pieces } => pieces.iter().any(|p| p.contains(v)),
            Self::Discrete { values } => values.contains(&v),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Discrete { values } => values[rng.random_range(0..values.len())],
            Self::Continuous { pieces } => {
                let total: f64 = pieces.iter().map(|p| p.hi - p.lo).sum();
                loop {
                    let piece = if total > 0.0 {
                        let mut u = rng.random::<f64>() * total;
                        let mut chosen = pieces[pieces.len() - 1];
                        for p in pieces {
                            let len = p.hi - p.lo;
                            if u < len {
                                chosen = *p;
                                break;
                            }
                            u -= len;
                        }
                        chosen
                    } else {
                        pieces[rng.random_range(0..pieces.len())]
                    };
                    let v = piece.lo + rng.random::<f64>() * (piece.hi - piece.lo);
                    if piece.contains(v) {
                        return v;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTarget {
    pub column: usize,
    pub region: InfluentialRegion,
    pub domain: SamplingDomain,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub case_ref: CaseRef,
    pub targets: Vec<PerturbationTarget>,
    pub n_perturbations: usize,
}

impl PerturbationPlan {
    pub fn target_columns(&self) -> Vec<usize> {
        self.targets.iter().map(|t| t.column).collect()
    }

    pub fn has_fallback(&self) -> bool {
        self.targets.iter().any(|t| !t.flags.is_empty())
    }
}

fn point_domain(x: f64) -> ObservedDomain {
    let v = if x.is_nan() { 0.0 } else { x };
    ObservedDomain {
        lo: v,
        hi: v,
        integer_valued: false,
        is_binary_indicator: false,
        values: Vec::new(),
    }
}

/// Influential region for `column`; the flag is set when neither the
/// explanations nor the Shapley reference give one and the instance value
/// plus or minus one training std is used instead.
pub fn influential_region(
    set: &ExplanationSet,
    column: usize,
    instance_value: f64,
    ctx: &IntervalContext,
) -> Result<(InfluentialRegion, bool), MetricsError> {
    let domain = ctx.domains.get(column).ok_or(MetricsError::WidthMismatch {
        expected: ctx.domains.len(),
        got: column + 1,
    })?;
    if domain.as_ref().is_some_and(|d| d.is_binary_indicator) {
        let values = [0.0, 1.0]
            .into_iter()
            .filter(|&v| v != instance_value)
            .collect();
        return Ok((InfluentialRegion::Complement { values }, false));
    }
    let found = match ctx.shapley {
        Some(reference) => {
            let m = set.explanations.len().max(1) as f64;
            let own = set
                .explanations
                .iter()
                .map(|e| e.attribution(column).map_or(0.0, |a| a.weight))
                .sum::<f64>()
                / m;
            let feature: Vec<f64> = reference.feature_rows.iter().map(|r| r[column]).collect();
            let shap: Vec<f64> = reference.attributions.iter().map(|r| r[column]).collect();
            decile_interval(&feature, &shap, own, ctx.n_bins)
        }
        None => modal_interval(set, column),
    };
    if let Some(iv) = found {
        return Ok((
            InfluentialRegion::Interval {
                lo: iv.lo,
                hi: iv.hi,
            },
            false,
        ));
    }
    if instance_value.is_nan() {
        return Ok((InfluentialRegion::Unknown, true));
    }
    let std = ctx
        .train_std
        .get(column)
        .copied()
        .filter(|s| s.is_finite())
        .unwrap_or(0.0);
    Ok((
        InfluentialRegion::Interval {
            lo: instance_value - std,
            hi: instance_value + std,
        },
        true,
    ))
}

fn integers_in(pieces: &[Piece]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in pieces {
        let mut v = p.lo.ceil();
        while v <= p.hi {
            if p.contains(v) {
                out.push(v);
            }
            v += 1.0;
        }
    }
    out
}

/// Observed domain minus the influential region, extended outward when the
/// region covers the whole domain.
pub fn sampling_domain(
    column: usize,
    region: &InfluentialRegion,
    domain: &ObservedDomain,
) -> Result<SamplingDomain, MetricsError> {
    let (lo, hi) = (domain.lo, domain.hi);
    let (a, b) = match region {
        InfluentialRegion::Complement { values } => {
            if values.is_empty() {
                return Err(MetricsError::EmptySamplingDomain(column));
            }
            return Ok(SamplingDomain::Discrete {
                values: values.clone(),
            });
        }
        InfluentialRegion::Unknown => (f64::INFINITY, f64::INFINITY),
        InfluentialRegion::Interval { lo, hi } => (*lo, *hi),
    };
    let inside = [
        Piece {
            lo,
            hi: a.min(hi),
            lo_open: false,
            hi_open: a <= hi,
        },
        Piece {
            lo: b.max(lo),
            hi,
            lo_open: b >= lo,
            hi_open: false,
        },
    ];
    let mut pieces: Vec<Piece> = inside.into_iter().filter(|p| !p.is_empty()).collect();
    if pieces.len() == 2 && pieces[0] == pieces[1] {
        pieces.pop();
    }
    let extension = || {
        let (lo2, hi2) = (lo.min(a), hi.max(b));
        let w = (hi - lo).max(1.0);
        vec![
            Piece {
                lo: lo2 - w,
                hi: lo2,
                lo_open: false,
                hi_open: true,
            },
            Piece {
                lo: hi2,
                hi: hi2 + w,
                lo_open: true,
                hi_open: false,
            },
        ]
    };
    if domain.integer_valued {
        let mut values = integers_in(&pieces);
        if values.is_empty() {
            values = integers_in(&extension());
        }
        return Ok(SamplingDomain::Discrete { values });
    }
    if pieces.is_empty() {
        pieces = extension();
    }
    Ok(SamplingDomain::Continuous { pieces })
}

pub fn build_plan_for_targets(
    set: &ExplanationSet,
    row: &[f64],
    targets: &[usize],
    n_perturbations: usize,
    ctx: &IntervalContext,
) -> Result<PerturbationPlan, MetricsError> {
    if n_perturbations == 0 {
        return Err(MetricsError::Invalid("n_perturbations must be >= 1".into()));
    }
    let targets = targets
        .iter()
        .map(|&column| {
            let x = *row.get(column).ok_or(MetricsError::WidthMismatch {
                expected: row.len(),
                got: column + 1,
            })?;
            let (region, fallback) = influential_region(set, column, x, ctx)?;
            let observed = ctx.domains[column]
                .clone()
                .unwrap_or_else(|| point_domain(x));
            let domain = sampling_domain(column, &region, &observed)?;
            Ok(PerturbationTarget {
                column,
                region,
                domain,
                flags: if fallback {
                    vec![FLAG_FALLBACK_INTERVAL.to_string()]
                } else {
                    vec![]
                },
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(PerturbationPlan {
        case_ref: set.case_ref.clone(),
        targets,
        n_perturbations,
    })
}

pub fn build_plan(
    set: &ExplanationSet,
    row: &[f64],
    k: usize,
    n_perturbations: usize,
    ctx: &IntervalContext,
) -> Result<PerturbationPlan, MetricsError> {
    let targets = select_perturbation_targets(set, k)?;
    build_plan_for_targets(set, row, &targets, n_perturbations, ctx)
}

/// Resamples every target column from its sampling domain.
pub fn perturb<R: Rng + ?Sized>(row: &[f64], plan: &PerturbationPlan, rng: &mut R) -> Vec<f64> {
    let mut out = row.to_vec();
    for t in &plan.targets {
        out[t.column] = t.domain.sample(rng);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub case_ref: CaseRef,
    pub f: f64,
    /// Probability of the class predicted for the original row.
    pub y_original: f64,
    pub predicted_positive: bool,
    /// Same-class probabilities of the perturbed rows.
    pub y_perturbed: Vec<f64>,
    /// `|Y(x) - Y(x')| / Y(x)` per perturbation.
    pub deltas: Vec<f64>,
}

pub fn fidelity<R: Rng + ?Sized>(
    model: &dyn BlackBox,
    row: &[f64],
    plan: &PerturbationPlan,
    rng: &mut R,
) -> Result<FidelityScore, MetricsError> {
    if row.len() != model.n_features() {
        return Err(MetricsError::WidthMismatch {
            expected: model.n_features(),
            got: row.len(),
        });
    }
    if plan.n_perturbations == 0 {
        return Err(MetricsError::Invalid("n_perturbations must be >= 1".into()));
    }
    let p = model.predict(row);
    let positive = p >= 0.5;
    let same_class = |q: f64| if positive { q } else { 1.0 - q };
    let y = same_class(p);
    let y_perturbed: Vec<f64> = (0..plan.n_perturbations)
        .map(|_| same_class(model.predict(&perturb(row, plan, rng))))
        .collect();
    Ok(score_from_predictions(
        plan.case_ref.clone(),
        y,
        positive,
        y_perturbed,
    ))
}

fn score_from_predictions(
    case_ref: CaseRef,
    y: f64,
    positive: bool,
    y_perturbed: Vec<f64>,
) -> FidelityScore {
    let deltas: Vec<f64> = y_perturbed.iter().map(|q| (y - q).abs() / y).collect();
    FidelityScore {
        case_ref,
        f: deltas.iter().sum::<f64>() / deltas.len() as f64,
        y_original: y,
        predicted_positive: positive,
        y_perturbed,
        deltas,
    }
}
