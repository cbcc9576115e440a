//! Synthetic event logs with a known labeling rule, so tests can check
//! explanations against ground-truth influential features.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    parse_timestamp, AttrKind, AttributeDecl, DType, Event, EventLog, LogError, LogSchema, Trace,
    Value,
};
use crate::rng::{seeded, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueGen {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Normal {
        mean: f64,
        std: f64,
    },
    /// Uniform integer in `lo..=hi`.
    Integer {
        lo: i64,
        hi: i64,
    },
    Categorical {
        values: Vec<String>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

impl ValueGen {
    fn dtype(&self) -> DType {
        match self {
            ValueGen::Categorical { .. } => DType::Categorical,
            _ => DType::Numeric,
        }
    }

    fn validate(&self, name: &str) -> Result<(), LogError> {
        let bad = |msg: &str| Err(LogError::InvalidSpec(format!("attribute `{name}`: {msg}")));
        match self {
            ValueGen::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad("uniform needs finite lo <= hi")
            }
            ValueGen::Normal { mean, std } if !(mean.is_finite() && *std >= 0.0) => {
                bad("normal needs finite mean and std >= 0")
            }
            ValueGen::Integer { lo, hi } if lo > hi => bad("integer needs lo <= hi"),
            ValueGen::Categorical { values, weights } => {
                if values.is_empty() || values.iter().any(|v| v.is_empty()) {
                    return bad("categorical needs non-empty values");
                }
                if let Some(w) = weights {
                    if w.len() != values.len() || w.iter().any(|x| !(*x >= 0.0)) {
                        return bad("weights must be non-negative, one per value");
                    }
                    if w.iter().sum::<f64>() <= 0.0 {
                        return bad("weights must not all be zero");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut StreamRng) -> Value {
        match self {
            ValueGen::Uniform { lo, hi } => {
                if lo == hi {
                    Value::Num(*lo)
                } else {
                    Value::Num(rng.random_range(*lo..*hi))
                }
            }
            ValueGen::Normal { mean, std } => {
                let normal = Normal::new(*mean, *std).expect("validated");
                Value::Num(normal.sample(rng))
            }
            ValueGen::Integer { lo, hi } => Value::Num(rng.random_range(*lo..=*hi) as f64),
            ValueGen::Categorical { values, weights } => {
                Value::Cat(values[pick_weighted(rng, weights.as_deref(), values.len())].clone())
            }
        }
    }
}

fn pick_weighted(rng: &mut StreamRng, weights: Option<&[f64]>, n: usize) -> usize {
    match weights {
        None => rng.random_range(0..n),
        Some(w) => {
            let total: f64 = w.iter().sum();
            let mut target = rng.random::<f64>() * total;
            for (i, x) in w.iter().enumerate() {
                if target < *x {
                    return i;
                }
                target -= x;
            }
            n - 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrGen {
    pub name: String,
    #[serde(flatten)]
    pub gen: ValueGen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerm {
    pub attr: String,
    pub weight: f64,
}

/// Deterministic labeling rule over a finished trace.
///
/// Numeric references resolve to the static value, or to the mean over
/// events for a dynamic attribute. Categorical references match the static
/// value, or any event for a dynamic attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    Constant {
        value: bool,
    },
    ActivityOccurs {
        activity: String,
    },
    ActivityCountAtLeast {
        activity: String,
        count: usize,
    },
    NumericAbove {
        attr: String,
        threshold: f64,
    },
    CategoryIs {
        attr: String,
        value: String,
    },
    /// `Σ weight·value > threshold` over numeric attributes.
    Score {
        terms: Vec<ScoreTerm>,
        threshold: f64,
    },
    All {
        rules: Vec<LabelRule>,
    },
    Any {
        rules: Vec<LabelRule>,
    },
    Not {
        rule: Box<LabelRule>,
    },
}

/// An attribute (and, for categoricals, a category) the label depends on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundTruthFeature {
    pub attr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl LabelRule {
    fn numeric(trace: &Trace, attr: &str) -> f64 {
        if let Some(v) = trace.static_attrs.get(attr).and_then(Value::as_num) {
            return v;
        }
        let vals: Vec<f64> = trace
            .events
            .iter()
            .filter_map(|e| e.attrs.get(attr).and_then(Value::as_num))
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn evaluate(&self, trace: &Trace) -> bool {
        match self {
            LabelRule::Constant { value } => *value,
            LabelRule::ActivityOccurs { activity } => {
                trace.events.iter().any(|e| &e.activity == activity)
            }
            LabelRule::ActivityCountAtLeast { activity, count } => {
                trace
                    .events
                    .iter()
                    .filter(|e| &e.activity == activity)
                    .count()
                    >= *count
            }
            LabelRule::NumericAbove { attr, threshold } => Self::numeric(trace, attr) > *threshold,
            LabelRule::CategoryIs { attr, value } => {
                if let Some(v) = trace.static_attrs.get(attr) {
                    return v.as_cat() == Some(value.as_str());
                }
                trace
                    .events
                    .iter()
                    .any(|e| e.attrs.get(attr).and_then(Value::as_cat) == Some(value.as_str()))
            }
            LabelRule::Score { terms, threshold } => {
                let s: f64 = terms
                    .iter()
                    .map(|t| t.weight * Self::numeric(trace, &t.attr))
                    .sum();
                s > *threshold
            }
            LabelRule::All { rules } => rules.iter().all(|r| r.evaluate(trace)),
            LabelRule::Any { rules } => rules.iter().any(|r| r.evaluate(trace)),
            LabelRule::Not { rule } => !rule.evaluate(trace),
        }
    }

    pub fn ground_truth(&self, activity_attr: &str) -> Vec<GroundTruthFeature> {
        let mut out = Vec::new();
        self.collect(activity_attr, &mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect(&self, activity_attr: &str, out: &mut Vec<GroundTruthFeature>) {
        let feature = |attr: &str, category: Option<&str>| GroundTruthFeature {
            attr: attr.to_string(),
            category: category.map(str::to_string),
        };
        match self {
            LabelRule::Constant { .. } => {}
            LabelRule::ActivityOccurs { activity }
            | LabelRule::ActivityCountAtLeast { activity, .. } => {
                out.push(feature(activity_attr, Some(activity)))
            }
            LabelRule::NumericAbove { attr, .. } => out.push(feature(attr, None)),
            LabelRule::CategoryIs { attr, value } => out.push(feature(attr, Some(value))),
            LabelRule::Score { terms, .. } => out.extend(
                terms
                    .iter()
                    .filter(|t| t.weight != 0.0)
                    .map(|t| feature(&t.attr, None)),
            ),
            LabelRule::All { rules } | LabelRule::Any { rules } => {
                rules.iter().for_each(|r| r.collect(activity_attr, out))
            }
            LabelRule::Not { rule } => rule.collect(activity_attr, out),
        }
    }
}

fn default_start() -> String {
    "2020-01-01T00:00:00".to_string()
}

fn default_gap() -> f64 {
    60.0
}

/// Generator specification (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_traces: usize,
    pub activities: Vec<String>,
    #[serde(default)]
    pub activity_weights: Option<Vec<f64>>,
    pub trace_length: LengthRange,
    #[serde(default)]
    pub static_attrs: Vec<AttrGen>,
    #[serde(default)]
    pub dynamic_attrs: Vec<AttrGen>,
    pub label_rule: LabelRule,
    /// Probability of flipping the rule's label.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_start")]
    pub start: String,
    /// Mean gap between consecutive case starts and between events.
    #[serde(default = "default_gap")]
    pub mean_gap_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub seed: u64,
    pub label_rule: LabelRule,
    pub label_noise: f64,
    pub ground_truth: Vec<GroundTruthFeature>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLog {
    pub log: EventLog,
    pub metadata: SyntheticMetadata,
}

impl GenSpec {
    pub fn schema(&self) -> LogSchema {
        let decls = self
            .static_attrs
            .iter()
            .map(|a| (a, AttrKind::Static))
            .chain(self.dynamic_attrs.iter().map(|a| (a, AttrKind::Dynamic)))
            .map(|(a, kind)| AttributeDecl {
                name: a.name.clone(),
                kind,
                dtype: a.gen.dtype(),
            })
            .collect();
        LogSchema {
            case_id_column: "case_id".into(),
            activity_column: "activity".into(),
            timestamp_column: "timestamp".into(),
            attribute_decls: decls,
            label_column: "label".into(),
            positive_label: "deviant".into(),
            negative_label: Some("regular".into()),
        }
    }

    fn validate(&self) -> Result<NaiveDateTime, LogError> {
        let bad = |msg: String| Err(LogError::InvalidSpec(msg));
        if self.n_traces == 0 {
            return bad("n_traces must be positive".into());
        }
        if self.activities.is_empty() || self.activities.iter().any(|a| a.is_empty()) {
            return bad("activity alphabet must be non-empty".into());
        }
        if let Some(w) = &self.activity_weights {
            ValueGen::Categorical {
                values: self.activities.clone(),
                weights: Some(w.clone()),
            }
            .validate("activity")?;
        }
        let LengthRange { min, max } = self.trace_length;
        if min == 0 || min > max {
            return bad(format!(
                "trace_length must satisfy 1 <= min <= max, got [{min}, {max}]"
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1]".into());
        }
        if !(self.mean_gap_minutes >= 0.0 && self.mean_gap_minutes.is_finite()) {
            return bad("mean_gap_minutes must be non-negative".into());
        }
        for a in self.static_attrs.iter().chain(&self.dynamic_attrs) {
            a.gen.validate(&a.name)?;
        }
        self.schema()
            .validate()
            .map_err(|e| LogError::InvalidSpec(e.to_string()))?;
        parse_timestamp(&self.start)
            .ok_or_else(|| LogError::InvalidSpec(format!("bad start timestamp `{}`", self.start)))
    }
}

pub fn generate_synthetic_log(spec: &GenSpec, seed: u64) -> Result<SyntheticLog, LogError> {
    let start = spec.validate()?;
    let schema = spec.schema();
    let mut rng = seeded(seed);
    let gap_secs = (spec.mean_gap_minutes * 60.0).round() as i64;
    let width = (spec.n_traces as f64).log10().floor() as usize + 1;

    let mut traces = Vec::with_capacity(spec.n_traces);
    for i in 0..spec.n_traces {
        let static_attrs: BTreeMap<String, Value> = spec
            .static_attrs
            .iter()
            .map(|a| (a.name.clone(), a.gen.sample(&mut rng)))
            .collect();
        let len = rng.random_range(spec.trace_length.min..=spec.trace_length.max);
        let mut ts = start + Duration::seconds(gap_secs * i as i64);
        let mut events = Vec::with_capacity(len);
        for _ in 0..len {
            let act = pick_weighted(
                &mut rng,
                spec.activity_weights.as_deref(),
                spec.activities.len(),
            );
            let attrs = spec
                .dynamic_attrs
                .iter()
                .map(|a| (a.name.clone(), a.gen.sample(&mut rng)))
                .collect();
            events.push(Event {
                activity: spec.activities[act].clone(),
                timestamp: ts,
                attrs,
            });
            if gap_secs > 0 {
                ts += Duration::seconds(rng.random_range(0..=2 * gap_secs));
            }
        }
        let mut trace = Trace {
            case_id: format!("case_{i:0width$}"),
            events,
            static_attrs,
            label: false,
        };
        let mut label = spec.label_rule.evaluate(&trace);
        if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            label = !label;
        }
        trace.label = label;
        traces.push(trace);
    }
    let metadata = SyntheticMetadata {
        seed,
        label_rule: spec.label_rule.clone(),
        label_noise: spec.label_noise,
        ground_truth: spec.label_rule.ground_truth(&schema.activity_column),
    };
    Ok(SyntheticLog {
        log: EventLog { schema, traces },
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::parse_log_str;

    fn spec(rule: LabelRule) -> GenSpec {
        GenSpec {
            n_traces: 100,
            activities: vec!["A".into(), "B".into(), "C".into()],
            activity_weights: Some(vec![3.0, 1.0, 3.0]),
            trace_length: LengthRange { min: 1, max: 4 },
            static_attrs: vec![AttrGen {
                name: "age".into(),
                gen: ValueGen::Integer { lo: 18, hi: 90 },
            }],
            dynamic_attrs: vec![AttrGen {
                name: "org".into(),
                gen: ValueGen::Categorical {
                    values: vec!["x".into(), "y".into()],
                    weights: None,
                },
            }],
            label_rule: rule,
            label_noise: 0.0,
            start: default_start(),
            mean_gap_minutes: 30.0,
        }
    }

    #[test]
    fn label_b_occurs_matches_empirical_frequency() {
        let rule = LabelRule::ActivityOccurs {
            activity: "B".into(),
        };
        let synth = generate_synthetic_log(&spec(rule), 11).unwrap();
        let with_b = synth
            .log
            .traces
            .iter()
            .filter(|t| t.events.iter().any(|e| e.activity == "B"))
            .count();
        assert_eq!(synth.log.class_counts().0, with_b);
        assert!(with_b > 0 && with_b < 100);
        assert_eq!(
            synth.metadata.ground_truth,
            [GroundTruthFeature {
                attr: "activity".into(),
                category: Some("B".into())
            }]
        );
    }

    #[test]
    fn constant_rule_all_positive() {
        let synth = generate_synthetic_log(&spec(LabelRule::Constant { value: true }), 3).unwrap();
        assert_eq!(synth.log.positive_fraction(), 1.0);
    }

    #[test]
    fn same_seed_byte_identical() {
        let s = spec(LabelRule::NumericAbove {
            attr: "age".into(),
            threshold: 50.0,
        });
        let a = generate_synthetic_log(&s, 5)
            .unwrap()
            .log
            .to_csv_string()
            .unwrap();
        let b = generate_synthetic_log(&s, 5)
            .unwrap()
            .log
            .to_csv_string()
            .unwrap();
        let c = generate_synthetic_log(&s, 6)
            .unwrap()
            .log
            .to_csv_string()
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generated_log_parses_back() {
        let s = spec(LabelRule::CategoryIs {
            attr: "org".into(),
            value: "x".into(),
        });
        let synth = generate_synthetic_log(&s, 2).unwrap();
        let text = synth.log.to_csv_string().unwrap();
        let parsed = parse_log_str(&text, &synth.log.schema).unwrap();
        assert_eq!(parsed, synth.log);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(LabelRule::Constant { value: false });
        s.trace_length = LengthRange { min: 3, max: 2 };
        assert!(matches!(
            generate_synthetic_log(&s, 0),
            Err(LogError::InvalidSpec(_))
        ));
        let mut s = spec(LabelRule::Constant { value: false });
        s.static_attrs[0].name = "label".into();
        assert!(matches!(
            generate_synthetic_log(&s, 0),
            Err(LogError::InvalidSpec(_))
        ));
    }

    #[test]
    fn spec_json_shape() {
        let text = r#"{
            "n_traces": 5,
            "activities": ["A", "B"],
            "trace_length": {"min": 1, "max": 3},
            "static_attrs": [{"name": "amount", "type": "uniform", "lo": 0, "hi": 10}],
            "label_rule": {"kind": "score", "terms": [{"attr": "amount", "weight": 1.0}], "threshold": 5}
        }"#;
        let s: GenSpec = serde_json::from_str(text).unwrap();
        assert_eq!(s.mean_gap_minutes, 60.0);
        assert!(generate_synthetic_log(&s, 1).is_ok());
    }
}
