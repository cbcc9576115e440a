//! Local feature-attribution explainers and the explanation interchange
//! format.
//!
//! Two explainers are provided: a perturbation-based local linear surrogate
//! ([`SurrogateExplainer`]) and a Shapley-value explainer
//! ([`ShapleyExplainer`], exact enumeration for small `d`, permutation
//! sampling otherwise). Both implement [`Explainer`], and
//! [`repeat_explanations`] produces the `M` repeated explanations that the
//! stability metrics consume.

mod shapley;
mod surrogate;

pub use shapley::{exact_shapley, sampled_shapley, ShapleyConfig, ShapleyExplainer};
pub use surrogate::{ColumnKind, ColumnStats, SurrogateConfig, SurrogateExplainer, TrainingStats};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BlackBox;
use crate::rng::SeedPath;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("row width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("need at least 2 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error("invalid explainer configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid explanation set: {0}")]
    InvalidSet(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseRef {
    pub case_id: String,
    pub prefix_length: usize,
}

impl CaseRef {
    pub fn new(case_id: impl Into<String>, prefix_length: usize) -> Self {
        Self {
            case_id: case_id.into(),
            prefix_length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub column_index: usize,
    pub weight: f64,
    /// Feature-value range credited as influential (surrogate only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

pub const FLAG_DEGENERATE_NEIGHBORHOOD: &str = "degenerate_neighborhood";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub case_ref: CaseRef,
    pub explainer_id: String,
    /// Width `d` of the explained feature vector.
    pub n_features: usize,
    pub attributions: Vec<Attribution>,
    pub selected_k: usize,
    pub seed_used: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Explanation {
    /// Weights as a length-`d` vector, zero where no attribution is listed.
    pub fn dense_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_features];
        for a in &self.attributions {
            if a.column_index < self.n_features {
                w[a.column_index] = a.weight;
            }
        }
        w
    }

    pub fn attribution(&self, column: usize) -> Option<&Attribution> {
        self.attributions.iter().find(|a| a.column_index == column)
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        let mut seen = vec![false; self.n_features];
        for a in &self.attributions {
            if a.column_index >= self.n_features {
                return Err(ExplainError::InvalidSet(format!(
                    "column {} outside [0, {})",
                    a.column_index, self.n_features
                )));
            }
            if std::mem::replace(&mut seen[a.column_index], true) {
                return Err(ExplainError::InvalidSet(format!(
                    "duplicate column {}",
                    a.column_index
                )));
            }
            if !a.weight.is_finite() {
                return Err(ExplainError::InvalidSet("non-finite weight".into()));
            }
        }
        Ok(())
    }
}

/// `M` explanations of one instance by one explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub case_ref: CaseRef,
    pub explanations: Vec<Explanation>,
}

impl ExplanationSet {
    pub fn n_features(&self) -> usize {
        self.explanations.first().map_or(0, |e| e.n_features)
    }

    pub fn explainer_id(&self) -> &str {
        self.explanations
            .first()
            .map_or("", |e| e.explainer_id.as_str())
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        let first = self
            .explanations
            .first()
            .ok_or_else(|| ExplainError::InvalidSet("no explanations".into()))?;
        for e in &self.explanations {
            e.validate()?;
            if e.case_ref != self.case_ref
                || e.explainer_id != first.explainer_id
                || e.n_features != first.n_features
            {
                return Err(ExplainError::InvalidSet(
                    "explanations disagree on case, explainer or width".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ExplainError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ExplainError> {
        let set: ExplanationSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    /// File name used in explanation directories.
    pub fn file_name(&self) -> String {
        let safe: String = self
            .case_ref
            .case_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!(
            "{}__{}__{}.json",
            self.explainer_id(),
            safe,
            self.case_ref.prefix_length
        )
    }
}

pub fn write_explanation_dir(dir: &Path, sets: &[ExplanationSet]) -> Result<(), ExplainError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ExplainError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for set in sets {
        let path = dir.join(set.file_name());
        std::fs::write(&path, set.to_json()?).map_err(io(&path))?;
    }
    Ok(())
}

/// Reads every `*.json` file in `dir`, sorted by file name.
pub fn read_explanation_dir(dir: &Path) -> Result<Vec<ExplanationSet>, ExplainError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ExplainError::Io { path, source }
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| ExplanationSet::from_json(&std::fs::read_to_string(p).map_err(io(p))?))
        .collect()
}

pub trait Explainer: Sync {
    fn id(&self) -> &str;

    fn explain(
        &self,
        model: &dyn BlackBox,
        row: &[f64],
        case_ref: &CaseRef,
        seed: u64,
    ) -> Result<Explanation, ExplainError>;
}

pub fn repetition_seed(base_seed: u64, repetition: usize) -> u64 {
    SeedPath::new(base_seed)
        .str("repetition")
        .u64(repetition as u64)
        .seed()
}

/// Runs `explainer` `m` times with seeds derived from `(base_seed, index)`.
pub fn repeat_explanations(
    explainer: &dyn Explainer,
    model: &dyn BlackBox,
    row: &[f64],
    case_ref: &CaseRef,
    m: usize,
    base_seed: u64,
) -> Result<ExplanationSet, ExplainError> {
    if m < 2 {
        return Err(ExplainError::TooFewRepetitions(m));
    }
    let explanations = (0..m)
        .map(|r| explainer.explain(model, row, case_ref, repetition_seed(base_seed, r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExplanationSet {
        case_ref: case_ref.clone(),
        explanations,
    })
}

pub(crate) fn check_width(model: &dyn BlackBox, row: &[f64]) -> Result<(), ExplainError> {
    if row.len() != model.n_features() {
        return Err(ExplainError::WidthMismatch {
            expected: model.n_features(),
            got: row.len(),
        });
    }
    Ok(())
}
