//! Binary outcome classifiers.
//!
//! [`GbtModel`] is the black box under explanation; [`LinearModel`] is a
//! white-box logistic model used to validate explainers against known
//! coefficients.

mod gbt;
mod linear;

pub use gbt::{train_gbt, GbtConfig, GbtModel, Node, RegressionTree, GBT_FORMAT_VERSION};
pub use linear::{train_logistic, LinearModel, LogisticConfig};

use thiserror::Error;

use crate::encoding::FeatureMatrix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("degenerate training matrix ({rows} rows, {cols} columns)")]
    DegenerateMatrix { rows: usize, cols: usize },
    #[error("row width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Anything that maps a feature row to a score; for classifiers the score
/// is the positive-class probability.
pub trait BlackBox: Sync {
    fn n_features(&self) -> usize;

    /// Unchecked prediction; `row.len()` must equal `n_features()`.
    fn predict(&self, row: &[f64]) -> f64;
}

impl<T: BlackBox + ?Sized> BlackBox for &T {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn predict(&self, row: &[f64]) -> f64 {
        (**self).predict(row)
    }
}

/// Wraps a closure as a black box.
pub struct FnModel<F> {
    n_features: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(n_features: usize, f: F) -> Self {
        Self { n_features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> BlackBox for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

pub fn predict_proba<M: BlackBox + ?Sized>(model: &M, row: &[f64]) -> Result<f64, ModelError> {
    if row.len() != model.n_features() {
        return Err(ModelError::WidthMismatch {
            expected: model.n_features(),
            got: row.len(),
        });
    }
    Ok(model.predict(row))
}

/// Fraction of rows where `predict >= threshold` agrees with the label.
pub fn evaluate_accuracy<M: BlackBox + ?Sized>(
    model: &M,
    matrix: &FeatureMatrix,
    threshold: f64,
) -> Result<f64, ModelError> {
    if matrix.n_rows == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    if matrix.n_cols != model.n_features() {
        return Err(ModelError::WidthMismatch {
            expected: model.n_features(),
            got: matrix.n_cols,
        });
    }
    let correct = matrix
        .rows()
        .zip(&matrix.labels)
        .filter(|(row, &label)| (model.predict(row) >= threshold) == label)
        .count();
    Ok(correct as f64 / matrix.n_rows as f64)
}

pub(crate) fn check_training_matrix(matrix: &FeatureMatrix) -> Result<(), ModelError> {
    if matrix.n_cols == 0 || matrix.n_rows < 2 {
        return Err(ModelError::DegenerateMatrix {
            rows: matrix.n_rows,
            cols: matrix.n_cols,
        });
    }
    let pos = matrix.labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == matrix.n_rows {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_util {
    use crate::encoding::{EncoderKind, FeatureDescriptor, FeatureMatrix};

    pub fn matrix(rows: &[Vec<f64>], labels: &[bool]) -> FeatureMatrix {
        let n_cols = rows.first().map_or(0, Vec::len);
        FeatureMatrix {
            bucket_id: "test".into(),
            n_rows: rows.len(),
            n_cols,
            values: rows.iter().flatten().copied().collect(),
            descriptors: (0..n_cols)
                .map(|j| FeatureDescriptor {
                    column_index: j,
                    source_attr: format!("x{j}"),
                    encoder: EncoderKind::StaticNumeric,
                    category: None,
                    event_index: None,
                })
                .collect(),
            labels: labels.to_vec(),
            case_ids: (0..rows.len()).map(|i| format!("c{i}")).collect(),
            prefix_lengths: vec![1; rows.len()],
        }
    }
}
