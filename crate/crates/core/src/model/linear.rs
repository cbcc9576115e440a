//! L2-regularized logistic regression.

use serde::{Deserialize, Serialize};

use super::{check_training_matrix, logistic, BlackBox, ModelError};
use crate::encoding::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Training column means substituted for missing inputs.
    #[serde(default)]
    pub impute_means: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, intercept: f64) -> Self {
        let impute_means = vec![0.0; weights.len()];
        Self {
            weights,
            intercept,
            impute_means,
        }
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .weights
                .iter()
                .zip(row)
                .zip(&self.impute_means)
                .map(|((w, &x), &m)| w * if x.is_nan() { m } else { x })
                .sum::<f64>()
    }
}

impl BlackBox for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict(&self, row: &[f64]) -> f64 {
        logistic(self.margin(row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iters: usize,
    /// Stop once every gradient component is below this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            tolerance: 1e-10,
        }
    }
}

/// Fits by deterministic preconditioned batch gradient descent. `_seed` is
/// accepted for interface symmetry with the other trainers; the fit starts
/// from zero and uses no randomness.
pub fn train_logistic(
    matrix: &FeatureMatrix,
    l2: f64,
    _seed: u64,
) -> Result<LinearModel, ModelError> {
    train_logistic_with(matrix, l2, &LogisticConfig::default())
}

pub fn train_logistic_with(
    matrix: &FeatureMatrix,
    l2: f64,
    config: &LogisticConfig,
) -> Result<LinearModel, ModelError> {
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(ModelError::InvalidConfig(
            "l2 must be finite and non-negative".into(),
        ));
    }
    check_training_matrix(matrix)?;
    let (n, d) = (matrix.n_rows, matrix.n_cols);
    let means: Vec<f64> = (0..d)
        .map(|j| {
            let (s, c) = matrix
                .column(j)
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        })
        .collect();
    let x: Vec<f64> = matrix
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| if v.is_nan() { means[k % d] } else { v })
        .collect();
    let y = matrix.labels_as_f64();

    // Block-diagonal majorizer of the Hessian: H <= 2 diag(H_ww, H_bb) with
    // H_ww <= (trace(X'X)/4n + l2) I and H_bb <= 1/4.
    let trace = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let step_w = 1.0 / (2.0 * (0.25 * trace + l2)).max(1e-12);
    let step_b = 2.0;

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..config.max_iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (i, row) in x.chunks(d).enumerate() {
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = logistic(z) - y[i];
            grad_b += r;
            for (g, v) in grad.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        grad_b /= n as f64;
        let mut worst = grad_b.abs();
        for (g, wj) in grad.iter_mut().zip(&w) {
            *g = *g / n as f64 + l2 * wj;
            worst = worst.max(g.abs());
        }
        if worst < config.tolerance {
            return Ok(LinearModel {
                weights: w,
                intercept: b,
                impute_means: means,
            });
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= step_w * g;
        }
        b -= step_b * grad_b;
    }
    Err(ModelError::NonConvergence(config.max_iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::predict_proba;
    use crate::model::test_util::matrix;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn closed_form_prediction() {
        let m = LinearModel::new(vec![2.0, -1.0], 0.0);
        let p = predict_proba(&m, &[1.0, 1.0]).unwrap();
        // logistic(1) = 1 / (1 + e^-1)
        assert!((p - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn separable_gives_positive_weight() {
        let rows: Vec<Vec<f64>> = (-5..5).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (-5..5).map(|i| i >= 0).collect();
        let m = train_logistic(&matrix(&rows, &labels), 0.1, 0).unwrap();
        assert!(m.weights[0] > 0.0);
    }

    #[test]
    fn heavy_l2_recovers_base_rate_intercept() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, (i % 3) as f64])
            .collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let m = train_logistic(&matrix(&rows, &labels), 1e6, 0).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-5));
        // intercept-only optimum is logit(10/40)
        let expected = (0.25f64 / 0.75).ln();
        assert!((m.intercept - expected).abs() < 1e-3, "{}", m.intercept);
    }

    #[test]
    fn recovers_generating_parameters() {
        let (w_true, b_true) = ([1.5, -0.8], 0.3);
        let mut rng = crate::rng::seeded(17);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..5000 {
            let x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = logistic(b_true + w_true[0] * x[0] + w_true[1] * x[1]);
            labels.push(rng.random::<f64>() < p);
            rows.push(x);
        }
        let m = train_logistic(&matrix(&rows, &labels), 0.0, 0).unwrap();
        for (got, want) in m.weights.iter().zip(w_true) {
            assert!(((got - want) / want).abs() < 0.1, "{got} vs {want}");
        }
        assert!(
            ((m.intercept - b_true) / b_true).abs() < 0.1 || (m.intercept - b_true).abs() < 0.05
        );
    }

    #[test]
    fn missing_cells_use_training_means() {
        let rows = vec![vec![f64::NAN], vec![2.0], vec![4.0], vec![0.0]];
        let m = train_logistic(&matrix(&rows, &[true, true, false, false]), 1.0, 0).unwrap();
        assert_eq!(m.impute_means, [2.0]);
        assert_eq!(m.predict(&[f64::NAN]), m.predict(&[2.0]));
    }
}
