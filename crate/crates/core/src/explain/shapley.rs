//! Shapley-value attributions against a background set.
//!
//! The value of a coalition `S` is the mean prediction over background rows
//! `b` of the composite row taking features in `S` from the explained
//! instance and the rest from `b`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_width, Attribution, CaseRef, ExplainError, Explainer, Explanation};
use crate::model::BlackBox;
use crate::rng::seeded;

pub const EXACT_HARD_LIMIT: usize = 20;

fn default_exact_max_d() -> usize {
    15
}
fn default_permutations() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyConfig {
    /// Largest `d` solved by full coalition enumeration.
    #[serde(default = "default_exact_max_d")]
    pub exact_max_d: usize,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            exact_max_d: default_exact_max_d(),
            n_permutations: default_permutations(),
        }
    }
}

pub struct ShapleyExplainer {
    pub config: ShapleyConfig,
    pub background: Vec<Vec<f64>>,
    id: String,
}

impl ShapleyExplainer {
    pub fn new(config: ShapleyConfig, background: Vec<Vec<f64>>) -> Result<Self, ExplainError> {
        if config.exact_max_d > EXACT_HARD_LIMIT {
            return Err(ExplainError::InvalidConfig(format!(
                "exact_max_d must be <= {EXACT_HARD_LIMIT}"
            )));
        }
        if config.n_permutations == 0 {
            return Err(ExplainError::InvalidConfig(
                "n_permutations must be >= 1".into(),
            ));
        }
        if background.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        Ok(Self {
            config,
            background,
            id: "shapley".into(),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn is_exact_for(&self, d: usize) -> bool {
        d <= self.config.exact_max_d
    }
}

fn check_background(background: &[Vec<f64>], d: usize) -> Result<(), ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(b) = background.iter().find(|b| b.len() != d) {
        return Err(ExplainError::WidthMismatch {
            expected: d,
            got: b.len(),
        });
    }
    Ok(())
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley(
    model: &dyn BlackBox,
    row: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<f64>, ExplainError> {
    check_width(model, row)?;
    let d = row.len();
    check_background(background, d)?;
    if d > EXACT_HARD_LIMIT {
        return Err(ExplainError::InvalidConfig(format!(
            "exact enumeration limited to d <= {EXACT_HARD_LIMIT}"
        )));
    }
    let n_masks = 1usize << d;
    let mut value = vec![0.0; n_masks];
    let mut composite = vec![0.0; d];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut total = 0.0;
        for b in background {
            for j in 0..d {
                composite[j] = if mask >> j & 1 == 1 { row[j] } else { b[j] };
            }
            total += model.predict(&composite);
        }
        *v = total / background.len() as f64;
    }
    // weight(s) = s! (d - s - 1)! / d! = 1 / (d * C(d - 1, s))
    let weight: Vec<f64> = (0..d)
        .map(|s| {
            let mut binom = 1.0f64;
            for t in 0..s {
                binom = binom * (d - 1 - t) as f64 / (t + 1) as f64;
            }
            1.0 / (d as f64 * binom)
        })
        .collect();
    let mut phi = vec![0.0; d];
    for mask in 0..n_masks {
        let size = mask.count_ones() as usize;
        if size == d {
            continue;
        }
        let w = weight[size];
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += w * (value[mask | 1 << i] - value[mask]);
            }
        }
    }
    Ok(phi)
}

/// Permutation-sampling estimate. Permutation `p` is paired with background
/// row `p mod |background|`. Returns the estimates and their standard
/// errors.
pub fn sampled_shapley(
    model: &dyn BlackBox,
    row: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), ExplainError> {
    check_width(model, row)?;
    let d = row.len();
    check_background(background, d)?;
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..d).collect();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut current = vec![0.0; d];
    for p in 0..n_permutations {
        order.shuffle(&mut rng);
        current.copy_from_slice(&background[p % background.len()]);
        let mut prev = model.predict(&current);
        for &i in &order {
            current[i] = row[i];
            let next = model.predict(&current);
            let delta = next - prev;
            sum[i] += delta;
            sum_sq[i] += delta * delta;
            prev = next;
        }
    }
    let n = n_permutations as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            if n_permutations < 2 {
                f64::INFINITY
            } else {
                ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
            }
        })
        .collect();
    Ok((mean, se))
}

impl Explainer for ShapleyExplainer {
    fn id(&self) -> &str {
        &self.id
    }

    /// Exact mode ignores `seed`.
    fn explain(
        &self,
        model: &dyn BlackBox,
        row: &[f64],
        case_ref: &CaseRef,
        seed: u64,
    ) -> Result<Explanation, ExplainError> {
        check_width(model, row)?;
        let d = row.len();
        let phi = if self.is_exact_for(d) {
            exact_shapley(model, row, &self.background)?
        } else {
            sampled_shapley(
                model,
                row,
                &self.background,
                self.config.n_permutations,
                seed,
            )?
            .0
        };
        let attributions: Vec<Attribution> = phi
            .into_iter()
            .enumerate()
            .map(|(column_index, weight)| Attribution {
                column_index,
                weight,
                interval: None,
            })
            .collect();
        let selected_k = attributions.iter().filter(|a| a.weight != 0.0).count();
        Ok(Explanation {
            case_ref: case_ref.clone(),
            explainer_id: self.id.clone(),
            n_features: d,
            attributions,
            selected_k,
            seed_used: seed,
            flags: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;

    /// Straight definition: average marginal contribution over all d!
    /// orderings.
    fn brute_force(f: &dyn BlackBox, row: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
        fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in permutations(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let d = row.len();
        let value = |set: &[bool]| {
            bg.iter()
                .map(|b| {
                    let r: Vec<f64> = (0..d).map(|j| if set[j] { row[j] } else { b[j] }).collect();
                    f.predict(&r)
                })
                .sum::<f64>()
                / bg.len() as f64
        };
        let perms = permutations((0..d).collect());
        let mut phi = vec![0.0; d];
        for p in &perms {
            let mut set = vec![false; d];
            for &i in p {
                let before = value(&set);
                set[i] = true;
                phi[i] += value(&set) - before;
            }
        }
        phi.iter().map(|v| v / perms.len() as f64).collect()
    }

    #[test]
    fn additive_model_against_zero_background() {
        let f = FnModel::new(2, |x: &[f64]| x[0] + x[1]);
        let phi = exact_shapley(&f, &[1.0, 1.0], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(phi, [1.0, 1.0]);
    }

    #[test]
    fn matches_brute_force_on_interaction_model() {
        let f = FnModel::new(4, |x: &[f64]| x[0] * x[1] + x[2].max(x[3]) - 0.5 * x[3]);
        let bg = vec![
            vec![0.0, 1.0, -1.0, 2.0],
            vec![0.5, -0.5, 0.3, 0.0],
            vec![1.0, 1.0, 1.0, 1.0],
        ];
        let row = [2.0, -1.0, 0.7, 0.2];
        let exact = exact_shapley(&f, &row, &bg).unwrap();
        let oracle = brute_force(&f, &row, &bg);
        for (a, b) in exact.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_and_symmetric_models() {
        let c = FnModel::new(3, |_: &[f64]| 0.42);
        let phi = exact_shapley(&c, &[1.0, 2.0, 3.0], &[vec![0.0; 3]]).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
        let f = FnModel::new(2, |x: &[f64]| x[0] * x[1]);
        let bg = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        let phi = exact_shapley(&f, &[3.0, 3.0], &bg).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-12);
    }

    #[test]
    fn sampled_estimate_within_three_standard_errors() {
        let f = FnModel::new(5, |x: &[f64]| x[0] * x[1] + x[2] - x[3] * x[4]);
        let bg = vec![vec![0.0; 5], vec![1.0, -1.0, 0.5, 0.2, 0.1]];
        let row = [1.0, 2.0, -1.0, 0.5, 1.5];
        let exact = exact_shapley(&f, &row, &bg).unwrap();
        let (est, se) = sampled_shapley(&f, &row, &bg, 4000, 8).unwrap();
        for i in 0..5 {
            assert!(
                (est[i] - exact[i]).abs() <= 3.0 * se[i] + 1e-12,
                "feature {i}"
            );
        }
        let base = bg.iter().map(|b| f.predict(b)).sum::<f64>() / 2.0;
        let total: f64 = est.iter().sum();
        assert!((total - (f.predict(&row) - base)).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let f = FnModel::new(2, |x: &[f64]| x[0]);
        assert!(matches!(
            exact_shapley(&f, &[1.0], &[vec![0.0]]),
            Err(ExplainError::WidthMismatch { .. })
        ));
        assert!(matches!(
            exact_shapley(&f, &[1.0, 1.0], &[]),
            Err(ExplainError::EmptyBackground)
        ));
        assert!(matches!(
            exact_shapley(&f, &[1.0, 1.0], &[vec![0.0]]),
            Err(ExplainError::WidthMismatch { .. })
        ));
        assert!(ShapleyExplainer::new(
            ShapleyConfig {
                exact_max_d: 21,
                ..Default::default()
            },
            vec![vec![0.0]]
        )
        .is_err());
    }

    #[test]
    fn explainer_repeats_are_identical_in_exact_mode() {
        let f = FnModel::new(3, |x: &[f64]| x[0] - 2.0 * x[2]);
        let ex = ShapleyExplainer::new(ShapleyConfig::default(), vec![vec![0.0; 3]]).unwrap();
        let set = crate::explain::repeat_explanations(
            &ex,
            &f,
            &[1.0, 1.0, 1.0],
            &CaseRef::new("a", 1),
            10,
            3,
        )
        .unwrap();
        let first = &set.explanations[0].attributions;
        assert!(set.explanations.iter().all(|e| &e.attributions == first));
        assert!(first.iter().all(|a| a.interval.is_none()));
        assert_eq!(set.explanations[0].dense_weights(), [1.0, 0.0, -2.0]);
    }
}
