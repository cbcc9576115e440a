use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::explain::{CaseRef, ExplanationSet};

pub const WEIGHT_EPSILON: f64 = 1e-8;
pub const FLAG_WEIGHT_EPSILON: &str = "weight_epsilon_guard";
pub const FLAG_SUBSET_BELOW_ZERO: &str = "subset_below_zero";
pub const FLAG_DEGENERATE_SUBSET: &str = "degenerate_subset_size";

/// `M × d` selection indicators, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMatrix {
    pub m: usize,
    pub d: usize,
    pub z: Vec<bool>,
    pub k_per_row: Vec<usize>,
}

impl SubsetMatrix {
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self, MetricsError> {
        let d = rows.first().ok_or(MetricsError::EmptySet)?.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(MetricsError::WidthMismatch {
                expected: d,
                got: r.len(),
            });
        }
        Ok(Self {
            m: rows.len(),
            d,
            z: rows.concat(),
            k_per_row: rows
                .iter()
                .map(|r| r.iter().filter(|&&b| b).count())
                .collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.d];
        for i in 0..self.m {
            for (c, &b) in counts.iter_mut().zip(self.row(i)) {
                *c += b as usize;
            }
        }
        counts
    }
}

/// Marks the `k` largest-|weight| nonzero attributions of each explanation
/// (fewer when an explanation has fewer nonzero weights). Ties go to the
/// lower column index.
pub fn build_subset_matrix(set: &ExplanationSet, k: usize) -> Result<SubsetMatrix, MetricsError> {
    if set.explanations.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let d = set.n_features();
    let rows: Vec<Vec<bool>> = set
        .explanations
        .iter()
        .map(|e| {
            let w = e.dense_weights();
            let mut order: Vec<usize> = (0..d).filter(|&j| w[j] != 0.0).collect();
            order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
            let mut row = vec![false; d];
            for &j in order.iter().take(k) {
                row[j] = true;
            }
            row
        })
        .collect();
    SubsetMatrix::from_rows(&rows)
}

pub fn stability_by_subset(z: &SubsetMatrix) -> Result<f64, MetricsError> {
    if z.m < 2 {
        return Err(MetricsError::TooFewRows(z.m));
    }
    let (m, d) = (z.m as f64, z.d as f64);
    let k_bar = z.k_per_row.iter().sum::<usize>() as f64 / m;
    if k_bar == 0.0 || k_bar == d {
        return Err(MetricsError::DegenerateSubsetSize { k_bar, d: z.d });
    }
    let mean_var = z
        .column_counts()
        .into_iter()
        .map(|c| {
            let p = c as f64 / m;
            m / (m - 1.0) * p * (1.0 - p)
        })
        .sum::<f64>()
        / d;
    Ok(1.0 - mean_var / ((k_bar / d) * (1.0 - k_bar / d)))
}

/// `M × d` attribution weights, row-major, zero where unselected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub m: usize,
    pub d: usize,
    pub w: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let d = rows.first().ok_or(MetricsError::EmptySet)?.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(MetricsError::WidthMismatch {
                expected: d,
                got: r.len(),
            });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::Invalid("non-finite weight".into()));
        }
        Ok(Self {
            m: rows.len(),
            d,
            w: rows.concat(),
        })
    }

    pub fn from_set(set: &ExplanationSet) -> Result<Self, MetricsError> {
        let rows: Vec<Vec<f64>> = set.explanations.iter().map(|e| e.dense_weights()).collect();
        Self::from_rows(&rows)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.w[i * self.d + j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStability {
    pub value: f64,
    /// Columns whose near-zero mean was replaced by the epsilon guard.
    pub guarded_columns: Vec<usize>,
}

pub fn stability_by_weight(w: &WeightMatrix) -> Result<WeightStability, MetricsError> {
    if w.m < 2 {
        return Err(MetricsError::TooFewRows(w.m));
    }
    let m = w.m as f64;
    let mut total = 0.0;
    let mut guarded_columns = Vec::new();
    for j in 0..w.d {
        let mean = w.column(j).sum::<f64>() / m;
        let var = w.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        if var == 0.0 {
            continue;
        }
        let denom = if mean.abs() < WEIGHT_EPSILON {
            guarded_columns.push(j);
            WEIGHT_EPSILON
        } else {
            mean.abs()
        };
        total += var / denom;
    }
    Ok(WeightStability {
        value: 1.0 - total / w.d as f64,
        guarded_columns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityScore {
    pub case_ref: CaseRef,
    /// `None` when every explanation selects no feature or all of them.
    pub by_subset: Option<f64>,
    pub by_weight: f64,
    pub flags: Vec<String>,
}

pub fn stability_scores(set: &ExplanationSet, k: usize) -> Result<StabilityScore, MetricsError> {
    let z = build_subset_matrix(set, k)?;
    let mut flags = Vec::new();
    let by_subset = match stability_by_subset(&z) {
        Ok(v) => {
            if v < 0.0 {
                flags.push(FLAG_SUBSET_BELOW_ZERO.to_string());
            }
            Some(v)
        }
        Err(MetricsError::DegenerateSubsetSize { .. }) => {
            flags.push(FLAG_DEGENERATE_SUBSET.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let weight = stability_by_weight(&WeightMatrix::from_set(set)?)?;
    if !weight.guarded_columns.is_empty() {
        flags.push(FLAG_WEIGHT_EPSILON.to_string());
    }
    Ok(StabilityScore {
        case_ref: set.case_ref.clone(),
        by_subset,
        by_weight: weight.value,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Attribution, Explanation};

    fn z(rows: &[&[usize]], d: usize) -> SubsetMatrix {
        let rows: Vec<Vec<bool>> = rows
            .iter()
            .map(|r| (0..d).map(|j| r.contains(&j)).collect())
            .collect();
        SubsetMatrix::from_rows(&rows).unwrap()
    }

    fn set(rows: &[Vec<f64>]) -> ExplanationSet {
        let case_ref = CaseRef::new("c", 1);
        ExplanationSet {
            case_ref: case_ref.clone(),
            explanations: rows
                .iter()
                .map(|w| Explanation {
                    case_ref: case_ref.clone(),
                    explainer_id: "t".into(),
                    n_features: w.len(),
                    attributions: w
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(j, &v)| Attribution {
                            column_index: j,
                            weight: v,
                            interval: None,
                        })
                        .collect(),
                    selected_k: 0,
                    seed_used: 0,
                    flags: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn subset_hand_cases() {
        assert_eq!(
            stability_by_subset(&z(&[&[0, 1], &[0, 2]], 4)).unwrap(),
            0.0
        );
        let v = stability_by_subset(&z(&[&[0, 1], &[0, 1], &[0, 2]], 4)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15, "{v}");
        assert_eq!(
            stability_by_subset(&z(&[&[1, 3], &[1, 3], &[1, 3]], 5)).unwrap(),
            1.0
        );
    }

    #[test]
    fn subset_errors() {
        assert!(matches!(
            stability_by_subset(&z(&[&[], &[]], 3)),
            Err(MetricsError::DegenerateSubsetSize { .. })
        ));
        assert!(matches!(
            stability_by_subset(&z(&[&[0, 1], &[0, 1]], 2)),
            Err(MetricsError::DegenerateSubsetSize { .. })
        ));
        assert!(matches!(
            stability_by_subset(&z(&[&[0]], 3)),
            Err(MetricsError::TooFewRows(1))
        ));
    }

    #[test]
    fn weight_hand_cases() {
        let w = |rows: &[Vec<f64>]| {
            stability_by_weight(&WeightMatrix::from_rows(rows).unwrap()).unwrap()
        };
        assert_eq!(w(&[vec![1.0, 0.0], vec![1.0, 1.0]]).value, 0.5);
        assert!((w(&[vec![0.5], vec![2.5]]).value + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w(&[vec![0.3, 0.0], vec![0.3, 0.0]]).value, 1.0);
        let guarded = w(&[vec![1.0], vec![-1.0]]);
        assert_eq!(guarded.guarded_columns, [0]);
        assert_eq!(guarded.value, 1.0 - 2.0 / WEIGHT_EPSILON);
    }

    #[test]
    fn top_k_selection() {
        let s = set(&[vec![0.9, 0.5, 0.1], vec![0.9, 0.5, 0.1]]);
        let m = build_subset_matrix(&s, 2).unwrap();
        assert_eq!(m.row(0), [true, true, false]);
        assert_eq!(m.row(0), m.row(1));
        let sparse = set(&[vec![0.1, 0.0, -0.2, 0.0, 0.3], vec![0.0; 5]]);
        assert_eq!(build_subset_matrix(&sparse, 10).unwrap().k_per_row, [3, 0]);
        let tie = set(&[vec![0.0, 0.4, -0.4]]);
        assert_eq!(
            build_subset_matrix(&tie, 1).unwrap().row(0),
            [false, true, false]
        );
        let empty = ExplanationSet {
            case_ref: CaseRef::new("c", 1),
            explanations: vec![],
        };
        assert!(matches!(
            build_subset_matrix(&empty, 1),
            Err(MetricsError::EmptySet)
        ));
    }

    #[test]
    fn scores_flag_degenerate_subsets() {
        let s = set(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let score = stability_scores(&s, 10).unwrap();
        assert_eq!(score.by_subset, None);
        assert_eq!(score.by_weight, 1.0);
        assert_eq!(score.flags, [FLAG_DEGENERATE_SUBSET]);
    }
}
