//! Local linear surrogate explanations.
//!
//! A neighbourhood is sampled from the training distribution: binary
//! indicators are redrawn from their training frequency, numeric columns
//! are either resampled from training values and reduced to "same quartile
//! bin as the instance" indicators, or drawn from a normal fitted to the
//! column. Samples are weighted by `exp(-dist² / width²)` with distances
//! measured in standardized space, the `k` most useful features are chosen
//! by forward selection, and a weighted least-squares fit on those gives
//! the attribution weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    check_width, Attribution, CaseRef, ExplainError, Explainer, Explanation, Interval,
    FLAG_DEGENERATE_NEIGHBORHOOD,
};
use crate::encoding::FeatureMatrix;
use crate::model::BlackBox;
use crate::rng::seeded;

fn default_n_samples() -> usize {
    5000
}
fn default_k() -> usize {
    10
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Defaults to `0.75 * sqrt(d)`.
    #[serde(default)]
    pub kernel_width: Option<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Quartile-bin numeric columns.
    #[serde(default = "default_true")]
    pub discretize_numeric: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_samples: default_n_samples(),
            kernel_width: None,
            k: default_k(),
            discretize_numeric: true,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.n_samples < 100 {
            return Err(ExplainError::InvalidConfig(
                "n_samples must be >= 100".into(),
            ));
        }
        if self.k < 1 {
            return Err(ExplainError::InvalidConfig("k must be >= 1".into()));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(ExplainError::InvalidConfig(
                    "kernel_width must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn kernel_width_for(&self, d: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (d as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Binary,
    Numeric,
}

/// Training-distribution summary of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub kind: ColumnKind,
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
    /// Frequency of 1 (binary columns).
    pub p_one: f64,
    /// Distinct quartile edges, ascending.
    pub bin_edges: Vec<f64>,
    /// Observed training values, ascending.
    pub values: Vec<f64>,
}

impl ColumnStats {
    fn bin_of(&self, v: f64) -> usize {
        self.bin_edges.iter().filter(|&&e| e < v).count()
    }

    fn bin_interval(&self, bin: usize, x: f64) -> Interval {
        let lo = if bin == 0 {
            self.lo.min(x)
        } else {
            self.bin_edges[bin - 1]
        };
        let hi = if bin == self.bin_edges.len() {
            self.hi.max(x)
        } else {
            self.bin_edges[bin]
        };
        Interval { lo, hi }
    }

    fn is_constant(&self) -> bool {
        self.values.is_empty() || self.std == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub columns: Vec<ColumnStats>,
}

/// Linear-interpolation quantile of ascending `sorted`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TrainingStats {
    pub fn from_matrix(matrix: &FeatureMatrix) -> Self {
        let columns = (0..matrix.n_cols)
            .map(|j| {
                let mut values: Vec<f64> = matrix.column(j).filter(|v| !v.is_nan()).collect();
                values.sort_by(f64::total_cmp);
                let kind = if matrix.descriptors[j].encoder.is_onehot() {
                    ColumnKind::Binary
                } else {
                    ColumnKind::Numeric
                };
                if values.is_empty() {
                    return ColumnStats {
                        kind,
                        mean: f64::NAN,
                        std: 0.0,
                        lo: f64::NAN,
                        hi: f64::NAN,
                        p_one: 0.0,
                        bin_edges: Vec::new(),
                        values,
                    };
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                let mut bin_edges: Vec<f64> = [0.25, 0.5, 0.75]
                    .iter()
                    .map(|&q| quantile(&values, q))
                    .collect();
                bin_edges.dedup();
                ColumnStats {
                    kind,
                    mean,
                    std,
                    lo: values[0],
                    hi: values[values.len() - 1],
                    p_one: values.iter().filter(|&&v| v == 1.0).count() as f64 / n,
                    bin_edges,
                    values,
                }
            })
            .collect();
        Self { columns }
    }
}

pub struct SurrogateExplainer {
    pub config: SurrogateConfig,
    pub stats: TrainingStats,
    id: String,
}

impl SurrogateExplainer {
    pub fn new(config: SurrogateConfig, stats: TrainingStats) -> Result<Self, ExplainError> {
        config.validate()?;
        Ok(Self {
            config,
            stats,
            id: "surrogate".into(),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Binary,
    Binned { bin: usize },
    Continuous,
}

struct Active {
    column: usize,
    mode: Mode,
}

fn dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Greedy forward selection maximizing the weighted R² gain; candidates
/// are scored against the orthogonal complement of the selected set.
/// Returns indices into `design` in selection order.
fn forward_select(design: &[Vec<f64>], y: &[f64], w: &[f64], k: usize) -> Vec<usize> {
    let p = design.len();
    let norms: Vec<f64> = design.iter().map(|c| dot(w, c, c)).collect();
    let mut projected = vec![0.0; p];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut coefs: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut residual = y.to_vec();
    let mut selected = Vec::new();
    let mut taken = vec![false; p];
    while selected.len() < k.min(p) {
        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..p {
            if taken[j] {
                continue;
            }
            let rest = norms[j] - projected[j];
            if !(rest > 1e-10 * norms[j].max(1e-300)) {
                continue;
            }
            let c = dot(w, &design[j], &residual);
            let score = c * c / rest;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, j, rest));
            }
        }
        let Some((_, j, _)) = best else { break };
        taken[j] = true;
        selected.push(j);
        let mut q = design[j].clone();
        for (t, b) in basis.iter().enumerate() {
            let c = coefs[j][t];
            q.iter_mut().zip(b).for_each(|(qi, bi)| *qi -= c * bi);
        }
        // one re-orthogonalization pass
        for b in &basis {
            let c = dot(w, &q, b);
            q.iter_mut().zip(b).for_each(|(qi, bi)| *qi -= c * bi);
        }
        let norm = dot(w, &q, &q).sqrt();
        if !(norm > 0.0) {
            break;
        }
        q.iter_mut().for_each(|v| *v /= norm);
        let rq = dot(w, &residual, &q);
        residual
            .iter_mut()
            .zip(&q)
            .for_each(|(r, qi)| *r -= rq * qi);
        for i in 0..p {
            if !taken[i] {
                let c = dot(w, &design[i], &q);
                coefs[i].push(c);
                projected[i] += c * c;
            } else {
                coefs[i].push(0.0);
            }
        }
        basis.push(q);
    }
    selected
}

/// Weighted least squares of centered `y` on centered columns.
fn weighted_fit(columns: &[&Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let k = columns.len();
    let gram = DMatrix::from_fn(k, k, |a, b| dot(w, columns[a], columns[b]));
    let rhs = DVector::from_fn(k, |a, _| dot(w, columns[a], y));
    if let Some(chol) = gram.clone().cholesky() {
        return chol.solve(&rhs).iter().copied().collect();
    }
    gram.svd(true, true)
        .solve(&rhs, 1e-12)
        .map(|s| s.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; k])
}

impl Explainer for SurrogateExplainer {
    fn id(&self) -> &str {
        &self.id
    }

    fn explain(
        &self,
        model: &dyn BlackBox,
        row: &[f64],
        case_ref: &CaseRef,
        seed: u64,
    ) -> Result<Explanation, ExplainError> {
        check_width(model, row)?;
        let d = row.len();
        if self.stats.columns.len() != d {
            return Err(ExplainError::WidthMismatch {
                expected: d,
                got: self.stats.columns.len(),
            });
        }
        let cfg = &self.config;
        let width = cfg.kernel_width_for(d);
        let active: Vec<Active> = (0..d)
            .filter_map(|j| {
                let st = &self.stats.columns[j];
                if row[j].is_nan() || st.is_constant() {
                    return None;
                }
                let mode = match st.kind {
                    ColumnKind::Binary => Mode::Binary,
                    ColumnKind::Numeric if cfg.discretize_numeric => Mode::Binned {
                        bin: st.bin_of(row[j]),
                    },
                    ColumnKind::Numeric => Mode::Continuous,
                };
                Some(Active { column: j, mode })
            })
            .collect();

        let n = cfg.n_samples;
        let mut rng = seeded(seed);
        let mut design: Vec<Vec<f64>> = vec![vec![0.0; n]; active.len()];
        let mut targets = vec![0.0; n];
        let mut kernel = vec![0.0; n];
        let mut sample = row.to_vec();
        for s in 0..n {
            let mut dist2 = 0.0;
            for (a, act) in active.iter().enumerate() {
                let j = act.column;
                let st = &self.stats.columns[j];
                let (value, z, contrib) = if s == 0 {
                    let z = match act.mode {
                        Mode::Continuous => row[j],
                        _ => 1.0,
                    };
                    (row[j], z, 0.0)
                } else {
                    match act.mode {
                        Mode::Binary => {
                            let v = if rng.random::<f64>() < st.p_one {
                                1.0
                            } else {
                                0.0
                            };
                            let z = if v == row[j] { 1.0 } else { 0.0 };
                            (v, z, 1.0 - z)
                        }
                        Mode::Binned { bin } => {
                            let v = st.values[rng.random_range(0..st.values.len())];
                            let z = if st.bin_of(v) == bin { 1.0 } else { 0.0 };
                            (v, z, 1.0 - z)
                        }
                        Mode::Continuous => {
                            let g: f64 = rng.sample(StandardNormal);
                            let v = st.mean + st.std * g;
                            let t = (v - row[j]) / st.std;
                            (v, v, t * t)
                        }
                    }
                };
                sample[j] = value;
                design[a][s] = z;
                dist2 += contrib;
            }
            targets[s] = model.predict(&sample);
            kernel[s] = (-dist2 / (width * width)).exp();
        }

        let (lo, hi) = targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| {
                (l.min(t), h.max(t))
            });
        let mut explanation = Explanation {
            case_ref: case_ref.clone(),
            explainer_id: self.id.clone(),
            n_features: d,
            attributions: Vec::new(),
            selected_k: 0,
            seed_used: seed,
            flags: Vec::new(),
        };
        if !(hi - lo > 1e-12) || active.is_empty() {
            explanation
                .flags
                .push(FLAG_DEGENERATE_NEIGHBORHOOD.to_string());
            return Ok(explanation);
        }

        let total_w: f64 = kernel.iter().sum();
        let center = |v: &mut Vec<f64>| {
            let m = dot(&kernel, v, &vec![1.0; v.len()]) / total_w;
            v.iter_mut().for_each(|x| *x -= m);
        };
        center(&mut targets);
        design.iter_mut().for_each(center);

        let chosen = forward_select(&design, &targets, &kernel, cfg.k);
        let columns: Vec<&Vec<f64>> = chosen.iter().map(|&a| &design[a]).collect();
        let beta = weighted_fit(&columns, &targets, &kernel);
        let mut attributions: Vec<Attribution> = chosen
            .iter()
            .zip(beta)
            .filter(|(_, b)| *b != 0.0 && b.is_finite())
            .map(|(&a, weight)| {
                let act = &active[a];
                let j = act.column;
                let interval = match act.mode {
                    Mode::Binned { bin } => self.stats.columns[j].bin_interval(bin, row[j]),
                    _ => Interval {
                        lo: row[j],
                        hi: row[j],
                    },
                };
                Attribution {
                    column_index: j,
                    weight,
                    interval: Some(interval),
                }
            })
            .collect();
        attributions.sort_by_key(|a| a.column_index);
        explanation.selected_k = attributions.len();
        explanation.attributions = attributions;
        Ok(explanation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EncoderKind, FeatureDescriptor};
    use crate::model::{FnModel, LinearModel};

    fn training(rows: &[Vec<f64>], onehot: &[bool]) -> FeatureMatrix {
        let n_cols = rows[0].len();
        FeatureMatrix {
            bucket_id: "t".into(),
            n_rows: rows.len(),
            n_cols,
            values: rows.iter().flatten().copied().collect(),
            descriptors: (0..n_cols)
                .map(|j| FeatureDescriptor {
                    column_index: j,
                    source_attr: format!("x{j}"),
                    encoder: if onehot[j] {
                        EncoderKind::StaticOnehot
                    } else {
                        EncoderKind::StaticNumeric
                    },
                    category: onehot[j].then(|| "a".to_string()),
                    event_index: None,
                })
                .collect(),
            labels: vec![false; rows.len()],
            case_ids: vec!["x".into(); rows.len()],
            prefix_lengths: vec![1; rows.len()],
        }
    }

    fn gaussian_training(d: usize, n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        training(&rows, &vec![false; d])
    }

    #[test]
    fn forward_selection_picks_true_support() {
        let mut rng = seeded(4);
        let n = 400;
        let design: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|s| 3.0 * design[1][s] - 2.0 * design[4][s])
            .collect();
        let w = vec![1.0; n];
        let mut chosen = forward_select(&design, &y, &w, 2);
        chosen.sort();
        assert_eq!(chosen, [1, 4]);
        let cols: Vec<&Vec<f64>> = [1, 4].iter().map(|&i| &design[i]).collect();
        let beta = weighted_fit(&cols, &y, &w);
        assert!((beta[0] - 3.0).abs() < 1e-9 && (beta[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn linear_black_box_ratio_preserved() {
        let stats = TrainingStats::from_matrix(&gaussian_training(2, 2000, 1));
        let cfg = SurrogateConfig {
            discretize_numeric: false,
            ..SurrogateConfig::default()
        };
        let ex = SurrogateExplainer::new(cfg, stats).unwrap();
        // small coefficients keep the logistic link near-linear
        let model = LinearModel::new(vec![0.2, -0.1], 0.0);
        let e = ex
            .explain(&model, &[0.3, -0.2], &CaseRef::new("a", 1), 7)
            .unwrap();
        let w = e.dense_weights();
        assert!(w[0] > 0.0 && w[1] < 0.0);
        let ratio = w[0] / w[1];
        assert!((ratio / -2.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn constant_model_is_degenerate() {
        let stats = TrainingStats::from_matrix(&gaussian_training(3, 200, 2));
        let ex = SurrogateExplainer::new(SurrogateConfig::default(), stats).unwrap();
        let model = FnModel::new(3, |_: &[f64]| 0.3);
        let e = ex
            .explain(&model, &[0.0, 0.0, 0.0], &CaseRef::new("a", 1), 1)
            .unwrap();
        assert!(e.dense_weights().iter().all(|&w| w == 0.0));
        assert_eq!(e.flags, [FLAG_DEGENERATE_NEIGHBORHOOD]);
    }

    #[test]
    fn discretized_intervals_contain_instance() {
        let train = gaussian_training(4, 500, 3);
        let stats = TrainingStats::from_matrix(&train);
        let ex = SurrogateExplainer::new(
            SurrogateConfig {
                n_samples: 500,
                k: 2,
                ..SurrogateConfig::default()
            },
            stats,
        )
        .unwrap();
        let model = FnModel::new(4, |x: &[f64]| crate::model::logistic(2.0 * x[0] - x[3]));
        let row = [1.2, 0.0, 0.0, -0.4];
        let e = ex.explain(&model, &row, &CaseRef::new("a", 1), 5).unwrap();
        assert_eq!(e.selected_k, 2);
        let cols: Vec<_> = e.attributions.iter().map(|a| a.column_index).collect();
        assert_eq!(cols, [0, 3]);
        for a in &e.attributions {
            assert!(a.interval.unwrap().contains(row[a.column_index]));
        }
    }

    #[test]
    fn binary_columns_flip_by_frequency() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i % 4 == 0) as u8 as f64, (i % 2) as f64])
            .collect();
        let stats = TrainingStats::from_matrix(&training(&rows, &[true, true]));
        assert_eq!(stats.columns[0].p_one, 0.25);
        let ex = SurrogateExplainer::new(SurrogateConfig::default(), stats).unwrap();
        let model = FnModel::new(2, |x: &[f64]| 0.2 + 0.5 * x[0]);
        let e = ex
            .explain(&model, &[1.0, 0.0], &CaseRef::new("a", 1), 2)
            .unwrap();
        // indicator means "equals the instance value"
        let w = e.dense_weights();
        assert!((w[0] - 0.5).abs() < 1e-9, "{w:?}");
        assert_eq!(
            e.attribution(0).unwrap().interval,
            Some(Interval { lo: 1.0, hi: 1.0 })
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let stats = TrainingStats::from_matrix(&gaussian_training(6, 300, 9));
        let ex = SurrogateExplainer::new(
            SurrogateConfig {
                n_samples: 300,
                k: 3,
                ..Default::default()
            },
            stats,
        )
        .unwrap();
        let model = FnModel::new(6, |x: &[f64]| crate::model::logistic(x.iter().sum()));
        let row = [0.1; 6];
        let a = ex.explain(&model, &row, &CaseRef::new("a", 1), 11).unwrap();
        let b = ex.explain(&model, &row, &CaseRef::new("a", 1), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_small_sample_counts() {
        let cfg = SurrogateConfig {
            n_samples: 10,
            ..Default::default()
        };
        assert!(SurrogateExplainer::new(cfg, TrainingStats { columns: vec![] }).is_err());
    }
}
