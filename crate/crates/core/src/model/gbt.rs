//! Gradient-boosted regression trees under logistic loss.
//!
//! Trees are grown level-wise with exact greedy split search on the
//! pseudo-residuals `y - p` (variance reduction). Leaves take a Newton step
//! `Σ(y - p) / Σ p(1 - p)` scaled by the learning rate. A missing value at a
//! split follows the node's default direction, learned as whichever side
//! yields the larger gain for the training rows missing that feature.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{check_training_matrix, logistic, BlackBox, ModelError};
use crate::encoding::FeatureMatrix;
use crate::rng::SeedPath;

pub const GBT_FORMAT_VERSION: u32 = 1;

const MIN_GAIN: f64 = 1e-12;
const HESSIAN_FLOOR: f64 = 1e-9;
const PROBA_CLAMP: f64 = 1e-12;

fn default_n_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    3
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_min_leaf() -> usize {
    5
}
fn default_subsample() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "default_subsample")]
    pub subsample: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: default_n_trees(),
            max_depth: default_max_depth(),
            learning_rate: default_learning_rate(),
            min_leaf: default_min_leaf(),
            subsample: default_subsample(),
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_trees < 1 {
            return bad("n_trees must be >= 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left; `NaN` follows `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = row[*feature];
                    let go_left = if v.is_nan() {
                        *default_left
                    } else {
                        v < *threshold
                    };
                    idx = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub n_features: usize,
    /// Log-odds of the training positive rate.
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub descriptors_fingerprint: String,
    pub config: GbtConfig,
    /// Mean training log-loss before the first tree and after each tree.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

impl GbtModel {
    /// A model without trees; predicts `logistic(base_score)` everywhere.
    pub fn constant(n_features: usize, base_score: f64) -> Self {
        Self {
            format_version: GBT_FORMAT_VERSION,
            n_features,
            base_score,
            trees: Vec::new(),
            descriptors_fingerprint: String::new(),
            config: GbtConfig::default(),
            loss_history: Vec::new(),
        }
    }

    pub fn log_odds(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn used_features(&self) -> std::collections::BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.split_features()).collect()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: GbtModel = serde_json::from_str(text)?;
        if model.format_version != GBT_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(model.format_version));
        }
        Ok(model)
    }
}

impl BlackBox for GbtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, row: &[f64]) -> f64 {
        logistic(self.log_odds(row)).clamp(PROBA_CLAMP, 1.0 - PROBA_CLAMP)
    }
}

fn mean_log_loss(scores: &[f64], y: &[f64]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(y)
        .map(|(&f, &t)| {
            // log(1 + e^f) - t f, computed stably
            let softplus = if f > 0.0 {
                f + (-f).exp().ln_1p()
            } else {
                f.exp().ln_1p()
            };
            softplus - t * f
        })
        .sum();
    total / scores.len() as f64
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

#[derive(Clone, Copy, Default)]
struct Scan {
    sum: f64,
    count: usize,
    last: f64,
}

struct Grower<'a> {
    matrix: &'a FeatureMatrix,
    /// Per feature, non-missing row indices sorted by value.
    sorted: Vec<Vec<usize>>,
    /// Per feature, rows where the value is missing.
    missing: Vec<Vec<usize>>,
    min_leaf: usize,
    max_depth: usize,
}

const NO_NODE: usize = usize::MAX;

impl<'a> Grower<'a> {
    fn new(matrix: &'a FeatureMatrix, config: &GbtConfig) -> Self {
        let mut sorted = Vec::with_capacity(matrix.n_cols);
        let mut missing = Vec::with_capacity(matrix.n_cols);
        for j in 0..matrix.n_cols {
            let (mut present, absent): (Vec<usize>, Vec<usize>) =
                (0..matrix.n_rows).partition(|&i| !matrix.get(i, j).is_nan());
            present.sort_by(|&a, &b| {
                matrix
                    .get(a, j)
                    .total_cmp(&matrix.get(b, j))
                    .then(a.cmp(&b))
            });
            sorted.push(present);
            missing.push(absent);
        }
        Self {
            matrix,
            sorted,
            missing,
            min_leaf: config.min_leaf.max(1),
            max_depth: config.max_depth,
        }
    }

    /// Grows one tree on `residual` (y - p) and `hessian`, using only rows
    /// with `in_sample`.
    fn grow(&self, residual: &[f64], hessian: &[f64], in_sample: &[bool]) -> RegressionTree {
        let n = self.matrix.n_rows;
        let mut node_of = vec![NO_NODE; n];
        let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
        // per node: (residual sum, hessian sum, row count)
        let mut stats: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0)];
        for i in 0..n {
            if in_sample[i] {
                node_of[i] = 0;
                stats[0].0 += residual[i];
                stats[0].1 += hessian[i];
                stats[0].2 += 1;
            }
        }
        let mut frontier = vec![0usize];
        for _depth in 0..self.max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut slot_of = vec![NO_NODE; nodes.len()];
            for (s, &id) in frontier.iter().enumerate() {
                slot_of[id] = s;
            }
            let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
            let mut scan = vec![Scan::default(); frontier.len()];
            let mut miss = vec![(0.0f64, 0usize); frontier.len()];
            for j in 0..self.matrix.n_cols {
                miss.iter_mut().for_each(|m| *m = (0.0, 0));
                for &i in &self.missing[j] {
                    let node = node_of[i];
                    if node != NO_NODE && slot_of[node] != NO_NODE {
                        let m = &mut miss[slot_of[node]];
                        m.0 += residual[i];
                        m.1 += 1;
                    }
                }
                scan.iter_mut().for_each(|s| *s = Scan::default());
                for &i in &self.sorted[j] {
                    let node = node_of[i];
                    if node == NO_NODE || slot_of[node] == NO_NODE {
                        continue;
                    }
                    let s = slot_of[node];
                    let v = self.matrix.get(i, j);
                    let st = &mut scan[s];
                    if st.count > 0 && v > st.last {
                        let (total_sum, _, total_count) = stats[node];
                        let cand = self.evaluate(
                            j,
                            0.5 * (st.last + v),
                            (st.sum, st.count),
                            miss[s],
                            (total_sum, total_count),
                        );
                        if let Some(c) = cand {
                            if best[s].is_none_or(|b| c.gain > b.gain) {
                                best[s] = Some(c);
                            }
                        }
                    }
                    st.sum += residual[i];
                    st.count += 1;
                    st.last = v;
                }
            }

            let mut next = Vec::new();
            for (s, &id) in frontier.iter().enumerate() {
                let Some(c) = best[s] else { continue };
                let left = nodes.len();
                let right = left + 1;
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                stats.push((0.0, 0.0, 0));
                stats.push((0.0, 0.0, 0));
                nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    default_left: c.default_left,
                    left,
                    right,
                };
                next.push(left);
                next.push(right);
            }
            if next.is_empty() {
                break;
            }
            for i in 0..n {
                let node = node_of[i];
                if node == NO_NODE {
                    continue;
                }
                if let Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } = nodes[node]
                {
                    let v = self.matrix.get(i, feature);
                    let go_left = if v.is_nan() {
                        default_left
                    } else {
                        v < threshold
                    };
                    let child = if go_left { left } else { right };
                    node_of[i] = child;
                    stats[child].0 += residual[i];
                    stats[child].1 += hessian[i];
                    stats[child].2 += 1;
                }
            }
            frontier = next;
        }
        for (id, node) in nodes.iter_mut().enumerate() {
            if let Node::Leaf { value } = node {
                let (g, h, count) = stats[id];
                *value = if count == 0 {
                    0.0
                } else {
                    g / (h + HESSIAN_FLOOR)
                };
            }
        }
        RegressionTree { nodes }
    }

    fn evaluate(
        &self,
        feature: usize,
        threshold: f64,
        left: (f64, usize),
        missing: (f64, usize),
        total: (f64, usize),
    ) -> Option<Candidate> {
        let (total_sum, total_count) = total;
        let present_sum = total_sum - missing.0;
        let present_count = total_count - missing.1;
        let right = (present_sum - left.0, present_count - left.1);
        if right.1 == 0 {
            return None;
        }
        let score = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s * s / c as f64 };
        let parent = score(total);
        let mut options = [
            (true, (left.0 + missing.0, left.1 + missing.1), right),
            (false, left, (right.0 + missing.0, right.1 + missing.1)),
        ];
        if missing.1 == 0 && left.1 < right.1 {
            options.swap(0, 1);
        }
        let mut best: Option<Candidate> = None;
        for (default_left, l, r) in options {
            if l.1 < self.min_leaf || r.1 < self.min_leaf {
                continue;
            }
            let gain = score(l) + score(r) - parent;
            if gain > MIN_GAIN && best.is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    gain,
                    feature,
                    threshold,
                    default_left,
                });
            }
        }
        best
    }
}

/// Fits a boosted ensemble. Each round's training log-loss is
/// non-increasing: a tree whose step would raise the loss is shrunk by
/// halving until it does not (or zeroed).
pub fn train_gbt(matrix: &FeatureMatrix, config: &GbtConfig) -> Result<GbtModel, ModelError> {
    config.validate()?;
    check_training_matrix(matrix)?;
    let n = matrix.n_rows;
    let y = matrix.labels_as_f64();
    let rate = y.iter().sum::<f64>() / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut scores = vec![base_score; n];
    let mut loss = mean_log_loss(&scores, &y);
    let mut loss_history = vec![loss];
    let grower = Grower::new(matrix, config);
    let n_sample = ((n as f64 * config.subsample).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    let mut in_sample = vec![true; n];
    let mut contribution = vec![0.0; n];
    let mut candidate = vec![0.0; n];

    for round in 0..config.n_trees {
        for i in 0..n {
            let p = logistic(scores[i]);
            residual[i] = y[i] - p;
            hessian[i] = p * (1.0 - p);
        }
        if n_sample < n {
            let mut rng = SeedPath::new(config.seed)
                .str("subsample")
                .u64(round as u64)
                .rng();
            in_sample.iter_mut().for_each(|s| *s = false);
            for i in sample(&mut rng, n, n_sample) {
                in_sample[i] = true;
            }
        }
        let mut tree = grower.grow(&residual, &hessian, &in_sample);
        tree.scale_leaves(config.learning_rate);
        for (i, row) in matrix.rows().enumerate() {
            contribution[i] = tree.predict(row);
        }
        let mut factor = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                candidate[i] = scores[i] + factor * contribution[i];
            }
            let new_loss = mean_log_loss(&candidate, &y);
            if new_loss <= loss {
                loss = new_loss;
                accepted = true;
                break;
            }
            factor *= 0.5;
        }
        if accepted {
            if factor != 1.0 {
                tree.scale_leaves(factor);
            }
            scores.copy_from_slice(&candidate);
        } else {
            tree.scale_leaves(0.0);
        }
        loss_history.push(loss);
        trees.push(tree);
    }
    Ok(GbtModel {
        format_version: GBT_FORMAT_VERSION,
        n_features: matrix.n_cols,
        base_score,
        trees,
        descriptors_fingerprint: matrix.descriptors_fingerprint(),
        config: config.clone(),
        loss_history,
    })
}
