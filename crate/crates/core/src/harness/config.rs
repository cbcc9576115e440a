use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::encoding::{BucketingStrategy, EncodeOptions, EncodingMethod};
use crate::eventlog::GenSpec;
use crate::explain::{ShapleyConfig, SurrogateConfig};
use crate::model::GbtConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        log: PathBuf,
        schema: PathBuf,
    },
    Synthetic {
        gen_spec: GenSpec,
        /// Generator seed; derived from the global seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixRange {
    pub min: usize,
    pub max: usize,
}

impl Default for PrefixRange {
    fn default() -> Self {
        Self { min: 1, max: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combo {
    pub bucketing: BucketingStrategy,
    pub encoding: EncodingMethod,
}

impl Combo {
    pub fn bucketing_name(&self) -> &'static str {
        match self.bucketing {
            BucketingStrategy::Single => "single",
            BucketingStrategy::PrefixLength => "prefix_length",
        }
    }

    pub fn encoding_name(&self) -> &'static str {
        match self.encoding {
            EncodingMethod::Aggregate => "aggregate",
            EncodingMethod::IndexBased => "index_based",
        }
    }

    pub fn key(&self) -> String {
        format!("{}/{}", self.bucketing_name(), self.encoding_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExplainerSpec {
    Surrogate {
        #[serde(default)]
        name: Option<String>,
        #[serde(flatten)]
        config: SurrogateConfig,
    },
    Shapley {
        #[serde(default)]
        name: Option<String>,
        #[serde(flatten)]
        config: ShapleyConfig,
    },
}

impl ExplainerSpec {
    pub fn name(&self) -> &str {
        match self {
            Self::Surrogate { name, .. } => name.as_deref().unwrap_or("surrogate"),
            Self::Shapley { name, .. } => name.as_deref().unwrap_or("shapley"),
        }
    }

    pub fn is_shapley(&self) -> bool {
        matches!(self, Self::Shapley { .. })
    }
}

fn default_m() -> usize {
    10
}
fn default_n_perturbations() -> usize {
    10
}
fn default_sample_size() -> usize {
    50
}
fn default_k() -> usize {
    10
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_background_size() -> usize {
    16
}
fn default_n_bins() -> usize {
    10
}
fn default_true() -> bool {
    true
}

/// A full experiment, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub prefix: PrefixRange,
    pub combos: Vec<Combo>,
    pub explainers: Vec<ExplainerSpec>,
    /// Repeated explanations per instance.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_n_perturbations")]
    pub n_perturbations: usize,
    /// Test instances evaluated per bucket.
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    /// Top-k features per explanation for subset stability and targets.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_true")]
    pub downsample: bool,
    #[serde(default = "default_background_size")]
    pub background_size: usize,
    /// Quantile bins for Shapley influential intervals.
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default)]
    pub model: GbtConfig,
    #[serde(default)]
    pub encode_options: EncodeOptions,
    #[serde(default = "default_true")]
    pub other_column: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    /// Makes relative dataset paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.datasets {
            if let DatasetSource::Csv { log, schema } = &mut d.source {
                for p in [log, schema] {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.combos.is_empty() {
            return bad("at least one combo is required".into());
        }
        if self.explainers.is_empty() {
            return bad("at least one explainer is required".into());
        }
        if self.m < 2 {
            return bad(format!("m must be >= 2, got {}", self.m));
        }
        if self.n_perturbations < 1 || self.sample_size < 1 || self.k < 1 {
            return bad("n_perturbations, sample_size and k must be >= 1".into());
        }
        if self.background_size < 1 || self.n_bins < 1 {
            return bad("background_size and n_bins must be >= 1".into());
        }
        if self.prefix.min < 1 || self.prefix.min > self.prefix.max {
            return bad(format!(
                "invalid prefix range [{}, {}]",
                self.prefix.min, self.prefix.max
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        let mut names: Vec<&str> = self.explainers.iter().map(|e| e.name()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("explainer names must be unique".into());
        }
        let mut datasets: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        datasets.sort();
        if datasets.windows(2).any(|w| w[0] == w[1]) {
            return bad("dataset names must be unique".into());
        }
        for e in &self.explainers {
            match e {
                ExplainerSpec::Surrogate { config, .. } => config.validate(),
                ExplainerSpec::Shapley { config, .. } => {
                    crate::explain::ShapleyExplainer::new(config.clone(), vec![vec![]]).map(|_| ())
                }
            }
            .map_err(|err| HarnessError::Config(format!("explainer {}: {err}", e.name())))?;
        }
        self.model
            .validate()
            .map_err(|err| HarnessError::Config(err.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "datasets": [{"name": "toy", "type": "csv", "log": "log.csv", "schema": "log.schema.json"}],
        "combos": [{"bucketing": "single", "encoding": "aggregate"}],
        "explainers": [{"type": "surrogate", "n_samples": 500}, {"type": "shapley"}]
    }"#;

    #[test]
    fn defaults_and_path_resolution() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(
            (c.m, c.n_perturbations, c.sample_size, c.k),
            (10, 10, 50, 10)
        );
        assert_eq!(c.explainers[0].name(), "surrogate");
        match &c.explainers[0] {
            ExplainerSpec::Surrogate { config, .. } => assert_eq!(config.n_samples, 500),
            _ => unreachable!(),
        }
        c.resolve_paths(Path::new("/data"));
        match &c.datasets[0].source {
            DatasetSource::Csv { log, .. } => assert_eq!(log, Path::new("/data/log.csv")),
            _ => unreachable!(),
        }
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.m = 1;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.explainers.push(c.explainers[0].clone());
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.combos.clear();
        assert!(c.validate().is_err());
    }
}
