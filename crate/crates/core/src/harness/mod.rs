//! Experiment orchestration: configuration, the evaluation pipeline, and
//! report emission.

mod config;
mod pool;
mod report;
mod run;

pub use config::{
    Combo, DatasetConfig, DatasetSource, ExperimentConfig, ExplainerSpec, PrefixRange,
};
pub use pool::parallel_map;
pub use report::{
    emit_report, summarize_scores, write_scores, AccuracyRecord, AggregateRow, FailureRecord,
    InstanceRecord, Manifest, ReportBundle, ReportFormat, ScoreRecord, ScoreSummary, TimingRecord,
};
pub use run::{load_dataset, run_experiment, LoadedDataset};

use thiserror::Error;

use crate::encoding::EncodeError;
use crate::eventlog::LogError;
use crate::explain::ExplainError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
