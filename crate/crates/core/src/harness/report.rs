use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::metrics::{aggregate, Summary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub dataset: String,
    pub bucketing: String,
    pub encoding: String,
    pub explainer: String,
    pub bucket_id: String,
    pub case_id: String,
    pub prefix_length: usize,
    pub d: usize,
    pub y_original: Option<f64>,
    pub by_subset: Option<f64>,
    pub by_weight: Option<f64>,
    #[serde(rename = "F")]
    pub fidelity: Option<f64>,
    pub n_targets: usize,
    /// `;`-separated.
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub dataset: String,
    pub bucketing: String,
    pub encoding: String,
    pub explainer: String,
    pub bucket_id: String,
    pub case_id: String,
    pub prefix_length: usize,
    pub repetition: usize,
    pub d: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub dataset: String,
    pub bucketing: String,
    pub encoding: String,
    pub bucket_id: String,
    pub prefix_length: usize,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub dataset: String,
    pub combo: String,
    pub bucket_id: String,
    pub explainer: Option<String>,
    pub case_id: Option<String>,
    pub prefix_length: Option<usize>,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub dataset: String,
    pub bucketing: String,
    pub encoding: String,
    pub explainer: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub n_buckets: usize,
    pub n_instances: usize,
    pub n_failures: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub manifest: Manifest,
    pub aggregates: Vec<AggregateRow>,
    pub instances: Vec<InstanceRecord>,
    /// Kept out of `bundle.json` because wall times vary between runs.
    #[serde(skip)]
    pub timing: Vec<TimingRecord>,
    pub accuracy: Vec<AccuracyRecord>,
    pub failures: Vec<FailureRecord>,
}

pub const METRICS: [&str; 3] = ["stability_subset", "stability_weight", "fidelity"];

fn metric_value(metric: &str, r: &InstanceRecord) -> Option<f64> {
    match metric {
        "stability_subset" => r.by_subset,
        "stability_weight" => r.by_weight,
        _ => r.fidelity,
    }
}

/// One row per (metric, dataset, combo, explainer) with at least one score,
/// in configuration order.
pub(crate) fn build_aggregates(
    cfg: &ExperimentConfig,
    instances: &[InstanceRecord],
) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for metric in METRICS {
        for ds in &cfg.datasets {
            for combo in &cfg.combos {
                for ex in &cfg.explainers {
                    let values: Vec<f64> = instances
                        .iter()
                        .filter(|r| {
                            r.dataset == ds.name
                                && r.bucketing == combo.bucketing_name()
                                && r.encoding == combo.encoding_name()
                                && r.explainer == ex.name()
                        })
                        .filter_map(|r| metric_value(metric, r))
                        .collect();
                    if let Ok(Summary {
                        n,
                        mean,
                        min,
                        q1,
                        median,
                        q3,
                        max,
                    }) = aggregate(&values)
                    {
                        rows.push(AggregateRow {
                            metric: metric.into(),
                            dataset: ds.name.clone(),
                            bucketing: combo.bucketing_name().into(),
                            encoding: combo.encoding_name().into(),
                            explainer: ex.name().into(),
                            n,
                            mean,
                            min,
                            q1,
                            median,
                            q3,
                            max,
                        });
                    }
                }
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
    All,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            "all" => Ok(Self::All),
            other => Err(format!(
                "unknown format `{other}` (csv, json, markdown, all)"
            )),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(HarnessError::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(HarnessError::io(path))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

impl ReportBundle {
    pub fn aggregates_for(&self, metric: &str) -> Vec<AggregateRow> {
        self.aggregates
            .iter()
            .filter(|r| r.metric == metric)
            .cloned()
            .collect()
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Reads `bundle.json` and, when present, `timing.json` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("bundle.json");
        let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
        let mut bundle: ReportBundle = serde_json::from_str(&text)?;
        let timing = dir.join("timing.json");
        if timing.exists() {
            let text = std::fs::read_to_string(&timing).map_err(HarnessError::io(&timing))?;
            bundle.timing = serde_json::from_str(&text)?;
        }
        Ok(bundle)
    }

    pub fn to_markdown(&self) -> String {
        let cfg = &self.manifest.config;
        let mut out = String::from("# Evaluation report\n");
        let titles = [
            ("stability_subset", "Stability by subset"),
            ("stability_weight", "Stability by weight"),
            ("fidelity", "Fidelity"),
        ];
        for (metric, title) in titles {
            let _ = write!(out, "\n## {title}\n\n| combo | explainer |");
            for ds in &cfg.datasets {
                let _ = write!(out, " {} |", ds.name);
            }
            out.push_str("\n|---|---|");
            out.push_str(&"---|".repeat(cfg.datasets.len()));
            out.push('\n');
            for combo in &cfg.combos {
                for ex in &cfg.explainers {
                    let _ = write!(out, "| {} | {} |", combo.key(), ex.name());
                    for ds in &cfg.datasets {
                        let cell = self
                            .aggregates
                            .iter()
                            .find(|r| {
                                r.metric == metric
                                    && r.dataset == ds.name
                                    && r.bucketing == combo.bucketing_name()
                                    && r.encoding == combo.encoding_name()
                                    && r.explainer == ex.name()
                            })
                            .map_or("-".to_string(), |r| format!("{:.2}", r.mean));
                        let _ = write!(out, " {cell} |");
                    }
                    out.push('\n');
                }
            }
        }
        out.push_str("\n## Accuracy by prefix length\n\n| dataset | combo | bucket | prefix length | n | accuracy |\n|---|---|---|---|---|---|\n");
        for a in &self.accuracy {
            let _ = writeln!(
                out,
                "| {} | {}/{} | {} | {} | {} | {:.3} |",
                a.dataset, a.bucketing, a.encoding, a.bucket_id, a.prefix_length, a.n, a.accuracy
            );
        }
        if !self.failures.is_empty() {
            let _ = write!(
                out,
                "\n## Failures\n\n{} failed work items, see failures.csv.\n",
                self.failures.len()
            );
        }
        out
    }
}

/// Writes the bundle into `dir`. `manifest.json` is always written.
pub fn emit_report(
    bundle: &ReportBundle,
    dir: &Path,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_text(
        &put("manifest.json"),
        &serde_json::to_string_pretty(&bundle.manifest)?,
    )?;
    let csv = matches!(format, ReportFormat::Csv | ReportFormat::All);
    let json = matches!(format, ReportFormat::Json | ReportFormat::All);
    let md = matches!(format, ReportFormat::Markdown | ReportFormat::All);
    if csv {
        let agg_header = [
            "metric",
            "dataset",
            "bucketing",
            "encoding",
            "explainer",
            "n",
            "mean",
            "min",
            "q1",
            "median",
            "q3",
            "max",
        ];
        for metric in METRICS {
            write_csv(
                &put(&format!("{metric}.csv")),
                &bundle.aggregates_for(metric),
                &agg_header,
            )?;
        }
        write_csv(
            &put("instances.csv"),
            &bundle.instances,
            &[
                "dataset",
                "bucketing",
                "encoding",
                "explainer",
                "bucket_id",
                "case_id",
                "prefix_length",
                "d",
                "y_original",
                "by_subset",
                "by_weight",
                "F",
                "n_targets",
                "flags",
            ],
        )?;
        write_csv(
            &put("timing.csv"),
            &bundle.timing,
            &[
                "dataset",
                "bucketing",
                "encoding",
                "explainer",
                "bucket_id",
                "case_id",
                "prefix_length",
                "repetition",
                "d",
                "wall_seconds",
            ],
        )?;
        write_csv(
            &put("accuracy.csv"),
            &bundle.accuracy,
            &[
                "dataset",
                "bucketing",
                "encoding",
                "bucket_id",
                "prefix_length",
                "n",
                "accuracy",
            ],
        )?;
        write_csv(
            &put("failures.csv"),
            &bundle.failures,
            &[
                "dataset",
                "combo",
                "bucket_id",
                "explainer",
                "case_id",
                "prefix_length",
                "stage",
                "error",
            ],
        )?;
    }
    if json {
        write_text(&put("bundle.json"), &serde_json::to_string_pretty(bundle)?)?;
        write_text(
            &put("timing.json"),
            &serde_json::to_string_pretty(&bundle.timing)?,
        )?;
    }
    if md {
        write_text(&put("report.md"), &bundle.to_markdown())?;
    }
    Ok(written)
}

/// Per-instance scores of externally supplied explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub explainer: String,
    pub case_id: String,
    pub prefix_length: usize,
    pub y_original: Option<f64>,
    pub by_subset: Option<f64>,
    pub by_weight: Option<f64>,
    #[serde(rename = "F")]
    pub fidelity: Option<f64>,
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub explainer: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

type ScoreGetter = fn(&ScoreRecord) -> Option<f64>;

pub fn summarize_scores(records: &[ScoreRecord]) -> Vec<ScoreSummary> {
    let mut explainers: Vec<&str> = records.iter().map(|r| r.explainer.as_str()).collect();
    explainers.sort();
    explainers.dedup();
    let mut out = Vec::new();
    for ex in explainers {
        let metrics: [(&str, ScoreGetter); 3] = [
            ("stability_subset", |r| r.by_subset),
            ("stability_weight", |r| r.by_weight),
            ("fidelity", |r| r.fidelity),
        ];
        for (metric, get) in metrics {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.explainer == ex)
                .filter_map(get)
                .collect();
            if let Ok(Summary {
                n,
                mean,
                min,
                q1,
                median,
                q3,
                max,
            }) = aggregate(&values)
            {
                out.push(ScoreSummary {
                    explainer: ex.into(),
                    metric: metric.into(),
                    n,
                    mean,
                    min,
                    q1,
                    median,
                    q3,
                    max,
                });
            }
        }
    }
    out
}

/// Writes `scores.*` and `scores_aggregate.*` into `dir`.
pub fn write_scores(
    dir: &Path,
    records: &[ScoreRecord],
    format: ReportFormat,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let summary = summarize_scores(records);
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::All) {
        let p = dir.join("scores.csv");
        write_csv(
            &p,
            records,
            &[
                "explainer",
                "case_id",
                "prefix_length",
                "y_original",
                "by_subset",
                "by_weight",
                "F",
                "flags",
            ],
        )?;
        written.push(p);
        let p = dir.join("scores_aggregate.csv");
        write_csv(
            &p,
            &summary,
            &[
                "explainer",
                "metric",
                "n",
                "mean",
                "min",
                "q1",
                "median",
                "q3",
                "max",
            ],
        )?;
        written.push(p);
    }
    if matches!(format, ReportFormat::Json | ReportFormat::All) {
        let p = dir.join("scores.json");
        write_text(&p, &serde_json::to_string_pretty(records)?)?;
        written.push(p);
        let p = dir.join("scores_aggregate.json");
        write_text(&p, &serde_json::to_string_pretty(&summary)?)?;
        written.push(p);
    }
    if matches!(format, ReportFormat::Markdown | ReportFormat::All) {
        let mut md = String::from(
            "| explainer | metric | n | mean | min | max |\n|---|---|---|---|---|---|\n",
        );
        for s in &summary {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.3} | {:.3} | {:.3} |",
                s.explainer, s.metric, s.n, s.mean, s.min, s.max
            );
        }
        let p = dir.join("scores.md");
        write_text(&p, &md)?;
        written.push(p);
    }
    Ok(written)
}
