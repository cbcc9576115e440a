use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use ppmxai::encoding::{
    bucket, feature_domain, summary_stats, BucketingStrategy, CategoryVocabulary, EncodeOptions,
    Encoder, EncodingMethod, FeatureMatrix, MatrixMetadata,
};
use ppmxai::eventlog::{extract_prefixes, generate_synthetic_log, parse_log, GenSpec, LogSchema};
use ppmxai::explain::{
    read_explanation_dir, repeat_explanations, write_explanation_dir, CaseRef, Explainer,
    ExplanationSet, ShapleyConfig, ShapleyExplainer, SurrogateConfig, SurrogateExplainer,
    TrainingStats,
};
use ppmxai::harness::{
    emit_report, parallel_map, run_experiment, write_scores, ExperimentConfig, HarnessError,
    ReportBundle, ReportFormat, ScoreRecord,
};
use ppmxai::metrics::{build_plan, fidelity, stability_scores, IntervalContext, ShapleyReference};
use ppmxai::model::{train_gbt, GbtConfig, GbtModel};
use ppmxai::rng::SeedPath;

use crate::{data, CliError, Common, Outcome};

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Data(HarnessError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io(path))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

fn json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn sidecar(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Reads a matrix values CSV and its JSON sidecar.
pub fn load_matrix(csv: &Path) -> Result<FeatureMatrix, CliError> {
    let meta: MatrixMetadata = serde_json::from_str(&read(&sidecar(csv))?).map_err(data)?;
    let file = std::fs::File::open(csv).map_err(io(csv))?;
    FeatureMatrix::from_parts(std::io::BufReader::new(file), meta).map_err(data)
}

pub fn save_matrix(matrix: &FeatureMatrix, csv: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    matrix.write_values_csv(&mut buf).map_err(data)?;
    write(csv, &String::from_utf8(buf).expect("csv is utf-8"))?;
    write(
        &sidecar(csv),
        &serde_json::to_string_pretty(&matrix.metadata()).map_err(data)?,
    )
}

fn load_model(path: &Path, matrix: &FeatureMatrix) -> Result<GbtModel, CliError> {
    let model = GbtModel::from_json(&read(path)?).map_err(data)?;
    if model.n_features != matrix.n_cols {
        return Err(data(ppmxai::model::ModelError::WidthMismatch {
            expected: model.n_features,
            got: matrix.n_cols,
        }));
    }
    if !model.descriptors_fingerprint.is_empty()
        && model.descriptors_fingerprint != matrix.descriptors_fingerprint()
    {
        return Err(CliError::Data(HarnessError::Config(
            "model was trained on a different column layout".into(),
        )));
    }
    Ok(model)
}

pub fn synth(c: &Common) -> Result<Outcome, CliError> {
    let spec: GenSpec = json(require(&c.config, "config")?)?;
    let out = require(&c.out, "out")?;
    let synth = generate_synthetic_log(&spec, c.seed.unwrap_or(0)).map_err(data)?;
    write(
        &out.join("log.csv"),
        &synth.log.to_csv_string().map_err(data)?,
    )?;
    write(
        &out.join("log.schema.json"),
        &serde_json::to_string_pretty(&synth.log.schema).map_err(data)?,
    )?;
    write(
        &out.join("metadata.json"),
        &serde_json::to_string_pretty(&synth.metadata).map_err(data)?,
    )?;
    Ok(Outcome::Complete)
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    log: PathBuf,
    /// Defaults to the log path with a `.schema.json` extension.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "single", value_parser = parse_bucketing)]
    bucketing: BucketingStrategy,
    #[arg(long, default_value = "aggregate", value_parser = parse_encoding)]
    encoding: EncodingMethod,
    #[arg(long, default_value_t = 1)]
    prefix_min: usize,
    #[arg(long, default_value_t = 20)]
    prefix_max: usize,
    /// Drop the shared column for unseen categories.
    #[arg(long)]
    no_other_column: bool,
    /// Add seconds since the previous event as a dynamic attribute.
    #[arg(long)]
    elapsed_time: bool,
}

fn parse_bucketing(s: &str) -> Result<BucketingStrategy, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown bucketing `{s}` (single, prefix_length)"))
}

fn parse_encoding(s: &str) -> Result<EncodingMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown encoding `{s}` (aggregate, index_based)"))
}

fn default_schema_path(log: &Path) -> PathBuf {
    let stem = log
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    log.with_file_name(format!("{stem}.schema.json"))
}

pub fn encode(c: &Common, a: &EncodeArgs) -> Result<Outcome, CliError> {
    let out = require(&c.out, "out")?;
    let schema_path = a
        .schema
        .clone()
        .unwrap_or_else(|| default_schema_path(&a.log));
    let schema = LogSchema::from_json(&read(&schema_path)?).map_err(data)?;
    let file = std::fs::File::open(&a.log).map_err(io(&a.log))?;
    let log = parse_log(std::io::BufReader::new(file), &schema).map_err(data)?;
    let vocab = CategoryVocabulary::from_log(&log).with_other_column(!a.no_other_column);
    let prefixes = extract_prefixes(&log, a.prefix_min, a.prefix_max).map_err(data)?;
    let options = EncodeOptions {
        elapsed_time: a.elapsed_time,
    };
    for b in bucket(&prefixes, a.bucketing) {
        let encoder = Encoder::fit(&schema, a.encoding, &vocab, &b.log, options).map_err(data)?;
        let matrix = encoder.transform(&b.log, &b.id).map_err(data)?;
        save_matrix(&matrix, &out.join(format!("{}.csv", b.id)))?;
        println!("{}\trows={}\td={}", b.id, matrix.n_rows, matrix.n_cols);
    }
    write(
        &out.join("vocabulary.json"),
        &serde_json::to_string_pretty(&vocab).map_err(data)?,
    )?;
    Ok(Outcome::Complete)
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    matrix: PathBuf,
}

pub fn train(c: &Common, a: &TrainArgs) -> Result<Outcome, CliError> {
    let out = require(&c.out, "out")?;
    let mut config: GbtConfig = match &c.config {
        Some(p) => json(p)?,
        None => GbtConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    let matrix = load_matrix(&a.matrix)?;
    let model = train_gbt(&matrix, &config).map_err(data)?;
    write(out, &model.to_json().map_err(data)?)?;
    Ok(Outcome::Complete)
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Rows to explain.
    #[arg(long)]
    matrix: PathBuf,
    /// Training matrix for surrogate sampling and Shapley background
    /// (defaults to --matrix).
    #[arg(long)]
    train_matrix: Option<PathBuf>,
    #[arg(long, default_value = "surrogate")]
    explainer: String,
    /// Repetitions per instance.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Explain only the first N rows.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 16)]
    background_size: usize,
}

fn build_explainer(
    c: &Common,
    kind: &str,
    train: &FeatureMatrix,
    background_size: usize,
) -> Result<Box<dyn Explainer>, CliError> {
    match kind {
        "surrogate" => {
            let config: SurrogateConfig = match &c.config {
                Some(p) => json(p)?,
                None => SurrogateConfig::default(),
            };
            Ok(Box::new(
                SurrogateExplainer::new(config, TrainingStats::from_matrix(train)).map_err(data)?,
            ))
        }
        "shapley" => {
            let config: ShapleyConfig = match &c.config {
                Some(p) => json(p)?,
                None => ShapleyConfig::default(),
            };
            let step = (train.n_rows / background_size.max(1)).max(1);
            let background = (0..train.n_rows)
                .step_by(step)
                .take(background_size)
                .map(|i| train.row(i).to_vec())
                .collect();
            Ok(Box::new(
                ShapleyExplainer::new(config, background).map_err(data)?,
            ))
        }
        other => Err(CliError::Usage(format!(
            "unknown explainer `{other}` (surrogate, shapley)"
        ))),
    }
}

pub fn explain(c: &Common, a: &ExplainArgs) -> Result<Outcome, CliError> {
    let out = require(&c.out, "out")?;
    let matrix = load_matrix(&a.matrix)?;
    let train = match &a.train_matrix {
        Some(p) => load_matrix(p)?,
        None => matrix.clone(),
    };
    let model = load_model(&a.model, &matrix)?;
    let explainer = build_explainer(c, &a.explainer, &train, a.background_size)?;
    let seed = c.seed.unwrap_or(0);
    let rows: Vec<usize> = (0..a.limit.unwrap_or(matrix.n_rows).min(matrix.n_rows)).collect();
    let results = parallel_map(&rows, c.workers, |&i| {
        let case_ref = CaseRef::new(matrix.case_ids[i].clone(), matrix.prefix_lengths[i]);
        let base = SeedPath::new(seed)
            .str(&case_ref.case_id)
            .u64(case_ref.prefix_length as u64)
            .seed();
        repeat_explanations(
            explainer.as_ref(),
            &model,
            matrix.row(i),
            &case_ref,
            a.m,
            base,
        )
    });
    let mut sets = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => {
                eprintln!("explain: {e}");
                failed += 1;
            }
        }
    }
    write_explanation_dir(out, &sets).map_err(data)?;
    Ok(if failed > 0 {
        Outcome::Partial(failed)
    } else {
        Outcome::Complete
    })
}

#[derive(Args)]
pub struct EvalStabilityArgs {
    /// Directory of explanation-set JSON files.
    #[arg(long)]
    explanations: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

pub fn eval_stability(c: &Common, a: &EvalStabilityArgs) -> Result<Outcome, CliError> {
    let out = require(&c.out, "out")?;
    let sets = read_explanation_dir(&a.explanations).map_err(data)?;
    let mut records = Vec::new();
    let mut failed = 0;
    for set in &sets {
        match stability_scores(set, a.k) {
            Ok(s) => records.push(ScoreRecord {
                explainer: set.explainer_id().into(),
                case_id: set.case_ref.case_id.clone(),
                prefix_length: set.case_ref.prefix_length,
                y_original: None,
                by_subset: s.by_subset,
                by_weight: Some(s.by_weight),
                fidelity: None,
                flags: s.flags.join(";"),
            }),
            Err(e) => {
                eprintln!("{}: {e}", set.file_name());
                failed += 1;
            }
        }
    }
    write_scores(out, &records, c.format.unwrap_or(ReportFormat::Csv)).map_err(data)?;
    Ok(if failed > 0 {
        Outcome::Partial(failed)
    } else {
        Outcome::Complete
    })
}

#[derive(Args)]
pub struct EvalFidelityArgs {
    #[arg(long)]
    explanations: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Matrix holding the explained rows.
    #[arg(long)]
    matrix: PathBuf,
    /// Training matrix for value domains (defaults to --matrix).
    #[arg(long)]
    train_matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    n_perturbations: usize,
    #[arg(long, default_value_t = 10)]
    n_bins: usize,
}

pub fn eval_fidelity(c: &Common, a: &EvalFidelityArgs) -> Result<Outcome, CliError> {
    let out = require(&c.out, "out")?;
    let matrix = load_matrix(&a.matrix)?;
    let train = match &a.train_matrix {
        Some(p) => load_matrix(p)?,
        None => matrix.clone(),
    };
    let model = load_model(&a.model, &matrix)?;
    let sets = read_explanation_dir(&a.explanations).map_err(data)?;
    let index: BTreeMap<CaseRef, usize> = (0..matrix.n_rows)
        .map(|i| {
            (
                CaseRef::new(matrix.case_ids[i].clone(), matrix.prefix_lengths[i]),
                i,
            )
        })
        .collect();
    let domains: Vec<_> = (0..train.n_cols)
        .map(|j| feature_domain(&train, j).ok())
        .collect();
    let train_std: Vec<f64> = (0..train.n_cols)
        .map(|j| summary_stats(&train.column(j).filter(|v| !v.is_nan()).collect::<Vec<_>>())[3])
        .collect();

    let located: Vec<(&ExplanationSet, Option<usize>)> = sets
        .iter()
        .map(|s| (s, index.get(&s.case_ref).copied()))
        .collect();
    // Sets without intervals are binned over all supplied Shapley sets.
    let with_intervals = sets
        .iter()
        .flat_map(|s| &s.explanations)
        .flat_map(|e| &e.attributions)
        .any(|a| a.interval.is_some());
    let reference = (!with_intervals).then(|| {
        let mut r = ShapleyReference::default();
        for (set, row) in &located {
            if let Some(i) = row {
                let m = set.explanations.len() as f64;
                let mut mean = vec![0.0; set.n_features()];
                for e in &set.explanations {
                    for (acc, w) in mean.iter_mut().zip(e.dense_weights()) {
                        *acc += w / m;
                    }
                }
                r.feature_rows.push(matrix.row(*i).to_vec());
                r.attributions.push(mean);
            }
        }
        r
    });
    let ctx = IntervalContext {
        domains: &domains,
        train_std: &train_std,
        shapley: reference.as_ref(),
        n_bins: a.n_bins,
    };
    let seed = c.seed.unwrap_or(0);
    let results = parallel_map(&located, c.workers, |&(set, row)| {
        let i = row.ok_or_else(|| format!("{}: no matching matrix row", set.file_name()))?;
        let plan = build_plan(set, matrix.row(i), a.k, a.n_perturbations, &ctx)
            .map_err(|e| e.to_string())?;
        let mut rng = SeedPath::new(seed)
            .str("fidelity")
            .str(&set.case_ref.case_id)
            .u64(set.case_ref.prefix_length as u64)
            .rng();
        let score = fidelity(&model, matrix.row(i), &plan, &mut rng).map_err(|e| e.to_string())?;
        Ok::<_, String>((set, score, plan.has_fallback()))
    });
    let mut records = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok((set, score, fallback)) => records.push(ScoreRecord {
                explainer: set.explainer_id().into(),
                case_id: set.case_ref.case_id.clone(),
                prefix_length: set.case_ref.prefix_length,
                y_original: Some(score.y_original),
                by_subset: None,
                by_weight: None,
                fidelity: Some(score.f),
                flags: if fallback {
                    "fallback_interval".into()
                } else {
                    String::new()
                },
            }),
            Err(e) => {
                eprintln!("{e}");
                failed += 1;
            }
        }
    }
    write_scores(out, &records, c.format.unwrap_or(ReportFormat::Csv)).map_err(data)?;
    Ok(if failed > 0 {
        Outcome::Partial(failed)
    } else {
        Outcome::Complete
    })
}

pub fn run(c: &Common) -> Result<Outcome, CliError> {
    let mut config = ExperimentConfig::load(require(&c.config, "config")?).map_err(data)?;
    if let Some(seed) = c.seed {
        config.global_seed = seed;
    }
    let out = c
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Usage("--out (or output_dir in the config) is required".into()))?;
    let bundle = run_experiment(&config, c.workers).map_err(data)?;
    emit_report(&bundle, &out, c.format.unwrap_or(ReportFormat::All)).map_err(data)?;
    println!(
        "{} instances, {} failures, report in {}",
        bundle.manifest.n_instances,
        bundle.manifest.n_failures,
        out.display()
    );
    Ok(if bundle.is_partial() {
        Outcome::Partial(bundle.failures.len())
    } else {
        Outcome::Complete
    })
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory holding `bundle.json` from an earlier run.
    #[arg(long)]
    bundle: PathBuf,
}

pub fn report(c: &Common, a: &ReportArgs) -> Result<Outcome, CliError> {
    let bundle = ReportBundle::load(&a.bundle).map_err(data)?;
    let format = c.format.unwrap_or(ReportFormat::Markdown);
    match &c.out {
        Some(out) => {
            emit_report(&bundle, out, format).map_err(data)?;
        }
        None if format == ReportFormat::Markdown => print!("{}", bundle.to_markdown()),
        None => {
            return Err(CliError::Usage(
                "--out is required unless --format markdown".into(),
            ))
        }
    }
    Ok(Outcome::Complete)
}
