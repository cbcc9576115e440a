use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;

use super::config::{Combo, DatasetConfig, DatasetSource, ExperimentConfig, ExplainerSpec};
use super::pool::parallel_map;
use super::report::{
    build_aggregates, AccuracyRecord, FailureRecord, InstanceRecord, Manifest, ReportBundle,
    TimingRecord,
};
use super::HarnessError;
use crate::encoding::{
    bucket, feature_domain, summary_stats, CategoryVocabulary, Encoder, FeatureMatrix,
    ObservedDomain,
};

use crate::eventlog::{
    downsample_majority, extract_prefixes, generate_synthetic_log, parse_log, split_train_test,
    EventLog, LogSchema, PrefixLog, SyntheticMetadata,
};
use crate::explain::{
    repetition_seed, CaseRef, Explainer, ExplanationSet, ShapleyExplainer, SurrogateExplainer,
    TrainingStats, FLAG_DEGENERATE_NEIGHBORHOOD,
};
use crate::metrics::{
    build_plan, fidelity, stability_scores, FidelityScore, IntervalContext, ShapleyReference,
    StabilityScore,
};
use crate::model::{evaluate_accuracy, train_gbt, GbtModel};
use crate::rng::{seeded, SeedPath};

pub struct LoadedDataset {
    pub name: String,
    pub log: EventLog,
    pub metadata: Option<SyntheticMetadata>,
}

pub fn load_dataset(
    config: &DatasetConfig,
    global_seed: u64,
) -> Result<LoadedDataset, HarnessError> {
    match &config.source {
        DatasetSource::Csv { log, schema } => {
            let text = std::fs::read_to_string(schema).map_err(HarnessError::io(schema))?;
            let schema = LogSchema::from_json(&text)?;
            let file = std::fs::File::open(log).map_err(HarnessError::io(log))?;
            Ok(LoadedDataset {
                name: config.name.clone(),
                log: parse_log(std::io::BufReader::new(file), &schema)?,
                metadata: None,
            })
        }
        DatasetSource::Synthetic { gen_spec, seed } => {
            let seed = seed.unwrap_or_else(|| {
                SeedPath::new(global_seed)
                    .str("synth")
                    .str(&config.name)
                    .seed()
            });
            let synth = generate_synthetic_log(gen_spec, seed)?;
            Ok(LoadedDataset {
                name: config.name.clone(),
                log: synth.log,
                metadata: Some(synth.metadata),
            })
        }
    }
}

struct DatasetContext {
    name: String,
    schema: LogSchema,
    vocab: CategoryVocabulary,
}

struct BucketJob {
    dataset: usize,
    combo: usize,
    bucket_id: String,
    train: PrefixLog,
    test: PrefixLog,
}

struct PreparedBucket {
    dataset: usize,
    combo: usize,
    bucket_id: String,
    test: FeatureMatrix,
    model: GbtModel,
    stats: TrainingStats,
    domains: Vec<Option<ObservedDomain>>,
    train_std: Vec<f64>,
    background: Vec<Vec<f64>>,
    instances: Vec<usize>,
    accuracy: Vec<AccuracyRecord>,
}

struct Labels<'a> {
    cfg: &'a ExperimentConfig,
    datasets: &'a [DatasetContext],
}

impl Labels<'_> {
    fn dataset(&self, i: usize) -> &str {
        &self.datasets[i].name
    }

    fn combo(&self, i: usize) -> &Combo {
        &self.cfg.combos[i]
    }

    fn path(&self, scope: &str, dataset: usize, combo: usize, bucket_id: &str) -> SeedPath {
        SeedPath::new(self.cfg.global_seed)
            .str(scope)
            .str(self.dataset(dataset))
            .str(&self.combo(combo).key())
            .str(bucket_id)
    }
}

fn sample_sorted(n: usize, amount: usize, seed: u64) -> Vec<usize> {
    let mut idx = sample(&mut seeded(seed), n, amount.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

fn prepare_bucket(job: &BucketJob, labels: &Labels) -> Result<PreparedBucket, HarnessError> {
    let cfg = labels.cfg;
    let ds = &labels.datasets[job.dataset];
    let combo = labels.combo(job.combo);
    let encoder = Encoder::fit(
        &ds.schema,
        combo.encoding,
        &ds.vocab,
        &job.train,
        cfg.encode_options,
    )?;
    let train = encoder.transform(&job.train, &job.bucket_id)?;
    let test = encoder.transform(&job.test, &job.bucket_id)?;
    let path = |scope: &str| labels.path(scope, job.dataset, job.combo, &job.bucket_id);

    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = path("model").seed();
    let model = train_gbt(&train, &model_cfg)?;

    let mut by_length: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in test.prefix_lengths.iter().enumerate() {
        by_length.entry(len).or_default().push(i);
    }
    let accuracy = by_length
        .into_iter()
        .map(|(prefix_length, rows)| {
            let subset = test.select_rows(&rows);
            Ok(AccuracyRecord {
                dataset: ds.name.clone(),
                bucketing: combo.bucketing_name().into(),
                encoding: combo.encoding_name().into(),
                bucket_id: job.bucket_id.clone(),
                prefix_length,
                n: rows.len(),
                accuracy: evaluate_accuracy(&model, &subset, 0.5)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let domains = (0..train.n_cols)
        .map(|j| feature_domain(&train, j).ok())
        .collect();
    let train_std = (0..train.n_cols)
        .map(|j| {
            let vals: Vec<f64> = train.column(j).filter(|v| !v.is_nan()).collect();
            summary_stats(&vals)[3]
        })
        .collect();
    let background = sample_sorted(train.n_rows, cfg.background_size, path("background").seed())
        .into_iter()
        .map(|i| train.row(i).to_vec())
        .collect();
    let instances = sample_sorted(test.n_rows, cfg.sample_size, path("instances").seed());
    Ok(PreparedBucket {
        dataset: job.dataset,
        combo: job.combo,
        bucket_id: job.bucket_id.clone(),
        stats: TrainingStats::from_matrix(&train),
        test,
        model,
        domains,
        train_std,
        background,
        instances,
        accuracy,
    })
}

fn build_explainer(
    spec: &ExplainerSpec,
    p: &PreparedBucket,
) -> Result<Box<dyn Explainer>, HarnessError> {
    Ok(match spec {
        ExplainerSpec::Surrogate { config, .. } => {
            Box::new(SurrogateExplainer::new(config.clone(), p.stats.clone())?.with_id(spec.name()))
        }
        ExplainerSpec::Shapley { config, .. } => Box::new(
            ShapleyExplainer::new(config.clone(), p.background.clone())?.with_id(spec.name()),
        ),
    })
}

struct Explained {
    set: ExplanationSet,
    stability: StabilityScore,
    wall_seconds: Vec<f64>,
}

struct InstanceItem {
    bucket: usize,
    explainer: usize,
    row: usize,
}

fn case_ref(p: &PreparedBucket, row: usize) -> CaseRef {
    CaseRef::new(p.test.case_ids[row].clone(), p.test.prefix_lengths[row])
}

fn instance_path(
    labels: &Labels,
    p: &PreparedBucket,
    explainer: &str,
    scope: &str,
    row: usize,
) -> SeedPath {
    labels
        .path(scope, p.dataset, p.combo, &p.bucket_id)
        .str(explainer)
        .str(&p.test.case_ids[row])
        .u64(p.test.prefix_lengths[row] as u64)
}

fn explain_instance(
    item: &InstanceItem,
    p: &PreparedBucket,
    explainer: &dyn Explainer,
    labels: &Labels,
) -> Result<Explained, HarnessError> {
    let cfg = labels.cfg;
    let row = p.test.row(item.row);
    let case_ref = case_ref(p, item.row);
    let base = instance_path(labels, p, explainer.id(), "explain", item.row).seed();
    let mut explanations = Vec::with_capacity(cfg.m);
    let mut wall_seconds = Vec::with_capacity(cfg.m);
    for r in 0..cfg.m {
        let start = Instant::now();
        explanations.push(explainer.explain(&p.model, row, &case_ref, repetition_seed(base, r))?);
        wall_seconds.push(start.elapsed().as_secs_f64());
    }
    let set = ExplanationSet {
        case_ref,
        explanations,
    };
    let stability = stability_scores(&set, cfg.k)?;
    Ok(Explained {
        set,
        stability,
        wall_seconds,
    })
}

fn fidelity_instance(
    item: &InstanceItem,
    p: &PreparedBucket,
    explained: &Explained,
    reference: Option<&ShapleyReference>,
    explainer: &str,
    labels: &Labels,
) -> Result<(FidelityScore, usize, bool), HarnessError> {
    let cfg = labels.cfg;
    let row = p.test.row(item.row);
    let ctx = IntervalContext {
        domains: &p.domains,
        train_std: &p.train_std,
        shapley: reference,
        n_bins: cfg.n_bins,
    };
    let plan = build_plan(&explained.set, row, cfg.k, cfg.n_perturbations, &ctx)?;
    let mut rng = instance_path(labels, p, explainer, "fidelity", item.row).rng();
    let score = fidelity(&p.model, row, &plan, &mut rng)?;
    Ok((score, plan.targets.len(), plan.has_fallback()))
}

/// Runs the full pipeline. Errors from loading, splitting or balancing a
/// dataset abort the run; failures inside a bucket or an instance are
/// recorded in the bundle and the rest of the run continues.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ReportBundle, HarnessError> {
    cfg.validate()?;
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    let mut contexts = Vec::new();
    let mut jobs = Vec::new();
    for (di, dcfg) in cfg.datasets.iter().enumerate() {
        let loaded = load_dataset(dcfg, cfg.global_seed)?;
        let seed = |scope: &str| {
            SeedPath::new(cfg.global_seed)
                .str(scope)
                .str(&dcfg.name)
                .seed()
        };
        let (train_log, test_log) =
            split_train_test(&loaded.log, cfg.train_fraction, seed("split"))?;
        let vocab = CategoryVocabulary::from_log(&train_log).with_other_column(cfg.other_column);
        let train_log = if cfg.downsample {
            downsample_majority(&train_log, seed("downsample"))?
        } else {
            train_log
        };
        let train_prefixes = extract_prefixes(&train_log, cfg.prefix.min, cfg.prefix.max)?;
        let test_prefixes = extract_prefixes(&test_log, cfg.prefix.min, cfg.prefix.max)?;
        for (ci, combo) in cfg.combos.iter().enumerate() {
            let test_buckets: BTreeMap<String, PrefixLog> = bucket(&test_prefixes, combo.bucketing)
                .into_iter()
                .map(|b| (b.id, b.log))
                .collect();
            let mut matched = 0;
            for b in bucket(&train_prefixes, combo.bucketing) {
                match test_buckets.get(&b.id) {
                    Some(test) => {
                        matched += 1;
                        jobs.push(BucketJob {
                            dataset: di,
                            combo: ci,
                            bucket_id: b.id,
                            train: b.log,
                            test: test.clone(),
                        });
                    }
                    None => notes.push(format!(
                        "{} {}: bucket {} has no test prefixes",
                        dcfg.name,
                        combo.key(),
                        b.id
                    )),
                }
            }
            if matched < test_buckets.len() {
                notes.push(format!(
                    "{} {}: {} test buckets have no training prefixes",
                    dcfg.name,
                    combo.key(),
                    test_buckets.len() - matched
                ));
            }
        }
        contexts.push(DatasetContext {
            name: dcfg.name.clone(),
            schema: loaded.log.schema.clone(),
            vocab,
        });
    }
    let labels = Labels {
        cfg,
        datasets: &contexts,
    };

    let failure = |job_dataset: usize, job_combo: usize, bucket_id: &str| FailureRecord {
        dataset: labels.dataset(job_dataset).to_string(),
        combo: labels.combo(job_combo).key(),
        bucket_id: bucket_id.to_string(),
        explainer: None,
        case_id: None,
        prefix_length: None,
        stage: String::new(),
        error: String::new(),
    };

    let mut prepared = Vec::new();
    for (job, result) in jobs
        .iter()
        .zip(parallel_map(&jobs, workers, |j| prepare_bucket(j, &labels)))
    {
        match result {
            Ok(p) => prepared.push(p),
            Err(e) => failures.push(FailureRecord {
                stage: "prepare".into(),
                error: e.to_string(),
                ..failure(job.dataset, job.combo, &job.bucket_id)
            }),
        }
    }

    // explainers[bucket][explainer]
    let mut explainers: Vec<Vec<Option<Box<dyn Explainer>>>> = Vec::new();
    for p in &prepared {
        let mut row = Vec::new();
        for spec in &cfg.explainers {
            match build_explainer(spec, p) {
                Ok(e) => row.push(Some(e)),
                Err(e) => {
                    failures.push(FailureRecord {
                        explainer: Some(spec.name().into()),
                        stage: "explainer".into(),
                        error: e.to_string(),
                        ..failure(p.dataset, p.combo, &p.bucket_id)
                    });
                    row.push(None);
                }
            }
        }
        explainers.push(row);
    }

    let mut items = Vec::new();
    for (bi, p) in prepared.iter().enumerate() {
        for (ei, ex) in explainers[bi].iter().enumerate() {
            if ex.is_some() {
                items.extend(p.instances.iter().map(|&row| InstanceItem {
                    bucket: bi,
                    explainer: ei,
                    row,
                }));
            }
        }
    }
    let explained = parallel_map(&items, workers, |it| {
        let ex = explainers[it.bucket][it.explainer]
            .as_deref()
            .expect("built");
        explain_instance(it, &prepared[it.bucket], ex, &labels)
    });

    // Shapley influential intervals bin each column over the instances
    // explained in the same bucket.
    let mut references: BTreeMap<(usize, usize), ShapleyReference> = BTreeMap::new();
    for (it, res) in items.iter().zip(&explained) {
        if let (true, Ok(ex)) = (cfg.explainers[it.explainer].is_shapley(), res) {
            let reference = references.entry((it.bucket, it.explainer)).or_default();
            let m = ex.set.explanations.len() as f64;
            let mut mean = vec![0.0; ex.set.n_features()];
            for e in &ex.set.explanations {
                for (acc, w) in mean.iter_mut().zip(e.dense_weights()) {
                    *acc += w / m;
                }
            }
            reference
                .feature_rows
                .push(prepared[it.bucket].test.row(it.row).to_vec());
            reference.attributions.push(mean);
        }
    }

    let pairs: Vec<(usize, &Explained)> = explained
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|e| (i, e)))
        .collect();
    let fidelities = parallel_map(&pairs, workers, |&(i, ex)| {
        let it = &items[i];
        fidelity_instance(
            it,
            &prepared[it.bucket],
            ex,
            references.get(&(it.bucket, it.explainer)),
            cfg.explainers[it.explainer].name(),
            &labels,
        )
    });
    let mut fidelity_of: BTreeMap<usize, Result<(FidelityScore, usize, bool), HarnessError>> =
        pairs.iter().map(|&(i, _)| i).zip(fidelities).collect();

    let mut instances = Vec::new();
    let mut timing = Vec::new();
    for (i, (it, res)) in items.iter().zip(explained).enumerate() {
        let p = &prepared[it.bucket];
        let combo = labels.combo(p.combo);
        let explainer = cfg.explainers[it.explainer].name();
        let cref = case_ref(p, it.row);
        let item_failure = |stage: &str, error: String| FailureRecord {
            explainer: Some(explainer.to_string()),
            case_id: Some(cref.case_id.clone()),
            prefix_length: Some(cref.prefix_length),
            stage: stage.into(),
            error,
            ..failure(p.dataset, p.combo, &p.bucket_id)
        };
        let ex = match res {
            Ok(ex) => ex,
            Err(e) => {
                failures.push(item_failure("explain", e.to_string()));
                continue;
            }
        };
        for (repetition, &wall_seconds) in ex.wall_seconds.iter().enumerate() {
            timing.push(TimingRecord {
                dataset: labels.dataset(p.dataset).into(),
                bucketing: combo.bucketing_name().into(),
                encoding: combo.encoding_name().into(),
                explainer: explainer.into(),
                bucket_id: p.bucket_id.clone(),
                case_id: cref.case_id.clone(),
                prefix_length: cref.prefix_length,
                repetition,
                d: p.test.n_cols,
                wall_seconds,
            });
        }
        let mut flags = ex.stability.flags.clone();
        if ex
            .set
            .explanations
            .iter()
            .any(|e| e.flags.iter().any(|f| f == FLAG_DEGENERATE_NEIGHBORHOOD))
        {
            flags.push(FLAG_DEGENERATE_NEIGHBORHOOD.into());
        }
        let (fid, n_targets) = match fidelity_of.remove(&i).expect("fidelity for every success") {
            Ok((score, n_targets, fallback)) => {
                if fallback {
                    flags.push(crate::metrics::FLAG_FALLBACK_INTERVAL.into());
                }
                (Some(score), n_targets)
            }
            Err(e) => {
                failures.push(item_failure("fidelity", e.to_string()));
                (None, 0)
            }
        };
        instances.push(InstanceRecord {
            dataset: labels.dataset(p.dataset).into(),
            bucketing: combo.bucketing_name().into(),
            encoding: combo.encoding_name().into(),
            explainer: explainer.into(),
            bucket_id: p.bucket_id.clone(),
            case_id: cref.case_id.clone(),
            prefix_length: cref.prefix_length,
            d: p.test.n_cols,
            y_original: fid.as_ref().map(|f| f.y_original),
            by_subset: ex.stability.by_subset,
            by_weight: Some(ex.stability.by_weight),
            fidelity: fid.as_ref().map(|f| f.f),
            n_targets,
            flags: flags.join(";"),
        });
    }

    let accuracy = prepared
        .iter()
        .flat_map(|p| p.accuracy.iter().cloned())
        .collect();
    let aggregates = build_aggregates(cfg, &instances);
    Ok(ReportBundle {
        manifest: Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            n_buckets: prepared.len(),
            n_instances: instances.len(),
            n_failures: failures.len(),
            notes,
        },
        aggregates,
        instances,
        timing,
        accuracy,
        failures,
    })
}
