//! Bucketing of prefix logs and their encoding into numeric feature
//! matrices.
//!
//! Every column carries a [`FeatureDescriptor`] naming the attribute, the
//! encoder and (where relevant) the category and event index it came from,
//! so explanation weights can be traced back to the log.
//!
//! Missing cells are stored as `NaN`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{AttrKind, DType, EventLog, LogSchema, PrefixEntry, PrefixLog, Value};

/// Category name of the shared column for values unseen in training.
pub const OTHER_CATEGORY: &str = "__other__";

/// Name of the optional derived dynamic attribute.
pub const ELAPSED_ATTR: &str = "elapsed_seconds";

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("bucket is empty")]
    EmptyBucket,
    #[error("encoding produced no feature columns")]
    NoFeatures,
    #[error("column {0} does not exist")]
    NoSuchColumn(usize),
    #[error("column {0} has no observed values")]
    AllMissingColumn(usize),
    #[error("malformed matrix file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketingStrategy {
    Single,
    PrefixLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMethod {
    Aggregate,
    IndexBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    StaticNumeric,
    StaticOnehot,
    AggCount,
    AggMin,
    AggMax,
    AggMean,
    AggStd,
    IndexNumeric,
    IndexOnehot,
}

impl EncoderKind {
    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            EncoderKind::StaticOnehot | EncoderKind::AggCount | EncoderKind::IndexOnehot
        )
    }

    pub fn is_onehot(self) -> bool {
        matches!(self, EncoderKind::StaticOnehot | EncoderKind::IndexOnehot)
    }

    pub fn is_index_based(self) -> bool {
        matches!(self, EncoderKind::IndexNumeric | EncoderKind::IndexOnehot)
    }

    fn tag(self) -> &'static str {
        match self {
            EncoderKind::StaticNumeric => "static",
            EncoderKind::StaticOnehot => "static",
            EncoderKind::AggCount => "count",
            EncoderKind::AggMin => "min",
            EncoderKind::AggMax => "max",
            EncoderKind::AggMean => "mean",
            EncoderKind::AggStd => "std",
            EncoderKind::IndexNumeric => "index",
            EncoderKind::IndexOnehot => "index",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub column_index: usize,
    pub source_attr: String,
    pub encoder: EncoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// 1-based event position, index-based encoders only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_index: Option<usize>,
}

impl FeatureDescriptor {
    /// Human-readable column name, e.g. `count:activity=A` or `index:cost@2`.
    pub fn name(&self) -> String {
        let mut s = format!("{}:{}", self.encoder.tag(), self.source_attr);
        if let Some(c) = &self.category {
            s.push('=');
            s.push_str(c);
        }
        if let Some(i) = self.event_index {
            s.push('@');
            s.push_str(&i.to_string());
        }
        s
    }
}

/// Per-attribute category lists frozen from training data. The activity
/// alphabet is stored under the schema's activity column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub categories: BTreeMap<String, Vec<String>>,
    /// Adds a shared [`OTHER_CATEGORY`] column per categorical attribute.
    pub other_column: bool,
}

impl CategoryVocabulary {
    pub fn from_log(log: &EventLog) -> Self {
        let schema = &log.schema;
        let mut sets: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
        sets.entry(schema.activity_column.clone()).or_default();
        for decl in &schema.attribute_decls {
            if decl.dtype == DType::Categorical {
                sets.entry(decl.name.clone()).or_default();
            }
        }
        for trace in &log.traces {
            for (name, v) in &trace.static_attrs {
                if let (Some(set), Some(c)) = (sets.get_mut(name), v.as_cat()) {
                    set.insert(c.to_string());
                }
            }
            for event in &trace.events {
                sets.get_mut(&schema.activity_column)
                    .expect("activity entry")
                    .insert(event.activity.clone());
                for (name, v) in &event.attrs {
                    if let (Some(set), Some(c)) = (sets.get_mut(name), v.as_cat()) {
                        set.insert(c.to_string());
                    }
                }
            }
        }
        CategoryVocabulary {
            categories: sets
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
            other_column: true,
        }
    }

    pub fn with_other_column(mut self, enabled: bool) -> Self {
        self.other_column = enabled;
        self
    }

    /// Columns emitted for `attr`, in order.
    pub fn columns(&self, attr: &str) -> Vec<String> {
        let mut cols = self.categories.get(attr).cloned().unwrap_or_default();
        if self.other_column {
            cols.push(OTHER_CATEGORY.to_string());
        }
        cols
    }

    fn slot(&self, attr: &str, value: &str) -> Option<usize> {
        let known = self.categories.get(attr).map(Vec::as_slice).unwrap_or(&[]);
        match known.binary_search_by(|c| c.as_str().cmp(value)) {
            Ok(i) => Some(i),
            Err(_) if self.other_column => Some(known.len()),
            Err(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncodeOptions {
    /// Adds a numeric dynamic attribute with the seconds since the previous
    /// event (0 for the first event).
    #[serde(default)]
    pub elapsed_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub bucket_id: String,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major values, `NaN` marks a missing cell.
    pub values: Vec<f64>,
    pub descriptors: Vec<FeatureDescriptor>,
    pub labels: Vec<bool>,
    pub case_ids: Vec<String>,
    pub prefix_lengths: Vec<usize>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows).map(move |i| self.values[i * self.n_cols + j])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn labels_as_f64(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&l| if l { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            bucket_id: self.bucket_id.clone(),
            n_rows: idx.len(),
            n_cols: self.n_cols,
            values,
            descriptors: self.descriptors.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            case_ids: idx.iter().map(|&i| self.case_ids[i].clone()).collect(),
            prefix_lengths: idx.iter().map(|&i| self.prefix_lengths[i]).collect(),
        }
    }

    /// Stable hash of the column layout, used to bind models to matrices.
    pub fn descriptors_fingerprint(&self) -> String {
        fingerprint(&self.descriptors)
    }

    /// Values as CSV with a header of column names; missing cells are empty.
    pub fn write_values_csv<W: Write>(&self, writer: W) -> Result<(), EncodeError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.descriptors.iter().map(FeatureDescriptor::name))?;
        for row in self.rows() {
            out.write_record(row.iter().map(|v| {
                if v.is_nan() {
                    String::new()
                } else {
                    v.to_string()
                }
            }))?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn metadata(&self) -> MatrixMetadata {
        MatrixMetadata {
            bucket_id: self.bucket_id.clone(),
            descriptors: self.descriptors.clone(),
            labels: self.labels.clone(),
            case_ids: self.case_ids.clone(),
            prefix_lengths: self.prefix_lengths.clone(),
        }
    }

    pub fn from_parts<R: Read>(values_csv: R, meta: MatrixMetadata) -> Result<Self, EncodeError> {
        let mut reader = csv::Reader::from_reader(values_csv);
        let n_cols = reader.headers()?.len();
        if n_cols != meta.descriptors.len() {
            return Err(EncodeError::Malformed(format!(
                "{} value columns but {} descriptors",
                n_cols,
                meta.descriptors.len()
            )));
        }
        let mut values = Vec::new();
        let mut n_rows = 0;
        for record in reader.records() {
            let record = record?;
            for cell in record.iter() {
                let cell = cell.trim();
                values.push(if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse::<f64>()
                        .map_err(|_| EncodeError::Malformed(format!("bad number `{cell}`")))?
                });
            }
            n_rows += 1;
        }
        if meta.labels.len() != n_rows
            || meta.case_ids.len() != n_rows
            || meta.prefix_lengths.len() != n_rows
        {
            return Err(EncodeError::Malformed(
                "row metadata length mismatch".into(),
            ));
        }
        Ok(FeatureMatrix {
            bucket_id: meta.bucket_id,
            n_rows,
            n_cols,
            values,
            descriptors: meta.descriptors,
            labels: meta.labels,
            case_ids: meta.case_ids,
            prefix_lengths: meta.prefix_lengths,
        })
    }
}

/// JSON sidecar of a matrix values CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMetadata {
    pub bucket_id: String,
    pub descriptors: Vec<FeatureDescriptor>,
    pub labels: Vec<bool>,
    pub case_ids: Vec<String>,
    pub prefix_lengths: Vec<usize>,
}

pub fn fingerprint(descriptors: &[FeatureDescriptor]) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(descriptors).expect("descriptors serialize");
    hex::encode(Sha256::digest(&json).as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub id: String,
    /// Shared prefix length for prefix-length buckets.
    pub prefix_length: Option<usize>,
    pub log: PrefixLog,
}

pub fn bucket_id_for(strategy: BucketingStrategy, prefix_length: usize) -> String {
    match strategy {
        BucketingStrategy::Single => "single".to_string(),
        BucketingStrategy::PrefixLength => format!("prefix_{prefix_length}"),
    }
}

/// Partitions a prefix log; prefix-length buckets come out in increasing
/// length order.
pub fn bucket(prefix_log: &PrefixLog, strategy: BucketingStrategy) -> Vec<Bucket> {
    if prefix_log.is_empty() {
        return Vec::new();
    }
    match strategy {
        BucketingStrategy::Single => vec![Bucket {
            id: bucket_id_for(strategy, 0),
            prefix_length: None,
            log: prefix_log.clone(),
        }],
        BucketingStrategy::PrefixLength => {
            let mut groups: BTreeMap<usize, Vec<PrefixEntry>> = BTreeMap::new();
            for e in &prefix_log.entries {
                groups.entry(e.prefix_length).or_default().push(e.clone());
            }
            groups
                .into_iter()
                .map(|(len, entries)| Bucket {
                    id: bucket_id_for(strategy, len),
                    prefix_length: Some(len),
                    log: PrefixLog { entries },
                })
                .collect()
        }
    }
}

const STAT_KINDS: [EncoderKind; 4] = [
    EncoderKind::AggMin,
    EncoderKind::AggMax,
    EncoderKind::AggMean,
    EncoderKind::AggStd,
];

#[derive(Debug, Clone)]
struct DynamicAttr {
    name: String,
    dtype: DType,
}

/// A fitted column layout that can encode any bucket of the same log.
#[derive(Debug, Clone)]
pub struct Encoder {
    schema: LogSchema,
    method: EncodingMethod,
    vocab: CategoryVocabulary,
    options: EncodeOptions,
    max_index: usize,
    descriptors: Vec<FeatureDescriptor>,
}

impl Encoder {
    /// Fixes the layout from a (training) bucket: vocabulary from `vocab`,
    /// and for index-based encoding the bucket's maximum prefix length.
    pub fn fit(
        schema: &LogSchema,
        method: EncodingMethod,
        vocab: &CategoryVocabulary,
        bucket: &PrefixLog,
        options: EncodeOptions,
    ) -> Result<Self, EncodeError> {
        if bucket.is_empty() {
            return Err(EncodeError::EmptyBucket);
        }
        Self::with_max_index(schema, method, vocab, bucket.max_prefix_length(), options)
    }

    pub fn with_max_index(
        schema: &LogSchema,
        method: EncodingMethod,
        vocab: &CategoryVocabulary,
        max_index: usize,
        options: EncodeOptions,
    ) -> Result<Self, EncodeError> {
        let mut enc = Encoder {
            schema: schema.clone(),
            method,
            vocab: vocab.clone(),
            options,
            max_index,
            descriptors: Vec::new(),
        };
        enc.descriptors = enc.layout();
        if enc.descriptors.is_empty() {
            return Err(EncodeError::NoFeatures);
        }
        Ok(enc)
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn width(&self) -> usize {
        self.descriptors.len()
    }

    pub fn method(&self) -> EncodingMethod {
        self.method
    }

    fn dynamic_attrs(&self) -> Vec<DynamicAttr> {
        let mut attrs = vec![DynamicAttr {
            name: self.schema.activity_column.clone(),
            dtype: DType::Categorical,
        }];
        attrs.extend(
            self.schema
                .attributes(AttrKind::Dynamic)
                .map(|d| DynamicAttr {
                    name: d.name.clone(),
                    dtype: d.dtype,
                }),
        );
        if self.options.elapsed_time {
            attrs.push(DynamicAttr {
                name: ELAPSED_ATTR.to_string(),
                dtype: DType::Numeric,
            });
        }
        attrs.sort_by(|a, b| a.name.cmp(&b.name));
        attrs
    }

    fn layout(&self) -> Vec<FeatureDescriptor> {
        let mut out = Vec::new();
        let mut push = |attr: &str, encoder, category: Option<String>, event_index| {
            out.push(FeatureDescriptor {
                column_index: 0,
                source_attr: attr.to_string(),
                encoder,
                category,
                event_index,
            })
        };
        let mut statics: Vec<_> = self.schema.attributes(AttrKind::Static).collect();
        statics.sort_by(|a, b| a.name.cmp(&b.name));
        for decl in statics {
            match decl.dtype {
                DType::Numeric => push(&decl.name, EncoderKind::StaticNumeric, None, None),
                DType::Categorical => {
                    for c in self.vocab.columns(&decl.name) {
                        push(&decl.name, EncoderKind::StaticOnehot, Some(c), None);
                    }
                }
            }
        }
        for attr in self.dynamic_attrs() {
            match (self.method, attr.dtype) {
                (EncodingMethod::Aggregate, DType::Categorical) => {
                    for c in self.vocab.columns(&attr.name) {
                        push(&attr.name, EncoderKind::AggCount, Some(c), None);
                    }
                }
                (EncodingMethod::Aggregate, DType::Numeric) => {
                    for kind in STAT_KINDS {
                        push(&attr.name, kind, None, None);
                    }
                }
                (EncodingMethod::IndexBased, DType::Categorical) => {
                    for c in self.vocab.columns(&attr.name) {
                        for i in 1..=self.max_index {
                            push(
                                &attr.name,
                                EncoderKind::IndexOnehot,
                                Some(c.clone()),
                                Some(i),
                            );
                        }
                    }
                }
                (EncodingMethod::IndexBased, DType::Numeric) => {
                    for i in 1..=self.max_index {
                        push(&attr.name, EncoderKind::IndexNumeric, None, Some(i));
                    }
                }
            }
        }
        for (i, d) in out.iter_mut().enumerate() {
            d.column_index = i;
        }
        out
    }

    fn event_value(&self, entry: &PrefixEntry, attr: &str, pos: usize) -> Value {
        let event = &entry.trace.events[pos];
        if attr == self.schema.activity_column {
            return Value::Cat(event.activity.clone());
        }
        if self.options.elapsed_time && attr == ELAPSED_ATTR {
            let secs = if pos == 0 {
                0.0
            } else {
                (event.timestamp - entry.trace.events[pos - 1].timestamp).num_milliseconds() as f64
                    / 1000.0
            };
            return Value::Num(secs);
        }
        event.attrs.get(attr).cloned().unwrap_or(Value::Missing)
    }

    fn encode_row(&self, entry: &PrefixEntry, row: &mut Vec<f64>) {
        let mut statics: Vec<_> = self.schema.attributes(AttrKind::Static).collect();
        statics.sort_by(|a, b| a.name.cmp(&b.name));
        for decl in statics {
            let value = entry
                .trace
                .static_attrs
                .get(&decl.name)
                .unwrap_or(&Value::Missing);
            match decl.dtype {
                DType::Numeric => row.push(value.as_num().unwrap_or(f64::NAN)),
                DType::Categorical => {
                    let width = self.vocab.columns(&decl.name).len();
                    let start = row.len();
                    row.resize(start + width, 0.0);
                    if let Some(slot) = value.as_cat().and_then(|c| self.vocab.slot(&decl.name, c))
                    {
                        row[start + slot] = 1.0;
                    }
                }
            }
        }
        let len = entry.trace.events.len();
        for attr in self.dynamic_attrs() {
            match (self.method, attr.dtype) {
                (EncodingMethod::Aggregate, DType::Categorical) => {
                    let width = self.vocab.columns(&attr.name).len();
                    let start = row.len();
                    row.resize(start + width, 0.0);
                    for pos in 0..len {
                        let v = self.event_value(entry, &attr.name, pos);
                        if let Some(slot) = v.as_cat().and_then(|c| self.vocab.slot(&attr.name, c))
                        {
                            row[start + slot] += 1.0;
                        }
                    }
                }
                (EncodingMethod::Aggregate, DType::Numeric) => {
                    let vals: Vec<f64> = (0..len)
                        .filter_map(|p| self.event_value(entry, &attr.name, p).as_num())
                        .collect();
                    row.extend_from_slice(&summary_stats(&vals));
                }
                (EncodingMethod::IndexBased, DType::Categorical) => {
                    let cols = self.vocab.columns(&attr.name);
                    let start = row.len();
                    row.resize(start + cols.len() * self.max_index, f64::NAN);
                    for i in 0..self.max_index {
                        if i >= len {
                            continue;
                        }
                        let v = self.event_value(entry, &attr.name, i);
                        let slot = v.as_cat().and_then(|c| self.vocab.slot(&attr.name, c));
                        for c in 0..cols.len() {
                            row[start + c * self.max_index + i] =
                                if Some(c) == slot { 1.0 } else { 0.0 };
                        }
                    }
                }
                (EncodingMethod::IndexBased, DType::Numeric) => {
                    for i in 0..self.max_index {
                        let v = if i < len {
                            self.event_value(entry, &attr.name, i)
                                .as_num()
                                .unwrap_or(f64::NAN)
                        } else {
                            f64::NAN
                        };
                        row.push(v);
                    }
                }
            }
        }
    }

    /// Encodes a bucket with this layout. Events past `max_index` are
    /// ignored by index-based encoding.
    pub fn transform(
        &self,
        bucket: &PrefixLog,
        bucket_id: &str,
    ) -> Result<FeatureMatrix, EncodeError> {
        if bucket.is_empty() {
            return Err(EncodeError::EmptyBucket);
        }
        let n_cols = self.width();
        let mut values = Vec::with_capacity(bucket.len() * n_cols);
        let mut row = Vec::with_capacity(n_cols);
        for entry in &bucket.entries {
            row.clear();
            self.encode_row(entry, &mut row);
            debug_assert_eq!(row.len(), n_cols);
            values.extend_from_slice(&row);
        }
        Ok(FeatureMatrix {
            bucket_id: bucket_id.to_string(),
            n_rows: bucket.len(),
            n_cols,
            values,
            descriptors: self.descriptors.clone(),
            labels: bucket.entries.iter().map(|e| e.label).collect(),
            case_ids: bucket.entries.iter().map(|e| e.case_id.clone()).collect(),
            prefix_lengths: bucket.entries.iter().map(|e| e.prefix_length).collect(),
        })
    }
}

/// Fits a layout on `bucket` and encodes it.
pub fn encode(
    bucket: &PrefixLog,
    bucket_id: &str,
    schema: &LogSchema,
    method: EncodingMethod,
    vocab: &CategoryVocabulary,
) -> Result<FeatureMatrix, EncodeError> {
    Encoder::fit(schema, method, vocab, bucket, EncodeOptions::default())?
        .transform(bucket, bucket_id)
}

/// `[min, max, mean, std]`; sample std with a singleton defined as 0; all
/// `NaN` for an empty sequence.
pub fn summary_stats(vals: &[f64]) -> [f64; 4] {
    if vals.is_empty() {
        return [f64::NAN; 4];
    }
    let n = vals.len() as f64;
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = vals.iter().sum::<f64>() / n;
    let std = if vals.len() < 2 {
        0.0
    } else {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    [min, max, mean, std]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDomain {
    pub lo: f64,
    pub hi: f64,
    pub integer_valued: bool,
    pub is_binary_indicator: bool,
    /// Distinct observed values (sorted) for integer-valued columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

pub fn feature_domain(
    matrix: &FeatureMatrix,
    column_index: usize,
) -> Result<ObservedDomain, EncodeError> {
    let desc = matrix
        .descriptors
        .get(column_index)
        .ok_or(EncodeError::NoSuchColumn(column_index))?;
    let mut observed: Vec<f64> = matrix
        .column(column_index)
        .filter(|v| !v.is_nan())
        .collect();
    if observed.is_empty() {
        return Err(EncodeError::AllMissingColumn(column_index));
    }
    observed.sort_by(f64::total_cmp);
    let lo = observed[0];
    let hi = observed[observed.len() - 1];
    let integer_valued = desc.encoder.is_categorical();
    let values = if integer_valued {
        observed.dedup();
        observed
    } else {
        Vec::new()
    };
    Ok(ObservedDomain {
        lo,
        hi,
        integer_valued,
        is_binary_indicator: desc.encoder.is_onehot(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{extract_prefixes, parse_log_str, AttributeDecl};

    fn schema() -> LogSchema {
        LogSchema {
            case_id_column: "case".into(),
            activity_column: "activity".into(),
            timestamp_column: "ts".into(),
            attribute_decls: vec![AttributeDecl {
                name: "cost".into(),
                kind: AttrKind::Dynamic,
                dtype: DType::Numeric,
            }],
            label_column: "label".into(),
            positive_label: "1".into(),
            negative_label: Some("0".into()),
        }
    }

    fn vocab_abc() -> CategoryVocabulary {
        CategoryVocabulary {
            categories: BTreeMap::from([(
                "activity".to_string(),
                vec!["A".to_string(), "B".to_string(), "C".to_string()],
            )]),
            other_column: false,
        }
    }

    fn log(text: &str) -> EventLog {
        parse_log_str(text, &schema()).unwrap()
    }

    fn full_prefix(log: &EventLog) -> PrefixLog {
        let max = log.traces.iter().map(|t| t.len()).max().unwrap();
        let p = extract_prefixes(log, 1, max).unwrap();
        PrefixLog {
            entries: p
                .entries
                .into_iter()
                .filter(|e| e.prefix_length == log.traces[0].len())
                .collect(),
        }
    }

    #[test]
    fn aggregate_counts_and_stats() {
        let l = log("case,activity,ts,cost,label\n\
                     c,A,2020-01-01T00:00:00,1,1\n\
                     c,A,2020-01-01T00:01:00,3,1\n\
                     c,B,2020-01-01T00:02:00,2,1\n");
        let p = full_prefix(&l);
        let m = encode(&p, "b", &l.schema, EncodingMethod::Aggregate, &vocab_abc()).unwrap();
        let names: Vec<_> = m.descriptors.iter().map(|d| d.name()).collect();
        assert_eq!(
            names,
            [
                "count:activity=A",
                "count:activity=B",
                "count:activity=C",
                "min:cost",
                "max:cost",
                "mean:cost",
                "std:cost"
            ]
        );
        assert_eq!(m.row(0), &[2.0, 1.0, 0.0, 1.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn index_based_onehot() {
        let l = log("case,activity,ts,cost,label\n\
                     c,A,2020-01-01T00:00:00,5,0\n\
                     c,B,2020-01-01T00:01:00,6,0\n");
        let p = full_prefix(&l);
        let m = encode(&p, "b", &l.schema, EncodingMethod::IndexBased, &vocab_abc()).unwrap();
        // activity block sorted by (category, index): A@1 A@2 B@1 B@2 C@1 C@2, then cost@1 cost@2
        assert_eq!(m.n_cols, 8);
        let at = |cat: &str, idx: usize| {
            m.descriptors
                .iter()
                .position(|d| d.category.as_deref() == Some(cat) && d.event_index == Some(idx))
                .unwrap()
        };
        let row = m.row(0);
        let idx1: Vec<_> = ["A", "B", "C"].iter().map(|c| row[at(c, 1)]).collect();
        let idx2: Vec<_> = ["A", "B", "C"].iter().map(|c| row[at(c, 2)]).collect();
        assert_eq!(idx1, [1.0, 0.0, 0.0]);
        assert_eq!(idx2, [0.0, 1.0, 0.0]);
        assert_eq!(&row[6..], &[5.0, 6.0]);
    }

    #[test]
    fn index_based_pads_with_missing() {
        let l = log("case,activity,ts,cost,label\n\
                     c,A,2020-01-01T00:00:00,5,0\n");
        let p = full_prefix(&l);
        let enc = Encoder::with_max_index(
            &l.schema,
            EncodingMethod::IndexBased,
            &vocab_abc(),
            2,
            EncodeOptions::default(),
        )
        .unwrap();
        let m = enc.transform(&p, "b").unwrap();
        let row = m.row(0);
        for (d, v) in m.descriptors.iter().zip(row) {
            assert_eq!(v.is_nan(), d.event_index == Some(2), "{}", d.name());
        }
    }

    #[test]
    fn unseen_category_maps_to_other() {
        let l = log("case,activity,ts,cost,label\n\
                     c,Z,2020-01-01T00:00:00,5,0\n");
        let p = full_prefix(&l);
        let vocab = vocab_abc().with_other_column(true);
        let m = encode(&p, "b", &l.schema, EncodingMethod::Aggregate, &vocab).unwrap();
        assert_eq!(m.descriptors[3].category.as_deref(), Some(OTHER_CATEGORY));
        assert_eq!(&m.row(0)[..4], &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn singleton_stats() {
        assert_eq!(summary_stats(&[4.0]), [4.0, 4.0, 4.0, 0.0]);
        assert!(summary_stats(&[]).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn bucket_strategies() {
        let l = log("case,activity,ts,cost,label\n\
                     c,A,2020-01-01T00:00:00,1,0\n\
                     c,B,2020-01-01T00:01:00,1,0\n\
                     c,C,2020-01-01T00:02:00,1,0\n");
        let p = extract_prefixes(&l, 1, 3).unwrap();
        let by_len = bucket(&p, BucketingStrategy::PrefixLength);
        assert_eq!(by_len.len(), 3);
        assert_eq!(by_len[2].id, "prefix_3");
        let single = bucket(&p, BucketingStrategy::Single);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].log.len(), 3);
        assert!(bucket(&PrefixLog::default(), BucketingStrategy::Single).is_empty());
    }

    #[test]
    fn empty_bucket_errors() {
        let l = log("case,activity,ts,cost,label\nc,A,2020-01-01,1,0\n");
        assert!(matches!(
            encode(
                &PrefixLog::default(),
                "b",
                &l.schema,
                EncodingMethod::Aggregate,
                &vocab_abc()
            ),
            Err(EncodeError::EmptyBucket)
        ));
    }

    fn matrix_with_column(values: &[f64], encoder: EncoderKind) -> FeatureMatrix {
        FeatureMatrix {
            bucket_id: "t".into(),
            n_rows: values.len(),
            n_cols: 1,
            values: values.to_vec(),
            descriptors: vec![FeatureDescriptor {
                column_index: 0,
                source_attr: "x".into(),
                encoder,
                category: encoder.is_categorical().then(|| "A".to_string()),
                event_index: encoder.is_index_based().then_some(1),
            }],
            labels: vec![false; values.len()],
            case_ids: (0..values.len()).map(|i| i.to_string()).collect(),
            prefix_lengths: vec![1; values.len()],
        }
    }

    #[test]
    fn domains() {
        let d = feature_domain(
            &matrix_with_column(&[1.0, 3.0, 2.0], EncoderKind::AggMean),
            0,
        )
        .unwrap();
        assert_eq!(
            (d.lo, d.hi, d.integer_valued, d.is_binary_indicator),
            (1.0, 3.0, false, false)
        );
        let d = feature_domain(
            &matrix_with_column(&[0.0, 1.0, 1.0], EncoderKind::StaticOnehot),
            0,
        )
        .unwrap();
        assert!(d.is_binary_indicator);
        let d = feature_domain(
            &matrix_with_column(&[0.0, 0.0, 2.0, 5.0, f64::NAN], EncoderKind::AggCount),
            0,
        )
        .unwrap();
        assert_eq!((d.lo, d.hi, d.integer_valued), (0.0, 5.0, true));
        assert_eq!(d.values, [0.0, 2.0, 5.0]);
        assert!(matches!(
            feature_domain(&matrix_with_column(&[f64::NAN], EncoderKind::AggMean), 0),
            Err(EncodeError::AllMissingColumn(0))
        ));
        assert!(matches!(
            feature_domain(&matrix_with_column(&[1.0], EncoderKind::AggMean), 3),
            Err(EncodeError::NoSuchColumn(3))
        ));
    }

    #[test]
    fn matrix_file_round_trip() {
        let m = matrix_with_column(&[1.5, f64::NAN, -2.0], EncoderKind::AggMean);
        let mut buf = Vec::new();
        m.write_values_csv(&mut buf).unwrap();
        let back = FeatureMatrix::from_parts(buf.as_slice(), m.metadata()).unwrap();
        assert_eq!(back.descriptors, m.descriptors);
        assert_eq!(back.values[0], 1.5);
        assert!(back.values[1].is_nan());
        assert_eq!(back.values[2], -2.0);
    }
}
