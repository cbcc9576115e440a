//! Event logs: schema-driven CSV ingestion, prefix extraction, temporal
//! train/test splitting and class balancing.
//!
//! A log is a set of traces. Each trace carries case-level (static)
//! attributes, an ordered list of events with per-event (dynamic)
//! attributes, and a binary outcome label where `true` marks a deviant case.

mod synth;

pub use synth::{
    generate_synthetic_log, AttrGen, GenSpec, GroundTruthFeature, LabelRule, LengthRange,
    ScoreTerm, SyntheticLog, SyntheticMetadata, ValueGen,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("type mismatch at data row {row}, column `{column}`")]
    TypeMismatch { row: usize, column: String },
    #[error("source contains no data rows")]
    EmptySource,
    #[error("static attribute `{attr}` is not constant in case `{case_id}`")]
    NonConstantStatic { case_id: String, attr: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid prefix range [{0}, {1}]")]
    InvalidPrefixRange(usize, usize),
    #[error("invalid train fraction {0}")]
    InvalidFraction(f64),
    #[error("need at least 2 traces to split, got {0}")]
    TooFewTraces(usize),
    #[error("log contains a single outcome class")]
    SingleClass,
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDecl {
    pub name: String,
    pub kind: AttrKind,
    pub dtype: DType,
}

/// Column layout of a tabular event log (`*.schema.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSchema {
    pub case_id_column: String,
    pub activity_column: String,
    pub timestamp_column: String,
    #[serde(default)]
    pub attribute_decls: Vec<AttributeDecl>,
    pub label_column: String,
    pub positive_label: String,
    /// Written for negative cases on serialization; any non-positive value
    /// parses as negative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_label: Option<String>,
}

impl LogSchema {
    pub fn validate(&self) -> Result<(), LogError> {
        let mut seen = HashSet::new();
        let names = [
            &self.case_id_column,
            &self.activity_column,
            &self.timestamp_column,
            &self.label_column,
        ]
        .into_iter()
        .chain(self.attribute_decls.iter().map(|a| &a.name));
        for name in names {
            if name.is_empty() {
                return Err(LogError::InvalidSchema("empty column name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(LogError::InvalidSchema(format!(
                    "duplicate column `{name}`"
                )));
            }
        }
        Ok(())
    }

    pub fn attributes(&self, kind: AttrKind) -> impl Iterator<Item = &AttributeDecl> {
        self.attribute_decls.iter().filter(move |a| a.kind == kind)
    }

    pub fn negative_label(&self) -> &str {
        self.negative_label.as_deref().unwrap_or("regular")
    }

    pub fn from_json(text: &str) -> Result<Self, LogError> {
        let schema: LogSchema =
            serde_json::from_str(text).map_err(|e| LogError::InvalidSchema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }
}

/// An attribute value; empty source cells become `Missing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Missing,
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    fn to_cell(&self) -> String {
        match self {
            Value::Missing => String::new(),
            Value::Num(v) => v.to_string(),
            Value::Cat(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub activity: String,
    pub timestamp: NaiveDateTime,
    pub attrs: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
    pub static_attrs: BTreeMap<String, Value>,
    /// `true` for a positive (deviant) case.
    pub label: bool,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.events[0].timestamp
    }

    pub fn prefix(&self, length: usize) -> Trace {
        Trace {
            case_id: self.case_id.clone(),
            events: self.events[..length.min(self.events.len())].to_vec(),
            static_attrs: self.static_attrs.clone(),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub schema: LogSchema,
    pub traces: Vec<Trace>,
}

impl EventLog {
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.traces.iter().filter(|t| t.label).count();
        (pos, self.traces.len() - pos)
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.traces.is_empty() {
            return 0.0;
        }
        self.class_counts().0 as f64 / self.traces.len() as f64
    }

    /// Serializes back to CSV, one row per event in trace order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LogError> {
        let s = &self.schema;
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![
            s.case_id_column.as_str(),
            s.activity_column.as_str(),
            s.timestamp_column.as_str(),
        ];
        header.extend(s.attribute_decls.iter().map(|a| a.name.as_str()));
        header.push(&s.label_column);
        out.write_record(&header)?;
        for trace in &self.traces {
            let label = if trace.label {
                s.positive_label.as_str()
            } else {
                s.negative_label()
            };
            for event in &trace.events {
                let mut record = vec![
                    trace.case_id.clone(),
                    event.activity.clone(),
                    format_timestamp(&event.timestamp),
                ];
                for decl in &s.attribute_decls {
                    let value = match decl.kind {
                        AttrKind::Static => trace.static_attrs.get(&decl.name),
                        AttrKind::Dynamic => event.attrs.get(&decl.name),
                    };
                    record.push(value.map(Value::to_cell).unwrap_or_default());
                }
                record.push(label.to_string());
                out.write_record(&record)?;
            }
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, LogError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

/// Accepts RFC 3339 (normalized to UTC) or naive `YYYY-MM-DD[ T]HH:MM:SS[.f]`
/// and plain dates.
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y/%m/%d %H:%M:%S%.f",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn parse_value(raw: &str, dtype: DType, row: usize, column: &str) -> Result<Value, LogError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Value::Missing);
    }
    match dtype {
        DType::Categorical => Ok(Value::Cat(raw.to_string())),
        DType::Numeric => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Num)
            .ok_or_else(|| LogError::TypeMismatch {
                row,
                column: column.to_string(),
            }),
    }
}

struct PartialTrace {
    rows: Vec<(usize, Event)>,
    static_attrs: BTreeMap<String, Value>,
    label: bool,
}

/// Parses an RFC-4180 CSV event log with a header row.
///
/// Traces appear in order of first occurrence of their case id; events are
/// sorted by timestamp with ties kept in source order.
pub fn parse_log<R: Read>(source: R, schema: &LogSchema) -> Result<EventLog, LogError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| LogError::MissingColumn(name.to_string()))
    };
    let case_col = position(&schema.case_id_column)?;
    let act_col = position(&schema.activity_column)?;
    let ts_col = position(&schema.timestamp_column)?;
    let label_col = position(&schema.label_column)?;
    let attr_cols = schema
        .attribute_decls
        .iter()
        .map(|d| position(&d.name).map(|p| (d, p)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut cases: HashMap<String, PartialTrace> = HashMap::new();
    let mut n_rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        n_rows += 1;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let case_id = cell(case_col).trim().to_string();
        if case_id.is_empty() {
            return Err(LogError::TypeMismatch {
                row,
                column: schema.case_id_column.clone(),
            });
        }
        let activity = cell(act_col).trim().to_string();
        if activity.is_empty() {
            return Err(LogError::TypeMismatch {
                row,
                column: schema.activity_column.clone(),
            });
        }
        let timestamp = parse_timestamp(cell(ts_col)).ok_or_else(|| LogError::TypeMismatch {
            row,
            column: schema.timestamp_column.clone(),
        })?;
        let label_raw = cell(label_col).trim();
        if label_raw.is_empty() {
            return Err(LogError::TypeMismatch {
                row,
                column: schema.label_column.clone(),
            });
        }
        let label = label_raw == schema.positive_label;

        let mut statics = BTreeMap::new();
        let mut dynamics = BTreeMap::new();
        for &(decl, col) in &attr_cols {
            let value = parse_value(cell(col), decl.dtype, row, &decl.name)?;
            match decl.kind {
                AttrKind::Static => statics.insert(decl.name.clone(), value),
                AttrKind::Dynamic => dynamics.insert(decl.name.clone(), value),
            };
        }
        let event = Event {
            activity,
            timestamp,
            attrs: dynamics,
        };

        match cases.get_mut(&case_id) {
            Some(partial) => {
                if partial.label != label {
                    return Err(LogError::NonConstantStatic {
                        case_id,
                        attr: schema.label_column.clone(),
                    });
                }
                for (name, value) in &statics {
                    let first = &partial.static_attrs[name];
                    if !value.is_missing() && value != first {
                        return Err(LogError::NonConstantStatic {
                            case_id,
                            attr: name.clone(),
                        });
                    }
                }
                partial.rows.push((row, event));
            }
            None => {
                order.push(case_id.clone());
                cases.insert(
                    case_id,
                    PartialTrace {
                        rows: vec![(row, event)],
                        static_attrs: statics,
                        label,
                    },
                );
            }
        }
    }
    if n_rows == 0 {
        return Err(LogError::EmptySource);
    }

    let traces = order
        .into_iter()
        .map(|case_id| {
            let mut partial = cases.remove(&case_id).expect("case recorded");
            partial.rows.sort_by_key(|(row, e)| (e.timestamp, *row));
            Trace {
                case_id,
                events: partial.rows.into_iter().map(|(_, e)| e).collect(),
                static_attrs: partial.static_attrs,
                label: partial.label,
            }
        })
        .collect();
    Ok(EventLog {
        schema: schema.clone(),
        traces,
    })
}

pub fn parse_log_str(text: &str, schema: &LogSchema) -> Result<EventLog, LogError> {
    parse_log(text.as_bytes(), schema)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixEntry {
    pub case_id: String,
    pub prefix_length: usize,
    pub trace: Trace,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrefixLog {
    pub entries: Vec<PrefixEntry>,
}

impl PrefixLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_prefix_length(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.prefix_length)
            .max()
            .unwrap_or(0)
    }
}

/// One entry per trace and per length in `[min_len, min(max_len, len)]`.
pub fn extract_prefixes(
    log: &EventLog,
    min_len: usize,
    max_len: usize,
) -> Result<PrefixLog, LogError> {
    if min_len == 0 || min_len > max_len {
        return Err(LogError::InvalidPrefixRange(min_len, max_len));
    }
    let mut entries = Vec::new();
    for trace in &log.traces {
        let upper = max_len.min(trace.len());
        for length in min_len..=upper {
            entries.push(PrefixEntry {
                case_id: trace.case_id.clone(),
                prefix_length: length,
                trace: trace.prefix(length),
                label: trace.label,
            });
        }
    }
    Ok(PrefixLog { entries })
}

/// Temporal split: traces ordered by first-event timestamp, the earliest
/// `floor(n * train_fraction)` go to training. The seed only orders traces
/// that start at exactly the same instant.
pub fn split_train_test(
    log: &EventLog,
    train_fraction: f64,
    seed: u64,
) -> Result<(EventLog, EventLog), LogError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(LogError::InvalidFraction(train_fraction));
    }
    let n = log.traces.len();
    if n < 2 {
        return Err(LogError::TooFewTraces(n));
    }
    let mut rng = seeded(seed);
    let mut keyed: Vec<(NaiveDateTime, u64, usize)> = log
        .traces
        .iter()
        .enumerate()
        .map(|(i, t)| (t.start_time(), rng.random::<u64>(), i))
        .collect();
    keyed.sort();
    let n_train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let pick = |range: &[(NaiveDateTime, u64, usize)]| EventLog {
        schema: log.schema.clone(),
        traces: range
            .iter()
            .map(|&(_, _, i)| log.traces[i].clone())
            .collect(),
    };
    Ok((pick(&keyed[..n_train]), pick(&keyed[n_train..])))
}

/// Randomly subsamples the majority class down to the minority count.
/// Surviving traces keep their input order.
pub fn downsample_majority(log: &EventLog, seed: u64) -> Result<EventLog, LogError> {
    let (pos, neg) = log.class_counts();
    if pos == 0 || neg == 0 {
        return Err(LogError::SingleClass);
    }
    let majority_label = pos > neg;
    let minority = pos.min(neg);
    let mut majority_idx: Vec<usize> = log
        .traces
        .iter()
        .enumerate()
        .filter(|(_, t)| t.label == majority_label)
        .map(|(i, _)| i)
        .collect();
    let mut rng = seeded(seed);
    majority_idx.shuffle(&mut rng);
    let keep: HashSet<usize> = majority_idx.into_iter().take(minority).collect();
    let traces = log
        .traces
        .iter()
        .enumerate()
        .filter(|(i, t)| t.label != majority_label || keep.contains(i))
        .map(|(_, t)| t.clone())
        .collect();
    Ok(EventLog {
        schema: log.schema.clone(),
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LogSchema {
        LogSchema {
            case_id_column: "case".into(),
            activity_column: "activity".into(),
            timestamp_column: "ts".into(),
            attribute_decls: vec![
                AttributeDecl {
                    name: "age".into(),
                    kind: AttrKind::Static,
                    dtype: DType::Numeric,
                },
                AttributeDecl {
                    name: "cost".into(),
                    kind: AttrKind::Dynamic,
                    dtype: DType::Numeric,
                },
            ],
            label_column: "label".into(),
            positive_label: "deviant".into(),
            negative_label: None,
        }
    }

    const FIXTURE: &str = "\
case,activity,ts,age,cost,label
c1,A,2020-01-01T00:00:00,30,1.5,deviant
c2,A,2020-01-02T00:00:00,41,2,regular
c1,B,2020-01-01T01:00:00,30,,deviant
c3,C,2020-01-03T00:00:00,,7,regular
c2,C,2020-01-02T00:30:00,41,3,regular
c1,C,2020-01-01T00:30:00,30,4,deviant
";

    #[test]
    fn minimal_two_rows_one_trace() {
        let text = "case,activity,ts,age,cost,label\n\
                    c1,A,2020-01-01 10:00:00,5,1,regular\n\
                    c1,B,2020-01-01 11:00:00,5,2,regular\n";
        let log = parse_log_str(text, &schema()).unwrap();
        assert_eq!(log.traces.len(), 1);
        let acts: Vec<_> = log.traces[0]
            .events
            .iter()
            .map(|e| e.activity.as_str())
            .collect();
        assert_eq!(acts, ["A", "B"]);
    }

    #[test]
    fn six_row_fixture_counts() {
        let log = parse_log_str(FIXTURE, &schema()).unwrap();
        let counts: Vec<_> = log
            .traces
            .iter()
            .map(|t| (t.case_id.as_str(), t.len()))
            .collect();
        assert_eq!(counts, [("c1", 3), ("c2", 2), ("c3", 1)]);
        // c1 events reordered by timestamp: A (00:00), C (00:30), B (01:00)
        let acts: Vec<_> = log.traces[0]
            .events
            .iter()
            .map(|e| e.activity.as_str())
            .collect();
        assert_eq!(acts, ["A", "C", "B"]);
        assert_eq!(log.traces[0].static_attrs["age"], Value::Num(30.0));
        assert_eq!(log.traces[2].static_attrs["age"], Value::Missing);
        assert_eq!(log.traces[0].events[2].attrs["cost"], Value::Missing);
        assert!(log.traces[0].label);
        assert!(!log.traces[1].label);
    }

    #[test]
    fn missing_label_column() {
        let text = "case,activity,ts,age,cost\nc1,A,2020-01-01,1,1\n";
        match parse_log_str(text, &schema()) {
            Err(LogError::MissingColumn(c)) => assert_eq!(c, "label"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_mismatch_and_empty_and_non_constant() {
        let bad = "case,activity,ts,age,cost,label\nc1,A,2020-01-01,x,1,regular\n";
        assert!(matches!(
            parse_log_str(bad, &schema()),
            Err(LogError::TypeMismatch { row: 1, .. })
        ));
        let empty = "case,activity,ts,age,cost,label\n";
        assert!(matches!(
            parse_log_str(empty, &schema()),
            Err(LogError::EmptySource)
        ));
        let changing = "case,activity,ts,age,cost,label\n\
                        c1,A,2020-01-01,1,1,regular\n\
                        c1,B,2020-01-02,2,1,regular\n";
        assert!(matches!(
            parse_log_str(changing, &schema()),
            Err(LogError::NonConstantStatic { .. })
        ));
    }

    #[test]
    fn timestamp_ties_keep_source_order() {
        let text = "case,activity,ts,age,cost,label\n\
                    c1,B,2020-01-01T00:00:00,1,1,regular\n\
                    c1,A,2020-01-01T00:00:00,1,1,regular\n";
        let log = parse_log_str(text, &schema()).unwrap();
        assert_eq!(log.traces[0].events[0].activity, "B");
    }

    #[test]
    fn csv_round_trip() {
        let log = parse_log_str(FIXTURE, &schema()).unwrap();
        let text = log.to_csv_string().unwrap();
        assert_eq!(parse_log_str(&text, &schema()).unwrap(), log);
    }

    #[test]
    fn prefix_counts() {
        let log = parse_log_str(FIXTURE, &schema()).unwrap();
        let p = extract_prefixes(&log, 1, 2).unwrap();
        // c1: 1,2; c2: 1,2; c3: 1
        assert_eq!(p.len(), 5);
        let p = extract_prefixes(&log, 3, 5).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.entries[0].case_id, "c1");
        assert!(extract_prefixes(&log, 0, 2).is_err());
    }

    #[test]
    fn temporal_split_puts_earlier_first() {
        let log = parse_log_str(FIXTURE, &schema()).unwrap();
        let (train, test) = split_train_test(&log, 0.5, 1).unwrap();
        assert_eq!(train.traces.len(), 1);
        assert_eq!(train.traces[0].case_id, "c1");
        assert_eq!(test.traces.len(), 2);
        assert!(split_train_test(&log, 1.0, 1).is_err());
    }

    #[test]
    fn downsample_rejects_single_class() {
        let mut log = parse_log_str(FIXTURE, &schema()).unwrap();
        for t in &mut log.traces {
            t.label = false;
        }
        assert!(matches!(
            downsample_majority(&log, 0),
            Err(LogError::SingleClass)
        ));
    }
}
