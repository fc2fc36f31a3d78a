//! Labeled text datasets: label sets, samples, and the line-delimited JSON
//! record format used for gold inputs, synthetic outputs and checkpoints.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::genes::GenePartition;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: label {label:?} is not in the label set")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: record has empty text")]
    EmptyText { line: usize },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: synthetic record without parent_ids")]
    MissingParents { line: usize },
    #[error("line {line}: gold record carries parent_ids or partition_record")]
    GoldWithProvenance { line: usize },
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    RelationExtraction,
    Summarization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    /// Free-text description substituted for `{label_def}` in prompts.
    pub definition: String,
}

impl Label {
    pub fn new(name: impl Into<String>, definition: impl Into<String>) -> Self {
        Label {
            name: name.into(),
            definition: definition.into(),
        }
    }
}

/// Ordered set of labels for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<Label>,
    task_kind: TaskKind,
}

impl LabelSet {
    pub fn new(labels: Vec<Label>, task_kind: TaskKind) -> Result<Self, CorpusError> {
        if labels.is_empty() {
            return Err(CorpusError::InvalidLabelSet("at least one label is required".into()));
        }
        if task_kind == TaskKind::Summarization && labels.len() != 1 {
            return Err(CorpusError::InvalidLabelSet(format!(
                "summarization tasks carry exactly one pseudo-label, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.name.trim().is_empty() {
                return Err(CorpusError::InvalidLabelSet("label name is empty".into()));
            }
            if label.definition.trim().is_empty() {
                return Err(CorpusError::InvalidLabelSet(format!(
                    "label {:?} has an empty definition",
                    label.name
                )));
            }
            if !seen.insert(label.name.as_str()) {
                return Err(CorpusError::InvalidLabelSet(format!(
                    "duplicate label {:?}",
                    label.name
                )));
            }
        }
        Ok(LabelSet { labels, task_kind })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn get(&self, name: &str) -> Option<&Label> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Gold,
    Synthetic,
}

/// One labeled text unit with provenance.
///
/// Fields the record format does not know about are kept in `extra` and
/// written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub label: String,
    pub origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent_ids: Option<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition_record: Option<GenePartition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation_index: Option<u64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Sample {
    pub fn gold(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            label: label.into(),
            origin: Origin::Gold,
            parent_ids: None,
            partition_record: None,
            generation_index: None,
            extra: Map::new(),
        }
    }

    pub fn is_gold(&self) -> bool {
        self.origin == Origin::Gold
    }
}

#[derive(Deserialize)]
struct SampleRecord {
    id: Option<String>,
    text: String,
    label: String,
    origin: Option<Origin>,
    parent_ids: Option<(String, String)>,
    partition_record: Option<GenePartition>,
    generation_index: Option<u64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Free-text task description (e.g. "task type: chemical protein interaction").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub name: String,
    pub domain: String,
    pub task_description: String,
}

/// Id assigned to the record at `index` (zero-based file order) when the
/// record carries none.
pub fn default_gold_id(index: usize) -> String {
    format!("gold-{index:06}")
}

/// Parses one record line. `line` is one-based and only used in errors.
pub(crate) fn parse_record(raw: &str, line: usize, index: usize) -> Result<Sample, CorpusError> {
    let rec: SampleRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
        line,
        message: e.to_string(),
    })?;
    if rec.text.trim().is_empty() {
        return Err(CorpusError::EmptyText { line });
    }
    let origin = rec.origin.unwrap_or(Origin::Gold);
    match origin {
        Origin::Gold if rec.parent_ids.is_some() || rec.partition_record.is_some() => {
            return Err(CorpusError::GoldWithProvenance { line });
        }
        Origin::Synthetic if rec.parent_ids.is_none() => {
            return Err(CorpusError::MissingParents { line });
        }
        _ => {}
    }
    Ok(Sample {
        id: rec.id.unwrap_or_else(|| default_gold_id(index)),
        text: rec.text,
        label: rec.label,
        origin,
        parent_ids: rec.parent_ids,
        partition_record: rec.partition_record,
        generation_index: rec.generation_index,
        extra: rec.extra,
    })
}

/// Reads a dataset file, validating labels against `label_set`.
///
/// Blank lines are skipped. Records without an `id` get `gold-NNNNNN` from
/// their position among the records; records without `origin` are gold.
pub fn load_dataset(path: &Path, label_set: &LabelSet) -> Result<Vec<Sample>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let raw = line.map_err(|e| CorpusError::io(path, e))?;
        if raw.trim().is_empty() {
            continue;
        }
        let sample = parse_record(&raw, line_no, samples.len())?;
        if !label_set.contains(&sample.label) {
            return Err(CorpusError::UnknownLabel {
                line: line_no,
                label: sample.label,
            });
        }
        if !ids.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub(crate) fn write_records<'a, I, W>(samples: I, mut out: W) -> std::io::Result<()>
where
    I: IntoIterator<Item = &'a Sample>,
    W: Write,
{
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes one JSON record per line and fsyncs the file before returning.
pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_records(samples, &mut writer).map_err(|e| CorpusError::io(path, e))?;
    let file = writer
        .into_inner()
        .map_err(|e| CorpusError::io(path, e.into_error()))?;
    file.sync_all().map_err(|e| CorpusError::io(path, e))
}

/// Buckets samples by label, in label-set order. Every label of the set is
/// present, possibly empty. Samples whose label is not in the set get a
/// bucket of their own after the known labels.
pub fn stratify_by_label<'a>(
    samples: &'a [Sample],
    label_set: &LabelSet,
) -> Vec<(String, Vec<&'a Sample>)> {
    let mut buckets: Vec<(String, Vec<&Sample>)> = label_set
        .labels()
        .iter()
        .map(|l| (l.name.clone(), Vec::new()))
        .collect();
    let mut index: BTreeMap<String, usize> = buckets
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), i))
        .collect();
    for sample in samples {
        let slot = match index.get(&sample.label) {
            Some(&i) => i,
            None => {
                buckets.push((sample.label.clone(), Vec::new()));
                index.insert(sample.label.clone(), buckets.len() - 1);
                buckets.len() - 1
            }
        };
        buckets[slot].1.push(sample);
    }
    buckets
}
