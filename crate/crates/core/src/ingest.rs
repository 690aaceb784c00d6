//! Prediction-log ingestion: CSV/JSONL readers, output canonicalization,
//! per-class grouping and dataset validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label used for empty model outputs. Refusals and blank answers are kept as
/// their own prediction rather than dropped.
pub const EMPTY_PREDICTION: &str = "⟨empty⟩";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub ground_truth: String,
    pub prediction: String,
    pub subgroup: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
}

impl PredictionRecord {
    pub fn new(
        ground_truth: impl Into<String>,
        prediction: impl Into<String>,
        subgroup: impl Into<String>,
    ) -> Self {
        Self {
            ground_truth: ground_truth.into(),
            prediction: prediction.into(),
            subgroup: subgroup.into(),
            example_id: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.example_id = Some(id.into());
        self
    }

    pub fn is_correct(&self) -> bool {
        self.prediction == self.ground_truth
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input contains no records")]
    EmptyFile,
    #[error("row {row}: missing column '{name}'")]
    MissingColumn { name: String, row: u64 },
    #[error("row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("invalid synonym map: {0}")]
    InvalidSynonyms(String),
}

impl IngestError {
    /// True for errors caused by the input contents rather than the filesystem.
    pub fn is_validation(&self) -> bool {
        !matches!(self, IngestError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Names of the columns (CSV) or fields (JSONL) holding each record part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub label: String,
    pub prediction: String,
    pub group: String,
    pub id: Option<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            label: "gt".into(),
            prediction: "pred".into(),
            group: "group".into(),
            id: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReadOptions {
    pub format: InputFormat,
    pub columns: ColumnSpec,
    pub delimiter: u8,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            format: InputFormat::Csv,
            columns: ColumnSpec::default(),
            delimiter: b',',
        }
    }
}

pub fn read_records(path: &Path, opts: &ReadOptions) -> Result<Vec<PredictionRecord>, IngestError> {
    let file = File::open(path)?;
    match opts.format {
        InputFormat::Csv => read_csv(file, &opts.columns, opts.delimiter),
        InputFormat::Jsonl => read_jsonl(BufReader::new(file), &opts.columns),
    }
}

fn make_record(
    row: u64,
    ground_truth: String,
    prediction: String,
    subgroup: String,
    example_id: Option<String>,
    columns: &ColumnSpec,
) -> Result<PredictionRecord, IngestError> {
    if ground_truth.trim().is_empty() {
        return Err(IngestError::MalformedRow {
            row,
            reason: format!("empty ground-truth value in '{}'", columns.label),
        });
    }
    if subgroup.trim().is_empty() {
        return Err(IngestError::MalformedRow {
            row,
            reason: format!("empty subgroup value in '{}'", columns.group),
        });
    }
    let prediction = if prediction.is_empty() {
        EMPTY_PREDICTION.to_owned()
    } else {
        prediction
    };
    Ok(PredictionRecord {
        ground_truth,
        prediction,
        subgroup,
        example_id,
    })
}

/// Reads an RFC 4180 CSV with a header row. Row numbers in errors are
/// 1-based file lines, the header being row 1.
pub fn read_csv<R: Read>(
    input: R,
    columns: &ColumnSpec,
    delimiter: u8,
) -> Result<Vec<PredictionRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .clone();
    if headers.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                name: name.to_owned(),
                row: 1,
            })
    };
    let label_idx = find(&columns.label)?;
    let pred_idx = find(&columns.prediction)?;
    let group_idx = find(&columns.group)?;
    let id_idx = columns.id.as_deref().map(find).transpose()?;

    let mut records = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let rec = result.map_err(|e| csv_error(e, row))?;
        let field = |idx: usize, name: &str| {
            rec.get(idx)
                .map(str::to_owned)
                .ok_or_else(|| IngestError::MissingColumn {
                    name: name.to_owned(),
                    row,
                })
        };
        let gt = field(label_idx, &columns.label)?;
        let pred = field(pred_idx, &columns.prediction)?;
        let group = field(group_idx, &columns.group)?;
        let id = match (id_idx, columns.id.as_deref()) {
            (Some(idx), Some(name)) => Some(field(idx, name)?),
            _ => None,
        };
        records.push(make_record(row, gt, pred, group, id, columns)?);
    }
    if records.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Ok(records)
}

fn csv_error(err: csv::Error, row: u64) -> IngestError {
    let row = err
        .position()
        .map(|p| p.line())
        .unwrap_or(row);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => IngestError::Io(e),
        other => IngestError::MalformedRow {
            row,
            reason: format!("{other:?}"),
        },
    }
}

/// Reads one JSON object per line. Blank lines are skipped; row numbers are
/// 1-based line numbers.
pub fn read_jsonl<R: BufRead>(
    input: R,
    columns: &ColumnSpec,
) -> Result<Vec<PredictionRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let row = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRow {
                row,
                reason: format!("invalid JSON: {e}"),
            })?;
        let obj = value.as_object().ok_or_else(|| IngestError::MalformedRow {
            row,
            reason: "line is not a JSON object".into(),
        })?;
        let field = |name: &str| -> Result<String, IngestError> {
            match obj.get(name) {
                None | Some(serde_json::Value::Null) => Err(IngestError::MissingColumn {
                    name: name.to_owned(),
                    row,
                }),
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(v @ (serde_json::Value::Number(_) | serde_json::Value::Bool(_))) => {
                    Ok(v.to_string())
                }
                Some(_) => Err(IngestError::MalformedRow {
                    row,
                    reason: format!("field '{name}' must be a string"),
                }),
            }
        };
        let gt = field(&columns.label)?;
        let pred = field(&columns.prediction)?;
        let group = field(&columns.group)?;
        let id = columns.id.as_deref().map(field).transpose()?;
        records.push(make_record(row, gt, pred, group, id, columns)?);
    }
    if records.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Ok(records)
}

/// Writes records as CSV with the default column names (`id` only when some
/// record carries one). [`read_csv`] reads the output back unchanged.
pub fn write_records<W: Write>(out: W, records: &[PredictionRecord]) -> Result<(), IngestError> {
    let with_id = records.iter().any(|r| r.example_id.is_some());
    let defaults = ColumnSpec::default();
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![defaults.label.as_str(), defaults.prediction.as_str(), defaults.group.as_str()];
    if with_id {
        header.insert(0, "id");
    }
    writer.write_record(&header).map_err(csv_write_error)?;
    for r in records {
        let mut row = vec![r.ground_truth.as_str(), r.prediction.as_str(), r.subgroup.as_str()];
        if with_id {
            row.insert(0, r.example_id.as_deref().unwrap_or(""));
        }
        writer.write_record(&row).map_err(csv_write_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_write_error(err: csv::Error) -> IngestError {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => IngestError::Io(e),
        other => IngestError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Normalization applied to model outputs before counting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalizationRules {
    pub lowercase: bool,
    pub trim: bool,
    pub strip_punctuation: bool,
    /// Keys are stored already normalized; values are canonical labels.
    synonym_map: BTreeMap<String, String>,
}

impl Default for CanonicalizationRules {
    fn default() -> Self {
        Self {
            lowercase: false,
            trim: true,
            strip_punctuation: false,
            synonym_map: BTreeMap::new(),
        }
    }
}

impl CanonicalizationRules {
    pub fn new(lowercase: bool, trim: bool, strip_punctuation: bool) -> Self {
        Self {
            lowercase,
            trim,
            strip_punctuation,
            synonym_map: BTreeMap::new(),
        }
    }

    /// Installs a variant → canonical map. Both sides are normalized with the
    /// current rules; a canonical value that is itself a variant of a
    /// different label is rejected.
    pub fn with_synonyms<I, K, V>(mut self, pairs: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            let key = self.normalize(k.as_ref());
            let value = self.normalize(v.as_ref());
            if value.is_empty() {
                return Err(IngestError::InvalidSynonyms(format!(
                    "variant '{}' maps to an empty label",
                    k.as_ref()
                )));
            }
            if let Some(prev) = map.insert(key.clone(), value.clone()) {
                if prev != value {
                    return Err(IngestError::InvalidSynonyms(format!(
                        "variant '{key}' maps to both '{prev}' and '{value}'"
                    )));
                }
            }
        }
        for (key, value) in &map {
            if let Some(next) = map.get(value) {
                if next != value {
                    return Err(IngestError::InvalidSynonyms(format!(
                        "chained mapping '{key}' → '{value}' → '{next}'"
                    )));
                }
            }
        }
        self.synonym_map = map;
        Ok(self)
    }

    /// Loads a JSON object `{variant: canonical}`.
    pub fn load_synonyms(self, path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| IngestError::InvalidSynonyms(format!("{}: {e}", path.display())))?;
        self.with_synonyms(map)
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonym_map
    }

    fn normalize(&self, raw: &str) -> String {
        let mut s = if self.trim { raw.trim() } else { raw }.to_owned();
        if self.lowercase {
            s = s.to_lowercase();
        }
        if self.strip_punctuation {
            s.retain(|c| !c.is_ascii_punctuation());
            if self.trim {
                s = s.trim().to_owned();
            }
        }
        s
    }

    /// trim → lowercase → strip punctuation → synonym lookup. Idempotent.
    pub fn canonicalize(&self, prediction: &str) -> String {
        let normalized = self.normalize(prediction);
        let key = if normalized.is_empty() {
            EMPTY_PREDICTION.to_owned()
        } else {
            normalized
        };
        match self.synonym_map.get(&key) {
            Some(canonical) => canonical.clone(),
            None => key,
        }
    }

    /// Applies the rules to both the prediction and the ground truth of every
    /// record so that correctness compares like with like.
    pub fn apply(&self, records: &mut [PredictionRecord]) {
        for r in records {
            r.prediction = self.canonicalize(&r.prediction);
            r.ground_truth = self.canonicalize(&r.ground_truth);
        }
    }
}

/// Partitions records by ground-truth class, keeping classes and pairs in
/// input order.
pub fn group_by_class(records: &[PredictionRecord]) -> IndexMap<&str, Vec<(&str, &str)>> {
    let mut groups: IndexMap<&str, Vec<(&str, &str)>> = IndexMap::new();
    for r in records {
        groups
            .entry(r.ground_truth.as_str())
            .or_default()
            .push((r.subgroup.as_str(), r.prediction.as_str()));
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub subgroups: Vec<String>,
    /// class → subgroup → record count.
    pub cell_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub single_subgroup_classes: Vec<String>,
    pub duplicate_ids: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn subgroup_count(&self) -> usize {
        self.subgroups.len()
    }
}

/// Summarises the dataset shape and lists conditions that make effect sizes
/// undefined. Never modifies the records.
pub fn validate_dataset(records: &[PredictionRecord]) -> ValidationReport {
    let mut subgroups: Vec<String> = Vec::new();
    let mut seen_groups = HashSet::new();
    let mut cell_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut id_counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        if seen_groups.insert(r.subgroup.as_str()) {
            subgroups.push(r.subgroup.clone());
        }
        *cell_counts
            .entry(r.ground_truth.clone())
            .or_default()
            .entry(r.subgroup.clone())
            .or_default() += 1;
        if let Some(id) = &r.example_id {
            *id_counts.entry(id.as_str()).or_default() += 1;
        }
    }

    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push("dataset contains no records".to_owned());
    }
    if subgroups.len() == 1 {
        warnings.push(format!(
            "single subgroup '{}': all effect sizes undefined",
            subgroups[0]
        ));
    }
    let single_subgroup_classes: Vec<String> = if subgroups.len() > 1 {
        cell_counts
            .iter()
            .filter(|(_, groups)| groups.len() == 1)
            .map(|(class, _)| class.clone())
            .collect()
    } else {
        Vec::new()
    };
    for class in &single_subgroup_classes {
        let group = cell_counts[class].keys().next().expect("non-empty");
        warnings.push(format!(
            "class '{class}' only present in subgroup '{group}': effect size undefined"
        ));
    }
    let mut duplicate_ids: Vec<String> = id_counts
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(id, _)| id.to_owned())
        .collect();
    duplicate_ids.sort();
    if !duplicate_ids.is_empty() {
        warnings.push(format!("{} duplicate example ids", duplicate_ids.len()));
    }

    ValidationReport {
        n_records: records.len(),
        subgroups,
        cell_counts,
        single_subgroup_classes,
        duplicate_ids,
        warnings,
    }
}
