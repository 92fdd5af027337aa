//! Data model for response logs: items, conditions, records, and cells.
//!
//! Ingests JSON-lines or CSV record files, validates a run against the
//! pre-registered conformance rules (parse-failure rate, key uniqueness,
//! item coverage), and partitions records into the aligned per-cell arrays
//! the statistics modules consume. Positions are 0-based integers internally;
//! option letters A-J exist only at the ingest/report boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{letter_position, position_letter, OPTION_COUNT};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown condition label {0:?}")]
    UnknownCondition(String),
    #[error("unknown model id {0:?}")]
    UnknownModel(String),
    #[error("duplicate record key ({model}, {condition}, {item_id})")]
    DuplicateKey {
        model: String,
        condition: String,
        item_id: String,
    },
    #[error("invalid condition spec {label:?}: {reason}")]
    InvalidCondition { label: String, reason: String },
    #[error("invalid item {item_id:?}: {reason}")]
    InvalidItem { item_id: String, reason: String },
    #[error("unreadable source: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown record format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
}

/// One multiple-choice item: identity, stratum, and where the key sits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRef {
    pub item_id: String,
    pub domain: String,
    pub option_count: usize,
    pub correct_position: usize,
}

impl ItemRef {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.option_count == 0 {
            return Err(CorpusError::InvalidItem {
                item_id: self.item_id.clone(),
                reason: "option_count must be positive".into(),
            });
        }
        if self.correct_position >= self.option_count {
            return Err(CorpusError::InvalidItem {
                item_id: self.item_id.clone(),
                reason: format!(
                    "correct_position {} out of range for {} options",
                    self.correct_position, self.option_count
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Honest,
    Adversarial,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentAnswer {
    No,
    Partial,
    Yes,
}

/// Whether a null baseline still presents real item content.
///
/// Content-absent nulls are positive controls for the distributional screen;
/// content-present nulls are the population over which false positives count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullContent {
    ContentPresent,
    ContentAbsent,
}

/// Operational structure of one condition in the instruction ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub label: String,
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder_rank: Option<u32>,
    pub steps: u32,
    pub latent_answer: LatentAnswer,
    pub self_referential: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_content: Option<NullContent>,
}

impl ConditionSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidCondition {
            label: self.label.clone(),
            reason: reason.into(),
        };
        match self.kind {
            ConditionKind::Adversarial if self.ladder_rank.is_none() => {
                Err(invalid("adversarial condition requires ladder_rank"))
            }
            ConditionKind::Honest | ConditionKind::Null if self.ladder_rank.is_some() => {
                Err(invalid("ladder_rank only allowed on adversarial conditions"))
            }
            ConditionKind::Null if self.null_content.is_none() => {
                Err(invalid("null condition requires null_content tag"))
            }
            _ if self.kind != ConditionKind::Null && self.null_content.is_some() => {
                Err(invalid("null_content only allowed on null conditions"))
            }
            _ => Ok(()),
        }
    }
}

/// Registry of the conditions participating in a run, with label lookup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionRegistry {
    specs: Vec<ConditionSpec>,
}

impl ConditionRegistry {
    /// Exactly one honest condition is required per run.
    pub fn new(specs: Vec<ConditionSpec>) -> Result<Self, CorpusError> {
        for spec in &specs {
            spec.validate()?;
        }
        let honest = specs
            .iter()
            .filter(|s| s.kind == ConditionKind::Honest)
            .count();
        if honest != 1 {
            return Err(CorpusError::InvalidCondition {
                label: "<registry>".into(),
                reason: format!("expected exactly one honest condition, found {honest}"),
            });
        }
        let mut seen = BTreeSet::new();
        for spec in &specs {
            if !seen.insert(spec.label.clone()) {
                return Err(CorpusError::InvalidCondition {
                    label: spec.label.clone(),
                    reason: "duplicate condition label".into(),
                });
            }
        }
        Ok(Self { specs })
    }

    pub fn get(&self, label: &str) -> Option<&ConditionSpec> {
        self.specs.iter().find(|s| s.label == label)
    }

    pub fn require(&self, label: &str) -> Result<&ConditionSpec, CorpusError> {
        self.get(label)
            .ok_or_else(|| CorpusError::UnknownCondition(label.to_string()))
    }

    pub fn honest(&self) -> &ConditionSpec {
        self.specs
            .iter()
            .find(|s| s.kind == ConditionKind::Honest)
            .expect("registry invariant: one honest condition")
    }

    /// Adversarial conditions in ladder order.
    pub fn ladder(&self) -> Vec<&ConditionSpec> {
        let mut ladder: Vec<&ConditionSpec> = self
            .specs
            .iter()
            .filter(|s| s.kind == ConditionKind::Adversarial)
            .collect();
        ladder.sort_by_key(|s| s.ladder_rank);
        ladder
    }

    pub fn nulls(&self) -> Vec<&ConditionSpec> {
        self.specs
            .iter()
            .filter(|s| s.kind == ConditionKind::Null)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConditionSpec> {
        self.specs.iter()
    }
}

/// The default registry: honest baseline H, the six-step adversarial ladder
/// S1-S6, and the four null baselines N1-N4.
pub fn default_registry() -> ConditionRegistry {
    use ConditionKind::*;
    use LatentAnswer::*;
    let spec = |label: &str,
                kind: ConditionKind,
                rank: Option<u32>,
                steps: u32,
                latent: LatentAnswer,
                self_ref: bool,
                null_content: Option<NullContent>| ConditionSpec {
        label: label.into(),
        kind,
        ladder_rank: rank,
        steps,
        latent_answer: latent,
        self_referential: self_ref,
        null_content,
    };
    ConditionRegistry::new(vec![
        spec("H", Honest, None, 1, No, false, None),
        spec("S1", Adversarial, Some(1), 1, No, false, None),
        spec("S2", Adversarial, Some(2), 1, No, false, None),
        spec("S3", Adversarial, Some(3), 1, Partial, true, None),
        spec("S4", Adversarial, Some(4), 1, Yes, false, None),
        spec("S5", Adversarial, Some(5), 2, Yes, true, None),
        spec("S6", Adversarial, Some(6), 1, Yes, false, None),
        spec("N1", Null, None, 1, No, false, Some(NullContent::ContentAbsent)),
        spec("N2", Null, None, 1, No, false, Some(NullContent::ContentPresent)),
        spec("N3", Null, None, 1, No, false, Some(NullContent::ContentAbsent)),
        spec("N4", Null, None, 1, No, false, Some(NullContent::ContentPresent)),
    ])
    .expect("default registry is valid")
}

/// One trial. `chosen_position == None` records a parse failure; parse
/// failures stay in the data as first-class missing values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRecord {
    pub model_id: String,
    pub condition: String,
    pub item: ItemRef,
    pub chosen_position: Option<usize>,
    pub raw_answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for RecordFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(RecordFormat::Jsonl),
            "csv" => Ok(RecordFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// One skipped input line and why.
#[derive(Debug, Clone, Serialize)]
pub struct IngestIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestDiagnostics {
    pub lines_read: usize,
    pub records_ok: usize,
    pub issues: Vec<IngestIssue>,
}

/// Wire shape of one record line. Positions accept either an option letter
/// or a 0-based index; chosen_position may be null (parse failure).
#[derive(Debug, Deserialize)]
struct RawRecord {
    model: String,
    condition: String,
    item_id: String,
    domain: String,
    option_count: usize,
    correct_position: PositionValue,
    #[serde(default)]
    chosen_position: Option<PositionValue>,
    #[serde(default)]
    raw_answer: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PositionValue {
    Index(i64),
    Letter(String),
}

impl PositionValue {
    fn resolve(&self, option_count: usize) -> Result<usize, String> {
        let idx = match self {
            PositionValue::Index(i) => {
                if *i < 0 {
                    return Err(format!("negative position index {i}"));
                }
                *i as usize
            }
            PositionValue::Letter(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_digit() => (c as u8 - b'0') as usize,
                    (Some(c), None) => letter_position(c)
                        .ok_or_else(|| format!("unrecognised option letter {s:?}"))?,
                    _ if s.chars().all(|c| c.is_ascii_digit()) => s
                        .parse::<usize>()
                        .map_err(|_| format!("unparseable position {s:?}"))?,
                    _ => return Err(format!("unparseable position {s:?}")),
                }
            }
        };
        if idx >= option_count {
            return Err(format!(
                "position {idx} out of range for {option_count} options"
            ));
        }
        Ok(idx)
    }
}

impl RawRecord {
    fn into_record(self, line: usize) -> Result<ResponseRecord, IngestIssue> {
        let issue = |message: String| IngestIssue { line, message };
        let correct = self
            .correct_position
            .resolve(self.option_count)
            .map_err(|m| issue(format!("correct_position: {m}")))?;
        let chosen = match &self.chosen_position {
            None => None,
            Some(v) => Some(
                v.resolve(self.option_count)
                    .map_err(|m| issue(format!("chosen_position: {m}")))?,
            ),
        };
        let item = ItemRef {
            item_id: self.item_id,
            domain: self.domain,
            option_count: self.option_count,
            correct_position: correct,
        };
        item.validate()
            .map_err(|e| issue(e.to_string()))?;
        Ok(ResponseRecord {
            model_id: self.model,
            condition: self.condition,
            item,
            chosen_position: chosen,
            raw_answer: self.raw_answer,
        })
    }
}

/// Reads records from a byte stream. Malformed lines become diagnostics with
/// line numbers; ingest continues past them.
pub fn ingest_records<R: Read>(
    source: R,
    format: RecordFormat,
) -> Result<(Vec<ResponseRecord>, IngestDiagnostics), CorpusError> {
    match format {
        RecordFormat::Jsonl => ingest_jsonl(source),
        RecordFormat::Csv => ingest_csv(source),
    }
}

fn ingest_jsonl<R: Read>(
    source: R,
) -> Result<(Vec<ResponseRecord>, IngestDiagnostics), CorpusError> {
    let reader = BufReader::new(source);
    let mut records = Vec::new();
    let mut diag = IngestDiagnostics::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        diag.lines_read += 1;
        match serde_json::from_str::<RawRecord>(&text) {
            Ok(raw) => match raw.into_record(line_no) {
                Ok(rec) => {
                    records.push(rec);
                    diag.records_ok += 1;
                }
                Err(issue) => diag.issues.push(issue),
            },
            Err(e) => diag.issues.push(IngestIssue {
                line: line_no,
                message: format!("malformed json: {e}"),
            }),
        }
    }
    Ok((records, diag))
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    model: String,
    condition: String,
    item_id: String,
    domain: String,
    option_count: usize,
    correct_position: String,
    #[serde(default)]
    chosen_position: String,
    #[serde(default)]
    raw_answer: String,
}

fn ingest_csv<R: Read>(
    source: R,
) -> Result<(Vec<ResponseRecord>, IngestDiagnostics), CorpusError> {
    let mut reader = csv::Reader::from_reader(source);
    let mut records = Vec::new();
    let mut diag = IngestDiagnostics::default();
    for (idx, row) in reader.deserialize::<CsvRecord>().enumerate() {
        let line_no = idx + 2; // header is line 1
        diag.lines_read += 1;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                diag.issues.push(IngestIssue {
                    line: line_no,
                    message: format!("malformed csv row: {e}"),
                });
                continue;
            }
        };
        let raw = RawRecord {
            model: row.model,
            condition: row.condition,
            item_id: row.item_id,
            domain: row.domain,
            option_count: row.option_count,
            correct_position: PositionValue::Letter(row.correct_position),
            chosen_position: if row.chosen_position.is_empty() {
                None
            } else {
                Some(PositionValue::Letter(row.chosen_position))
            },
            raw_answer: if row.raw_answer.is_empty() {
                None
            } else {
                Some(row.raw_answer)
            },
        };
        match raw.into_record(line_no) {
            Ok(rec) => {
                records.push(rec);
                diag.records_ok += 1;
            }
            Err(issue) => diag.issues.push(issue),
        }
    }
    Ok((records, diag))
}

#[derive(Serialize)]
struct RecordOut<'a> {
    model: &'a str,
    condition: &'a str,
    item_id: &'a str,
    domain: &'a str,
    option_count: usize,
    correct_position: String,
    chosen_position: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw_answer: Option<&'a str>,
}

fn record_out(record: &ResponseRecord) -> RecordOut<'_> {
    RecordOut {
        model: &record.model_id,
        condition: &record.condition,
        item_id: &record.item.item_id,
        domain: &record.item.domain,
        option_count: record.item.option_count,
        correct_position: position_letter(record.item.correct_position).to_string(),
        chosen_position: record.chosen_position.map(|p| position_letter(p).to_string()),
        raw_answer: record.raw_answer.as_deref(),
    }
}

/// Canonical JSON-lines emission; `ingest(emit(records))` round-trips.
pub fn write_records_jsonl<W: Write>(
    mut sink: W,
    records: &[ResponseRecord],
) -> Result<(), CorpusError> {
    for record in records {
        serde_json::to_writer(&mut sink, &record_out(record))
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Canonical CSV emission with the same column names as the JSONL keys.
pub fn write_records_csv<W: Write>(
    sink: W,
    records: &[ResponseRecord],
) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record([
            "model",
            "condition",
            "item_id",
            "domain",
            "option_count",
            "correct_position",
            "chosen_position",
            "raw_answer",
        ])
        .map_err(csv_io)?;
    for record in records {
        let out = record_out(record);
        writer
            .write_record([
                out.model,
                out.condition,
                out.item_id,
                out.domain,
                &out.option_count.to_string(),
                &out.correct_position,
                out.chosen_position.as_deref().unwrap_or(""),
                out.raw_answer.unwrap_or(""),
            ])
            .map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

/// Reads an item bank (JSON-lines of ItemRef fields, positions as letters or
/// indices).
pub fn read_item_bank<R: Read>(source: R) -> Result<Vec<ItemRef>, CorpusError> {
    #[derive(Deserialize)]
    struct RawItem {
        item_id: String,
        domain: String,
        option_count: usize,
        correct_position: PositionValue,
    }
    let reader = BufReader::new(source);
    let mut items = Vec::new();
    for line in reader.lines() {
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawItem = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let correct = raw
            .correct_position
            .resolve(raw.option_count)
            .map_err(|reason| CorpusError::InvalidItem {
                item_id: raw.item_id.clone(),
                reason,
            })?;
        let item = ItemRef {
            item_id: raw.item_id,
            domain: raw.domain,
            option_count: raw.option_count,
            correct_position: correct,
        };
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

/// Per-cell validation outcome.
#[derive(Debug, Clone, Serialize)]
pub struct CellValidation {
    pub model_id: String,
    pub condition: String,
    pub n_total: usize,
    pub n_parsed: usize,
    pub parse_fail_rate: f64,
    pub conforming: bool,
    /// Items covered elsewhere in the same condition but absent here.
    pub coverage_gaps: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub max_parse_fail_rate: f64,
    pub cells: Vec<CellValidation>,
    pub duplicate_keys: Vec<(String, String, String)>,
    pub unknown_conditions: Vec<String>,
    pub nonconforming_items: Vec<String>,
    pub conforming: bool,
}

/// Validates a run. Always returns a report; conformance is a flag, reached
/// iff every cell's parse-failure rate is within the threshold and no
/// duplicate (model, condition, item) keys exist.
pub fn validate_run(
    records: &[ResponseRecord],
    registry: &ConditionRegistry,
    max_parse_fail_rate: f64,
) -> ValidationReport {
    let mut cells: BTreeMap<(String, String), (usize, usize, BTreeSet<String>)> = BTreeMap::new();
    let mut seen_keys: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut duplicates = Vec::new();
    let mut unknown_conditions = BTreeSet::new();
    let mut nonconforming_items = BTreeSet::new();

    for record in records {
        if registry.get(&record.condition).is_none() {
            unknown_conditions.insert(record.condition.clone());
        }
        if record.item.option_count != OPTION_COUNT {
            nonconforming_items.insert(record.item.item_id.clone());
        }
        let key = (
            record.model_id.clone(),
            record.condition.clone(),
            record.item.item_id.clone(),
        );
        if !seen_keys.insert(key.clone()) {
            duplicates.push(key.clone());
        }
        let entry = cells
            .entry((record.model_id.clone(), record.condition.clone()))
            .or_insert((0, 0, BTreeSet::new()));
        entry.0 += 1;
        if record.chosen_position.is_some() {
            entry.1 += 1;
        }
        entry.2.insert(record.item.item_id.clone());
    }

    // Coverage target per condition: the union of items any model covers.
    let mut condition_items: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for ((_, condition), (_, _, items)) in &cells {
        condition_items
            .entry(condition.clone())
            .or_default()
            .extend(items.iter().cloned());
    }

    let mut cell_reports = Vec::new();
    let mut all_rates_ok = true;
    for ((model_id, condition), (n_total, n_parsed, items)) in &cells {
        let rate = if *n_total == 0 {
            0.0
        } else {
            (*n_total - *n_parsed) as f64 / *n_total as f64
        };
        let conforming = rate <= max_parse_fail_rate;
        all_rates_ok &= conforming;
        let gaps: Vec<String> = condition_items[condition]
            .difference(items)
            .cloned()
            .collect();
        cell_reports.push(CellValidation {
            model_id: model_id.clone(),
            condition: condition.clone(),
            n_total: *n_total,
            n_parsed: *n_parsed,
            parse_fail_rate: rate,
            conforming,
            coverage_gaps: gaps,
        });
    }

    let conforming = all_rates_ok && duplicates.is_empty();
    ValidationReport {
        max_parse_fail_rate,
        cells: cell_reports,
        duplicate_keys: duplicates,
        unknown_conditions: unknown_conditions.into_iter().collect(),
        nonconforming_items: nonconforming_items.into_iter().collect(),
        conforming,
    }
}

/// One aligned (item, correct, chosen) row of a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellEntry {
    pub item_id: String,
    pub correct_position: usize,
    pub chosen_position: Option<usize>,
}

impl CellEntry {
    /// Correctness of a parsed response; `None` for parse failures.
    pub fn correct(&self) -> Option<bool> {
        self.chosen_position.map(|c| c == self.correct_position)
    }
}

/// The aligned response vector for one model x condition pair. Entries are
/// sorted by item_id, so cell construction is deterministic regardless of
/// input record order. Parse failures stay as missing entries: excluded from
/// distributional statistics, counted in `n_total`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub model_id: String,
    pub condition: String,
    pub entries: Vec<CellEntry>,
    pub n_total: usize,
    pub n_parsed: usize,
}

impl Cell {
    pub fn parsed_entries(&self) -> impl Iterator<Item = &CellEntry> {
        self.entries.iter().filter(|e| e.chosen_position.is_some())
    }
}

/// Builds the aligned cell for one (model, condition) pair.
pub fn partition_cells(
    records: &[ResponseRecord],
    registry: &ConditionRegistry,
    model_id: &str,
    condition: &str,
) -> Result<Cell, CorpusError> {
    registry.require(condition)?;
    if !records.iter().any(|r| r.model_id == model_id) {
        return Err(CorpusError::UnknownModel(model_id.to_string()));
    }
    let mut entries: Vec<CellEntry> = records
        .iter()
        .filter(|r| r.model_id == model_id && r.condition == condition)
        .map(|r| CellEntry {
            item_id: r.item.item_id.clone(),
            correct_position: r.item.correct_position,
            chosen_position: r.chosen_position,
        })
        .collect();
    entries.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    for pair in entries.windows(2) {
        if pair[0].item_id == pair[1].item_id {
            return Err(CorpusError::DuplicateKey {
                model: model_id.to_string(),
                condition: condition.to_string(),
                item_id: pair[0].item_id.clone(),
            });
        }
    }
    let n_total = entries.len();
    let n_parsed = entries.iter().filter(|e| e.chosen_position.is_some()).count();
    Ok(Cell {
        model_id: model_id.to_string(),
        condition: condition.to_string(),
        entries,
        n_total,
        n_parsed,
    })
}

/// Distinct model ids present in a record collection, sorted.
pub fn model_ids(records: &[ResponseRecord]) -> Vec<String> {
    let set: BTreeSet<String> = records.iter().map(|r| r.model_id.clone()).collect();
    set.into_iter().collect()
}

/// Distinct condition labels present in a record collection, sorted.
pub fn condition_labels(records: &[ResponseRecord]) -> Vec<String> {
    let set: BTreeSet<String> = records.iter().map(|r| r.condition.clone()).collect();
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_line(model: &str, cond: &str, item: &str, correct: &str, chosen: &str) -> String {
        format!(
            r#"{{"model":"{model}","condition":"{cond}","item_id":"{item}","domain":"physics","option_count":10,"correct_position":"{correct}","chosen_position":{chosen}}}"#
        )
    }

    #[test]
    fn ingest_maps_letters_to_indices() {
        let line = record_line("m", "H", "q1", "B", "\"E\"");
        let (records, diag) = ingest_records(line.as_bytes(), RecordFormat::Jsonl).unwrap();
        assert_eq!(diag.records_ok, 1);
        assert!(diag.issues.is_empty());
        assert_eq!(records[0].chosen_position, Some(4));
        assert_eq!(records[0].item.correct_position, 1);
    }

    #[test]
    fn ingest_flags_out_of_range_letter() {
        let line = record_line("m", "H", "q1", "B", "\"K\"");
        let (records, diag) = ingest_records(line.as_bytes(), RecordFormat::Jsonl).unwrap();
        assert!(records.is_empty());
        assert_eq!(diag.issues.len(), 1);
        assert_eq!(diag.issues[0].line, 1);
        assert!(diag.issues[0].message.contains("chosen_position"));
    }

    #[test]
    fn ingest_keeps_parse_failures_as_missing() {
        let line = record_line("m", "H", "q1", "B", "null");
        let (records, diag) = ingest_records(line.as_bytes(), RecordFormat::Jsonl).unwrap();
        assert_eq!(diag.records_ok, 1);
        assert_eq!(records[0].chosen_position, None);
    }

    #[test]
    fn ingest_continues_past_malformed_lines() {
        let text = format!(
            "{}\nnot json\n{}\n",
            record_line("m", "H", "q1", "A", "\"B\""),
            record_line("m", "H", "q2", "C", "\"D\"")
        );
        let (records, diag) = ingest_records(text.as_bytes(), RecordFormat::Jsonl).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(diag.issues.len(), 1);
        assert_eq!(diag.issues[0].line, 2);
    }

    #[test]
    fn jsonl_round_trips() {
        let text = format!(
            "{}\n{}\n",
            record_line("m", "H", "q1", "A", "\"B\""),
            record_line("m", "S1", "q2", "C", "null")
        );
        let (records, _) = ingest_records(text.as_bytes(), RecordFormat::Jsonl).unwrap();
        let mut out = Vec::new();
        write_records_jsonl(&mut out, &records).unwrap();
        let (again, diag) = ingest_records(out.as_slice(), RecordFormat::Jsonl).unwrap();
        assert_eq!(records, again);
        assert!(diag.issues.is_empty());
    }

    #[test]
    fn csv_round_trips() {
        let text = format!(
            "{}\n{}\n",
            record_line("m", "H", "q1", "A", "\"B\""),
            record_line("m", "S1", "q2", "C", "null")
        );
        let (records, _) = ingest_records(text.as_bytes(), RecordFormat::Jsonl).unwrap();
        let mut out = Vec::new();
        write_records_csv(&mut out, &records).unwrap();
        let (again, diag) = ingest_records(out.as_slice(), RecordFormat::Csv).unwrap();
        assert_eq!(records, again);
        assert!(diag.issues.is_empty());
    }

    fn synthetic_records(n_items: usize, fails: usize) -> Vec<ResponseRecord> {
        (0..n_items)
            .map(|i| ResponseRecord {
                model_id: "m".into(),
                condition: "H".into(),
                item: ItemRef {
                    item_id: format!("q{i:04}"),
                    domain: "law".into(),
                    option_count: 10,
                    correct_position: i % 10,
                },
                chosen_position: if i < fails { None } else { Some((i + 1) % 10) },
                raw_answer: None,
            })
            .collect()
    }

    #[test]
    fn validation_rates_against_threshold() {
        let registry = default_registry();
        let records = synthetic_records(2000, 3);
        let report = validate_run(&records, &registry, 0.05);
        assert!((report.cells[0].parse_fail_rate - 0.0015).abs() < 1e-12);
        assert!(report.conforming);

        let records = synthetic_records(2000, 150);
        let report = validate_run(&records, &registry, 0.05);
        assert!((report.cells[0].parse_fail_rate - 0.075).abs() < 1e-12);
        assert!(!report.conforming);
    }

    #[test]
    fn validation_names_duplicate_triples() {
        let registry = default_registry();
        let mut records = synthetic_records(5, 0);
        records.push(records[0].clone());
        let report = validate_run(&records, &registry, 0.05);
        assert!(!report.conforming);
        assert_eq!(
            report.duplicate_keys,
            vec![("m".into(), "H".into(), "q0000".into())]
        );
    }

    #[test]
    fn partition_counts_and_errors() {
        let registry = default_registry();
        let records = synthetic_records(2000, 3);
        let cell = partition_cells(&records, &registry, "m", "H").unwrap();
        assert_eq!(cell.n_total, 2000);
        assert_eq!(cell.n_parsed, 1997);
        assert!(matches!(
            partition_cells(&records, &registry, "m", "S9"),
            Err(CorpusError::UnknownCondition(_))
        ));
        assert!(matches!(
            partition_cells(&records, &registry, "nope", "H"),
            Err(CorpusError::UnknownModel(_))
        ));
    }

    #[test]
    fn cell_ordering_is_input_order_independent() {
        let registry = default_registry();
        let mut records = synthetic_records(50, 0);
        let cell_a = partition_cells(&records, &registry, "m", "H").unwrap();
        records.reverse();
        let cell_b = partition_cells(&records, &registry, "m", "H").unwrap();
        assert_eq!(cell_a, cell_b);
    }

    #[test]
    fn cell_totals_sum_to_ingested_count() {
        let registry = default_registry();
        let mut records = synthetic_records(100, 5);
        for r in records.iter_mut().skip(40) {
            r.condition = "S2".into();
        }
        for r in records.iter_mut().skip(70) {
            r.model_id = "m2".into();
        }
        let report = validate_run(&records, &registry, 0.05);
        let total: usize = report.cells.iter().map(|c| c.n_total).sum();
        assert_eq!(total, records.len());
    }

    #[test]
    fn registry_requires_single_honest() {
        let spec = ConditionSpec {
            label: "A".into(),
            kind: ConditionKind::Adversarial,
            ladder_rank: Some(1),
            steps: 1,
            latent_answer: LatentAnswer::No,
            self_referential: false,
            null_content: None,
        };
        assert!(ConditionRegistry::new(vec![spec]).is_err());
    }

    #[test]
    fn ladder_rank_required_iff_adversarial() {
        let mut spec = ConditionSpec {
            label: "X".into(),
            kind: ConditionKind::Adversarial,
            ladder_rank: None,
            steps: 1,
            latent_answer: LatentAnswer::No,
            self_referential: false,
            null_content: None,
        };
        assert!(spec.validate().is_err());
        spec.ladder_rank = Some(1);
        assert!(spec.validate().is_ok());
        spec.kind = ConditionKind::Honest;
        assert!(spec.validate().is_err());
    }
}
