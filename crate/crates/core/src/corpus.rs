//! Benchmark datasets in the id / document / keyphrases JSONL shape.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{normalize_text, word_count};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: field `{field}` has the wrong type: {expected}")]
    WrongType {
        line: usize,
        field: String,
        expected: &'static str,
    },
    #[error("line {line}: document `{id}` has empty text")]
    EmptyDocument { line: usize, id: String },
    #[error("line {line}: duplicate document id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: document is a token array but token joining is disabled")]
    TokenizedDocument { line: usize },
    #[error("invalid field map: {0}")]
    FieldMap(String),
    #[error("cannot compute statistics of an empty split")]
    EmptySplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub token_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            token_count: word_count(&text),
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub doc_id: String,
    pub keyphrases: Vec<String>,
}

impl GroundTruth {
    /// Trims entries, drops empty ones and keeps only the first phrase of
    /// each normalized form.
    pub fn new(doc_id: impl Into<String>, phrases: impl IntoIterator<Item = String>) -> Self {
        let mut seen = HashSet::new();
        let keyphrases = phrases
            .into_iter()
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .filter(|p| seen.insert(normalize_text(p)))
            .collect();
        GroundTruth {
            doc_id: doc_id.into(),
            keyphrases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub document: Document,
    pub gold: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub entries: Vec<Entry>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Source field names for the three required fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub document: String,
    pub keyphrases: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            id: "id".into(),
            document: "document".into(),
            keyphrases: "keyphrases".into(),
        }
    }
}

impl FieldMap {
    /// Mapping for the HuggingFace `midas/*` distributions. Their
    /// `abstractive_keyphrases` field is deliberately left unmapped.
    pub fn midas() -> Self {
        FieldMap {
            keyphrases: "extractive_keyphrases".into(),
            ..FieldMap::default()
        }
    }

    /// Parses either a preset name (`default`, `midas`) or a JSON object
    /// renaming any of `id`, `document`, `keyphrases`, e.g.
    /// `{"keyphrases": "extractive_keyphrases"}`.
    pub fn parse(spec: &str) -> Result<Self, CorpusError> {
        match spec.trim() {
            "" | "default" => return Ok(FieldMap::default()),
            "midas" => return Ok(FieldMap::midas()),
            _ => {}
        }
        let raw: BTreeMap<String, String> =
            serde_json::from_str(spec).map_err(|e| CorpusError::FieldMap(e.to_string()))?;
        let mut map = FieldMap::default();
        for (target, source) in raw {
            match target.as_str() {
                "id" => map.id = source,
                "document" => map.document = source,
                "keyphrases" => map.keyphrases = source,
                other => return Err(CorpusError::FieldMap(format!("unknown target field `{other}`"))),
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub field_map: FieldMap,
    pub join_tokens: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            field_map: FieldMap::default(),
            join_tokens: true,
        }
    }
}

/// Loads a JSONL split. Entries without gold keyphrases are dropped; file
/// order is preserved. The split is named after the file stem unless a
/// name is given.
pub fn load_split(path: &Path, options: &LoadOptions) -> Result<DatasetSplit, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_split(&name, &content, options)
}

pub fn parse_split(name: &str, content: &str, options: &LoadOptions) -> Result<DatasetSplit, CorpusError> {
    let fields = &options.field_map;
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| CorpusError::MalformedJson {
            line,
            message: e.to_string(),
        })?;
        let get = |field: &str| {
            value.get(field).ok_or_else(|| CorpusError::MissingField {
                line,
                field: field.to_string(),
            })
        };
        let id = match get(&fields.id)? {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => {
                return Err(CorpusError::WrongType {
                    line,
                    field: fields.id.clone(),
                    expected: "string or number",
                })
            }
        };
        let text = match get(&fields.document)? {
            Value::String(s) => s.clone(),
            Value::Array(tokens) if options.join_tokens => string_array(tokens, line, &fields.document)?.join(" "),
            Value::Array(_) => return Err(CorpusError::TokenizedDocument { line }),
            _ => {
                return Err(CorpusError::WrongType {
                    line,
                    field: fields.document.clone(),
                    expected: "string or array of strings",
                })
            }
        };
        let phrases = match get(&fields.keyphrases)? {
            Value::Array(items) => string_array(items, line, &fields.keyphrases)?,
            _ => {
                return Err(CorpusError::WrongType {
                    line,
                    field: fields.keyphrases.clone(),
                    expected: "array of strings",
                })
            }
        };
        let gold = GroundTruth::new(id.clone(), phrases);
        if gold.keyphrases.is_empty() {
            continue;
        }
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyDocument { line, id });
        }
        if !ids.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line, id });
        }
        entries.push(Entry {
            document: Document::new(id, text),
            gold,
        });
    }
    Ok(DatasetSplit {
        name: name.to_string(),
        entries,
    })
}

fn string_array(items: &[Value], line: usize, field: &str) -> Result<Vec<String>, CorpusError> {
    items
        .iter()
        .map(|v| {
            v.as_str().map(str::to_string).ok_or_else(|| CorpusError::WrongType {
                line,
                field: field.to_string(),
                expected: "array of strings",
            })
        })
        .collect()
}

/// Corpus statistics in the layout of the usual benchmark summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub n_doc: usize,
    pub avg_doc_len: f64,
    pub max_doc_len: usize,
    pub max_con: usize,
    pub min_con: usize,
    pub avg_con: f64,
    /// Percentage of gold phrases with 1, 2, 3, 4 and 5+ words.
    pub length_dist: [f64; 5],
}

pub fn compute_stats(split: &DatasetSplit) -> Result<DatasetStats, CorpusError> {
    if split.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    let n = split.len();
    let doc_lens: Vec<usize> = split.entries.iter().map(|e| e.document.token_count).collect();
    let con_counts: Vec<usize> = split.entries.iter().map(|e| e.gold.keyphrases.len()).collect();
    let mut buckets = [0usize; 5];
    for entry in &split.entries {
        for phrase in &entry.gold.keyphrases {
            let words = word_count(phrase).max(1);
            buckets[words.min(5) - 1] += 1;
        }
    }
    let total_phrases: usize = buckets.iter().sum();
    let length_dist = buckets.map(|b| 100.0 * b as f64 / total_phrases as f64);
    Ok(DatasetStats {
        name: split.name.clone(),
        n_doc: n,
        avg_doc_len: doc_lens.iter().sum::<usize>() as f64 / n as f64,
        max_doc_len: doc_lens.iter().copied().max().unwrap_or(0),
        max_con: con_counts.iter().copied().max().unwrap_or(0),
        min_con: con_counts.iter().copied().min().unwrap_or(0),
        avg_con: con_counts.iter().sum::<usize>() as f64 / n as f64,
        length_dist,
    })
}

impl DatasetStats {
    const HEADER: [&'static str; 12] = [
        "Dataset", "N_doc", "Avg_doc", "Max_doc", "Max_con", "Min_con", "Avg_con", "1", "2", "3", "4", ">=5",
    ];

    fn cells(&self) -> Vec<String> {
        let mut cells = vec![
            self.name.clone(),
            self.n_doc.to_string(),
            format!("{:.2}", self.avg_doc_len),
            self.max_doc_len.to_string(),
            self.max_con.to_string(),
            self.min_con.to_string(),
            format!("{:.2}", self.avg_con),
        ];
        cells.extend(self.length_dist.iter().map(|p| format!("{p:.1}")));
        cells
    }

    /// Header plus one row, columns padded to a common width.
    pub fn to_table(&self) -> String {
        crate::harness::report::aligned_table(&Self::HEADER.map(String::from), &[self.cells()])
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(Self::HEADER).expect("in-memory write");
        wtr.write_record(self.cells()).expect("in-memory write");
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}
