//! Classical extractors that need no model: TF-IDF over n-gram candidates
//! and FirstPhrases (earliest candidates first).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetSplit, Document};
use crate::extraction::{ExtractedConcept, ExtractionResult};
use crate::text::normalize_text;

pub const DEFAULT_TOP_N: usize = 10;
pub const MAX_NGRAM: usize = 3;

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("idf table is empty")]
    EmptyIdf,
    #[error("idf table {path}: {message}")]
    IdfFile { path: String, message: String },
}

/// The bundled English stopword list.
pub fn english_stopwords() -> HashSet<String> {
    STOPWORDS_EN
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Word<'a> {
    text: &'a str,
    lower: String,
    start: usize,
    end: usize,
    /// Something other than whitespace separates this word from the previous one.
    break_before: bool,
}

/// Words are alphanumeric runs that may contain single `-` or `'`
/// between alphanumerics.
fn words(text: &str) -> Vec<Word<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut gap_has_punct = false;
    while i < chars.len() {
        let (start, c) = chars[i];
        if !c.is_alphanumeric() {
            if !c.is_whitespace() {
                gap_has_punct = true;
            }
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if c.is_alphanumeric() {
                j += 1;
            } else if (c == '-' || c == '\'') && chars.get(j + 1).is_some_and(|n| n.1.is_alphanumeric()) {
                j += 2;
            } else {
                break;
            }
        }
        let end = chars.get(j).map_or(text.len(), |c| c.0);
        let word = &text[start..end];
        out.push(Word {
            text: word,
            lower: word.to_lowercase(),
            start,
            end,
            break_before: gap_has_punct,
        });
        gap_has_punct = false;
        i = j;
    }
    out
}

fn is_content_token(w: &Word<'_>) -> bool {
    w.text.chars().count() > 1 && !w.text.chars().all(|c| c.is_numeric())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePhrase {
    pub surface: String,
    /// Character offset of the first occurrence.
    pub position: usize,
    pub score: f64,
    pub tokens: Vec<String>,
}

/// Contiguous 1 to 3 word n-grams that do not cross punctuation, have no
/// stopword at either end and no numeric or single-character word.
/// Deduplicated by normalized form, keeping the first occurrence.
pub fn generate_candidates(doc: &Document, stopwords: &HashSet<String>) -> Vec<CandidatePhrase> {
    let ws = words(&doc.text);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for i in 0..ws.len() {
        for n in 1..=MAX_NGRAM.min(ws.len() - i) {
            let gram = &ws[i..i + n];
            if gram[1..].iter().any(|w| w.break_before) {
                break;
            }
            if !gram.iter().all(is_content_token) {
                break;
            }
            if stopwords.contains(&gram[0].lower) {
                break;
            }
            if stopwords.contains(&gram[n - 1].lower) {
                continue;
            }
            let surface = &doc.text[gram[0].start..gram[n - 1].end];
            if !seen.insert(normalize_text(surface)) {
                continue;
            }
            out.push(CandidatePhrase {
                surface: surface.to_string(),
                position: doc.text[..gram[0].start].chars().count(),
                score: 0.0,
                tokens: gram.iter().map(|w| w.lower.clone()).collect(),
            });
        }
    }
    out
}

/// Document frequencies from a training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub n_docs: usize,
    pub df: BTreeMap<String, usize>,
}

impl IdfTable {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut table = IdfTable::default();
        for doc in docs {
            table.n_docs += 1;
            let terms: HashSet<String> = words(&doc.text).into_iter().map(|w| w.lower).collect();
            for t in terms {
                *table.df.entry(t).or_insert(0) += 1;
            }
        }
        table
    }

    pub fn from_split(split: &DatasetSplit) -> Self {
        Self::build(split.entries.iter().map(|e| &e.document))
    }

    pub fn is_empty(&self) -> bool {
        self.n_docs == 0
    }

    /// `ln((N + 1) / (df + 1)) + 1`; unseen terms have df 0.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let err = |message: String| BaselineError::IdfFile {
            path: path.display().to_string(),
            message,
        };
        let json = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let err = |message: String| BaselineError::IdfFile {
            path: path.display().to_string(),
            message,
        };
        let content = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&content).map_err(|e| err(e.to_string()))
    }
}

fn to_result(doc: &Document, ranked: Vec<(CandidatePhrase, f64)>) -> ExtractionResult {
    let mut raw = String::new();
    let mut offset = 0;
    let mut concepts = Vec::with_capacity(ranked.len());
    for (i, (c, confidence)) in ranked.into_iter().enumerate() {
        if i > 0 {
            raw.push_str(", ");
            offset += 2;
        }
        let len = c.surface.chars().count();
        raw.push_str(&c.surface);
        concepts.push(ExtractedConcept {
            normalized: normalize_text(&c.surface),
            surface: c.surface,
            confidence: Some(confidence),
            completion_span: (offset, offset + len),
        });
        offset += len;
    }
    ExtractionResult {
        doc_id: doc.id.clone(),
        concepts,
        raw_completion: raw,
    }
}

/// Candidates scored by the mean tf-idf of their words, best `top_n`
/// returned with min-max normalized scores as confidences.
pub fn tfidf_extract(
    doc: &Document,
    idf: &IdfTable,
    stopwords: &HashSet<String>,
    top_n: usize,
) -> Result<ExtractionResult, BaselineError> {
    if idf.is_empty() {
        return Err(BaselineError::EmptyIdf);
    }
    let mut tf: HashMap<String, usize> = HashMap::new();
    for w in words(&doc.text) {
        *tf.entry(w.lower).or_insert(0) += 1;
    }
    let mut candidates = generate_candidates(doc, stopwords);
    for c in &mut candidates {
        let total: f64 = c.tokens.iter().map(|t| tf[t] as f64 * idf.idf(t)).sum();
        c.score = total / c.tokens.len() as f64;
    }
    let (lo, hi) = candidates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.score), hi.max(c.score))
        });
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.position.cmp(&b.position)));
    candidates.truncate(top_n);
    let ranked = candidates
        .into_iter()
        .map(|c| {
            let confidence = if hi > lo { (c.score - lo) / (hi - lo) } else { 1.0 };
            (c, confidence)
        })
        .collect();
    Ok(to_result(doc, ranked))
}

/// The first `top_n` candidates by position; confidence `1 - rank/(top_n+1)`.
pub fn first_phrases_extract(doc: &Document, stopwords: &HashSet<String>, top_n: usize) -> ExtractionResult {
    let mut candidates = generate_candidates(doc, stopwords);
    candidates.sort_by_key(|c| c.position);
    candidates.truncate(top_n);
    let ranked = candidates
        .into_iter()
        .enumerate()
        .map(|(rank, c)| (c, 1.0 - rank as f64 / (top_n as f64 + 1.0)))
        .collect();
    to_result(doc, ranked)
}
