//! Evaluation: exact-match precision/recall/F1 over all predictions and
//! Porter-stemmed P@k/R@k/F1@k over confidence-ranked predictions, averaged
//! per document.

mod porter;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_text;

pub use porter::porter_stem;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("phrase is empty after trimming")]
    EmptyPhrase,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("cannot aggregate an empty list of document scores")]
    NothingToAggregate,
}

/// Comparison key for predicted and gold phrases: lowercased, single-spaced.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedPhrase(String);

impl NormalizedPhrase {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormalizedPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn normalize(phrase: &str) -> Result<NormalizedPhrase, MetricsError> {
    let text = normalize_text(phrase);
    if text.is_empty() {
        return Err(MetricsError::EmptyPhrase);
    }
    Ok(NormalizedPhrase(text))
}

/// Stems every space-separated token of the phrase.
pub fn stem_phrase(phrase: &NormalizedPhrase) -> String {
    phrase.0.split(' ').map(porter_stem).collect::<Vec<_>>().join(" ")
}

/// Denominator used for R@k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallDenominator {
    /// `min(|gold|, k)`, the size of the gold list cut at k.
    #[default]
    GoldAtK,
    /// `|gold|`.
    FullGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, n_pred: usize, n_gold: usize) -> Self {
        let p = if n_pred == 0 { 0.0 } else { hits as f64 / n_pred as f64 };
        let r = if n_gold == 0 { 0.0 } else { hits as f64 / n_gold as f64 };
        Prf {
            p,
            r,
            f1: harmonic_mean(p, r),
        }
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Exact-match scores. Both sides are treated as sets; no stemming.
pub fn prf(predicted: &[NormalizedPhrase], gold: &[NormalizedPhrase]) -> Result<Prf, MetricsError> {
    let gold: HashSet<&NormalizedPhrase> = gold.iter().collect();
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let pred: HashSet<&NormalizedPhrase> = predicted.iter().collect();
    let hits = pred.intersection(&gold).count();
    Ok(Prf::from_counts(hits, pred.len(), gold.len()))
}

/// Scores the top `k` ranked predictions after stemming both sides.
pub fn prf_at_k(
    ranked: &[NormalizedPhrase],
    gold: &[NormalizedPhrase],
    k: usize,
    denominator: RecallDenominator,
) -> Result<Prf, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK);
    }
    let gold: HashSet<String> = gold.iter().map(stem_phrase).collect();
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let top: HashSet<String> = ranked.iter().take(k).map(stem_phrase).collect();
    let hits = top.intersection(&gold).count();
    let n_gold = match denominator {
        RecallDenominator::GoldAtK => gold.len().min(k),
        RecallDenominator::FullGold => gold.len(),
    };
    Ok(Prf::from_counts(hits, top.len(), n_gold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub p_at: BTreeMap<usize, f64>,
    pub r_at: BTreeMap<usize, f64>,
    pub f1_at: BTreeMap<usize, f64>,
    pub n_predicted: usize,
}

/// Scores one document. `ranked` must already be in confidence order.
pub fn score_document(
    doc_id: &str,
    ranked: &[NormalizedPhrase],
    gold: &[NormalizedPhrase],
    k_values: &[usize],
    denominator: RecallDenominator,
) -> Result<DocScore, MetricsError> {
    let exact = prf(ranked, gold)?;
    let mut score = DocScore {
        doc_id: doc_id.to_string(),
        p: exact.p,
        r: exact.r,
        f1: exact.f1,
        p_at: BTreeMap::new(),
        r_at: BTreeMap::new(),
        f1_at: BTreeMap::new(),
        n_predicted: ranked.iter().collect::<BTreeSet<_>>().len(),
    };
    for &k in k_values {
        let at = prf_at_k(ranked, gold, k, denominator)?;
        score.p_at.insert(k, at.p);
        score.r_at.insert(k, at.r);
        score.f1_at.insert(k, at.f1);
    }
    Ok(score)
}

/// Macro averages over documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub p_at: BTreeMap<usize, f64>,
    pub r_at: BTreeMap<usize, f64>,
    pub f1_at: BTreeMap<usize, f64>,
    pub n_ex: f64,
}

pub fn aggregate(per_doc: &[DocScore]) -> Result<Aggregate, MetricsError> {
    if per_doc.is_empty() {
        return Err(MetricsError::NothingToAggregate);
    }
    let n = per_doc.len() as f64;
    // Summation in a fixed key order keeps the result independent of the
    // order of `per_doc` up to floating-point associativity; sorting the
    // addends removes even that.
    let mean = |values: Vec<f64>| -> f64 { sorted_sum(values) / n };
    let mean_at = |get: fn(&DocScore) -> &BTreeMap<usize, f64>| -> BTreeMap<usize, f64> {
        let keys: BTreeSet<usize> = per_doc.iter().flat_map(|d| get(d).keys().copied()).collect();
        keys.into_iter()
            .map(|k| {
                let vals = per_doc.iter().map(|d| get(d).get(&k).copied().unwrap_or(0.0)).collect();
                (k, mean(vals))
            })
            .collect()
    };
    Ok(Aggregate {
        precision: mean(per_doc.iter().map(|d| d.p).collect()),
        recall: mean(per_doc.iter().map(|d| d.r).collect()),
        f1: mean(per_doc.iter().map(|d| d.f1).collect()),
        p_at: mean_at(|d| &d.p_at),
        r_at: mean_at(|d| &d.r_at),
        f1_at: mean_at(|d| &d.f1_at),
        n_ex: mean(per_doc.iter().map(|d| d.n_predicted as f64).collect()),
    })
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_name: String,
    pub model_id: String,
    pub template_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_at_5: f64,
    pub f1_at_10: f64,
    pub n_ex: f64,
    pub per_doc: Vec<DocScore>,
}

impl EvalReport {
    /// Builds a report from per-document scores. The per-document scores
    /// must include k = 5 and k = 10.
    pub fn from_scores(
        split_name: &str,
        model_id: &str,
        template_name: &str,
        per_doc: Vec<DocScore>,
    ) -> Result<Self, MetricsError> {
        let agg = aggregate(&per_doc)?;
        Ok(EvalReport {
            split_name: split_name.to_string(),
            model_id: model_id.to_string(),
            template_name: template_name.to_string(),
            precision: agg.precision,
            recall: agg.recall,
            f1: agg.f1,
            f1_at_5: agg.f1_at.get(&5).copied().unwrap_or(0.0),
            f1_at_10: agg.f1_at.get(&10).copied().unwrap_or(0.0),
            n_ex: agg.n_ex,
            per_doc,
        })
    }
}
