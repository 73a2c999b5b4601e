//! From raw completion to ranked present concepts: split, filter to the
//! document, dedupe, score with token probabilities, sort.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::gateway::GenerationResult;
use crate::metrics::{normalize, NormalizedPhrase};
use crate::text::{normalize_text, NormalizedView};

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("candidate {text:?} is not at chars {start}..{end} of the completion")]
    SpanNotFound { text: String, start: usize, end: usize },
    #[error("token texts do not concatenate to the completion")]
    TokenMismatch,
}

/// A piece of the completion with its character span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub span: (usize, usize),
}

/// A candidate found in the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresentCandidate {
    pub surface: String,
    pub normalized: String,
    pub completion_text: String,
    pub completion_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedConcept {
    pub surface: String,
    pub normalized: String,
    pub confidence: Option<f64>,
    pub completion_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub doc_id: String,
    pub concepts: Vec<ExtractedConcept>,
    pub raw_completion: String,
}

impl ExtractionResult {
    /// Concepts as comparison keys, in rank order.
    pub fn ranked_phrases(&self) -> Vec<NormalizedPhrase> {
        self.concepts
            .iter()
            .filter_map(|c| normalize(&c.normalized).ok())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchRule {
    pub case_sensitive: bool,
    /// Require matches to start and end on word boundaries of the document.
    pub word_boundary: bool,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            case_sensitive: false,
            word_boundary: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// exp of the mean token logprob.
    #[default]
    GeometricMean,
    /// exp of the summed token logprobs.
    Product,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    #[serde(flatten)]
    pub rule: MatchRule,
    pub confidence: ConfidenceMode,
}

const SEPARATORS: [char; 4] = [',', ';', '*', '\n'];

/// Strips one leading `-` or `N.` list marker followed by whitespace.
fn strip_marker(piece: &str) -> &str {
    let rest = if let Some(rest) = piece.strip_prefix('-') {
        rest
    } else {
        let digits = piece.bytes().take_while(u8::is_ascii_digit).count();
        match piece[digits..].strip_prefix('.') {
            Some(rest) if digits > 0 => rest,
            _ => return piece,
        }
    };
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        rest.trim_start()
    } else {
        piece
    }
}

/// Splits on `,` `;` `*` and newlines, trims, drops list markers and
/// empty pieces. Spans are character offsets into `text`.
pub fn split_completion(text: &str) -> Vec<Candidate> {
    let mut out = Vec::new();
    let mut piece_start = 0usize; // byte offset
    let bounds = text
        .char_indices()
        .filter(|(_, c)| SEPARATORS.contains(c))
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    for sep in bounds {
        let piece = &text[piece_start..sep];
        let trimmed = strip_marker(piece.trim()).trim_end();
        if !trimmed.is_empty() {
            // `trimmed` is a subslice of `piece`, so pointer arithmetic gives its offset
            let byte_start = trimmed.as_ptr() as usize - text.as_ptr() as usize;
            let char_start = text[..byte_start].chars().count();
            out.push(Candidate {
                text: trimmed.to_string(),
                span: (char_start, char_start + trimmed.chars().count()),
            });
        }
        piece_start = (sep + 1).min(text.len());
    }
    out
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// First occurrence of `needle` in `view` honoring the boundary rule, as a
/// byte range of the normalized string.
fn find_match(view: &NormalizedView, needle: &str, word_boundary: bool) -> Option<(usize, usize)> {
    let hay = view.normalized.as_str();
    let first = needle.chars().next()?;
    let last = needle.chars().next_back()?;
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let ok = !word_boundary
            || ((!is_word_char(first) || !hay[..start].chars().next_back().is_some_and(is_word_char))
                && (!is_word_char(last) || !hay[end..].chars().next().is_some_and(is_word_char)));
        if ok {
            return Some((start, end));
        }
        from = start + first.len_utf8();
    }
    None
}

/// Keeps candidates whose normalized form occurs in the normalized document;
/// the surface becomes the matching document text.
pub fn filter_present(candidates: &[Candidate], doc: &Document, rule: MatchRule) -> Vec<PresentCandidate> {
    let view = NormalizedView::new(&doc.text, !rule.case_sensitive);
    candidates
        .iter()
        .filter_map(|c| {
            let needle = if rule.case_sensitive {
                c.text.split_whitespace().collect::<Vec<_>>().join(" ")
            } else {
                normalize_text(&c.text)
            };
            if needle.is_empty() {
                return None;
            }
            let (start, end) = find_match(&view, &needle, rule.word_boundary)?;
            let (s, e) = view.source_range(start, end);
            Some(PresentCandidate {
                surface: doc.text[s..e].to_string(),
                normalized: normalize_text(&c.text),
                completion_text: c.text.clone(),
                completion_span: c.span,
            })
        })
        .collect()
}

/// First occurrence per normalized form, order preserved.
pub fn dedupe(candidates: Vec<PresentCandidate>) -> Vec<PresentCandidate> {
    let mut seen = HashSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(c.normalized.clone()))
        .collect()
}

/// Attaches confidences from the tokens overlapping each candidate's span.
/// Without tokens every confidence is absent.
pub fn score_confidences(
    candidates: Vec<PresentCandidate>,
    gen: &GenerationResult,
    mode: ConfidenceMode,
) -> Result<Vec<ExtractedConcept>, ExtractionError> {
    let chars: Vec<char> = gen.text.chars().collect();
    for c in &candidates {
        let (start, end) = c.completion_span;
        let located =
            start < end && end <= chars.len() && chars[start..end].iter().copied().eq(c.completion_text.chars());
        if !located {
            return Err(ExtractionError::SpanNotFound {
                text: c.completion_text.clone(),
                start,
                end,
            });
        }
    }
    let ranges = if gen.tokens.is_empty() {
        None
    } else {
        let joined: String = gen.tokens.iter().map(|t| t.token_text.as_str()).collect();
        if joined != gen.text {
            return Err(ExtractionError::TokenMismatch);
        }
        let mut offset = 0;
        let ranges: Vec<(usize, usize, f64)> = gen
            .tokens
            .iter()
            .map(|t| {
                let len = t.token_text.chars().count();
                let r = (offset, offset + len, t.logprob);
                offset += len;
                r
            })
            .collect();
        Some(ranges)
    };
    Ok(candidates
        .into_iter()
        .map(|c| {
            let confidence = ranges.as_ref().map(|ranges| {
                let (start, end) = c.completion_span;
                let logprobs: Vec<f64> = ranges
                    .iter()
                    .filter(|(a, b, _)| *a < end && start < *b)
                    .map(|(_, _, l)| *l)
                    .collect();
                let sum: f64 = logprobs.iter().sum();
                let exponent = match mode {
                    ConfidenceMode::GeometricMean => sum / logprobs.len() as f64,
                    ConfidenceMode::Product => sum,
                };
                exponent.exp().min(1.0)
            });
            ExtractedConcept {
                surface: c.surface,
                normalized: c.normalized,
                confidence,
                completion_span: c.completion_span,
            }
        })
        .collect())
}

/// Full pipeline; concepts sorted by confidence, ties in appearance order.
pub fn extract(
    doc: &Document,
    gen: &GenerationResult,
    config: &ExtractionConfig,
) -> Result<ExtractionResult, ExtractionError> {
    let candidates = split_completion(&gen.text);
    let present = dedupe(filter_present(&candidates, doc, config.rule));
    let mut concepts = score_confidences(present, gen, config.confidence)?;
    concepts.sort_by(|a, b| {
        let (a, b) = (a.confidence.unwrap_or(0.0), b.confidence.unwrap_or(0.0));
        b.total_cmp(&a)
    });
    Ok(ExtractionResult {
        doc_id: doc.id.clone(),
        concepts,
        raw_completion: gen.text.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{pseudo_tokenize, TokenLogprob};
    use proptest::prelude::*;

    fn texts(c: &[Candidate]) -> Vec<&str> {
        c.iter().map(|c| c.text.as_str()).collect()
    }

    fn gen(text: &str, tokens: &[(&str, f64)]) -> GenerationResult {
        GenerationResult {
            text: text.into(),
            tokens: tokens
                .iter()
                .map(|(t, p)| TokenLogprob {
                    token_text: t.to_string(),
                    logprob: p.ln(),
                })
                .collect(),
            backend_id: "t".into(),
            cached: false,
            warnings: vec![],
        }
    }

    fn present(items: &[&str]) -> Vec<PresentCandidate> {
        items
            .iter()
            .map(|s| PresentCandidate {
                surface: s.to_string(),
                normalized: normalize_text(s),
                completion_text: s.to_string(),
                completion_span: (0, 0),
            })
            .collect()
    }

    #[test]
    fn split_examples() {
        assert_eq!(texts(&split_completion("a, b; c\n* d")), ["a", "b", "c", "d"]);
        assert_eq!(
            texts(&split_completion(
                "Sure, I'd be happy to help!\nkeyword one, keyword two"
            )),
            ["Sure", "I'd be happy to help!", "keyword one", "keyword two"]
        );
        assert!(split_completion("").is_empty());
        assert_eq!(
            texts(&split_completion("1. alpha\n2. beta\n- gamma")),
            ["alpha", "beta", "gamma"]
        );
        assert_eq!(
            texts(&split_completion("3.5 GHz, -x, e-mail")),
            ["3.5 GHz", "-x", "e-mail"]
        );
    }

    #[test]
    fn split_spans_are_char_offsets() {
        let text = "naïve bayes,  Ünïcode";
        let parts = split_completion(text);
        let chars: Vec<char> = text.chars().collect();
        for p in &parts {
            let got: String = chars[p.span.0..p.span.1].iter().collect();
            assert_eq!(got, p.text);
        }
        assert_eq!(parts[1].span, (14, 21));
    }

    #[test]
    fn filter_examples() {
        let doc = Document::new("d", "A new graphical user interface for data mining.\nSecond line.");
        let cands = split_completion("Graphical User Interface, Sure, data  mining, mining. Second");
        let kept = filter_present(&cands, &doc, MatchRule::default());
        let surfaces: Vec<&str> = kept.iter().map(|k| k.surface.as_str()).collect();
        assert_eq!(surfaces, ["graphical user interface", "data mining", "mining.\nSecond"]);
        assert_eq!(kept[0].normalized, "graphical user interface");
    }

    #[test]
    fn word_boundary_rule() {
        let doc = Document::new("d", "We measure sure things.");
        let cands = split_completion("Sure, easure");
        let kept = filter_present(&cands, &doc, MatchRule::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].surface, "sure");
        let loose = MatchRule {
            word_boundary: false,
            ..MatchRule::default()
        };
        assert_eq!(filter_present(&cands, &doc, loose).len(), 2);
        let strict_case = MatchRule {
            case_sensitive: true,
            ..MatchRule::default()
        };
        assert!(filter_present(&cands, &doc, strict_case).is_empty());
    }

    #[test]
    fn dedupe_examples() {
        let names = |v: Vec<PresentCandidate>| v.into_iter().map(|c| c.surface).collect::<Vec<_>>();
        assert_eq!(names(dedupe(present(&["A", "a"]))), ["A"]);
        assert_eq!(names(dedupe(present(&["x", "y", "x"]))), ["x", "y"]);
        assert!(dedupe(vec![]).is_empty());
    }

    #[test]
    fn confidence_examples() {
        let doc = Document::new("d", "deep learning and nets");
        let g = gen(
            "deep learning, nets",
            &[("deep", 0.9), (" learning", 0.4), (",", 0.99), (" nets", 0.5)],
        );
        let r = extract(&doc, &g, &ExtractionConfig::default()).unwrap();
        assert_eq!(r.concepts.len(), 2);
        assert!((r.concepts[0].confidence.unwrap() - 0.6).abs() < 1e-12);
        assert!((r.concepts[1].confidence.unwrap() - 0.5).abs() < 1e-12);

        let product = ExtractionConfig {
            confidence: ConfidenceMode::Product,
            ..Default::default()
        };
        let r = extract(&doc, &g, &product).unwrap();
        assert_eq!(r.concepts[0].normalized, "nets");
        assert!((r.concepts[1].confidence.unwrap() - 0.36).abs() < 1e-12);
    }

    #[test]
    fn no_tokens_keeps_appearance_order() {
        let doc = Document::new("d", "alpha beta gamma");
        let r = extract(&doc, &gen("gamma, alpha, beta", &[]), &ExtractionConfig::default()).unwrap();
        let names: Vec<&str> = r.concepts.iter().map(|c| c.surface.as_str()).collect();
        assert_eq!(names, ["gamma", "alpha", "beta"]);
        assert!(r.concepts.iter().all(|c| c.confidence.is_none()));
    }

    #[test]
    fn ties_keep_appearance_order() {
        let doc = Document::new("d", "alpha beta gamma");
        let text = "gamma, alpha, beta";
        let tokens: Vec<(String, f64)> = pseudo_tokenize(text).into_iter().map(|t| (t, 0.5)).collect();
        let tokens: Vec<(&str, f64)> = tokens.iter().map(|(t, p)| (t.as_str(), *p)).collect();
        let r = extract(&doc, &gen(text, &tokens), &ExtractionConfig::default()).unwrap();
        let names: Vec<&str> = r.concepts.iter().map(|c| c.surface.as_str()).collect();
        assert_eq!(names, ["gamma", "alpha", "beta"]);
    }

    #[test]
    fn misplaced_span_is_an_error() {
        let mut c = present(&["zz"]);
        c[0].completion_span = (0, 2);
        let err = score_confidences(c, &gen("ab", &[("ab", 0.5)]), ConfidenceMode::GeometricMean).unwrap_err();
        assert!(matches!(err, ExtractionError::SpanNotFound { .. }));
    }

    #[test]
    fn nothing_present_is_empty() {
        let doc = Document::new("d", "alpha beta");
        let r = extract(&doc, &gen("zeta, eta", &[]), &ExtractionConfig::default()).unwrap();
        assert!(r.concepts.is_empty());
        assert_eq!(r.raw_completion, "zeta, eta");
    }

    proptest! {
        #[test]
        fn deterministic_and_sound(
            words in proptest::collection::vec("[a-e]{1,3}", 1..12),
            picks in proptest::collection::vec((0usize..12, 1usize..4), 0..6),
            seps in proptest::collection::vec(prop_oneof![Just(", "), Just(";"), Just("\n* "), Just("\n")], 6),
        ) {
            let doc = Document::new("d", words.join(" "));
            let mut text = String::new();
            for (i, (at, len)) in picks.iter().enumerate() {
                let at = at % words.len();
                let end = (at + len).min(words.len());
                if i > 0 {
                    text.push_str(seps[i % seps.len()]);
                }
                text.push_str(&words[at..end].join(" ").to_uppercase());
            }
            let tokens: Vec<TokenLogprob> = pseudo_tokenize(&text)
                .into_iter()
                .enumerate()
                .map(|(i, t)| TokenLogprob { token_text: t, logprob: -0.1 * (i % 7) as f64 })
                .collect();
            let g = GenerationResult { text, tokens, backend_id: "t".into(), cached: false, warnings: vec![] };
            let a = extract(&doc, &g, &ExtractionConfig::default()).unwrap();
            let b = extract(&doc, &g, &ExtractionConfig::default()).unwrap();
            prop_assert_eq!(&a, &b);
            let norm_doc = normalize_text(&doc.text);
            let mut seen = HashSet::new();
            for c in &a.concepts {
                prop_assert!(norm_doc.contains(&c.normalized));
                prop_assert!(seen.insert(c.normalized.clone()));
                let p = c.confidence.unwrap();
                prop_assert!(p > 0.0 && p <= 1.0);
            }
            prop_assert!(a.concepts.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        }
    }
}
