//! Shared string normalization.

/// Lowercases and collapses every run of Unicode whitespace to a single
/// space, trimming both ends.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Number of whitespace-separated words.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// A normalized view of a source text that remembers, for every byte of the
/// normalized string, the byte range it came from in the original.
#[derive(Debug, Clone)]
pub struct NormalizedView {
    pub normalized: String,
    // origin[i] = (start, end) in the source for normalized byte i
    origin: Vec<(usize, usize)>,
}

impl NormalizedView {
    pub fn new(source: &str, case_fold: bool) -> Self {
        let mut normalized = String::with_capacity(source.len());
        let mut origin = Vec::with_capacity(source.len());
        let mut pending_space: Option<(usize, usize)> = None;
        for (i, ch) in source.char_indices() {
            let end = i + ch.len_utf8();
            if ch.is_whitespace() {
                if !normalized.is_empty() && pending_space.is_none() {
                    pending_space = Some((i, end));
                }
                continue;
            }
            if let Some(span) = pending_space.take() {
                normalized.push(' ');
                origin.push(span);
            }
            let before = normalized.len();
            if case_fold {
                normalized.extend(ch.to_lowercase());
            } else {
                normalized.push(ch);
            }
            for _ in before..normalized.len() {
                origin.push((i, end));
            }
        }
        NormalizedView { normalized, origin }
    }

    /// Maps a byte range of the normalized string back to the source.
    pub fn source_range(&self, start: usize, end: usize) -> (usize, usize) {
        debug_assert!(start < end && end <= self.origin.len());
        (self.origin[start].0, self.origin[end - 1].1)
    }
}
