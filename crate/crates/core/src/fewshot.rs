//! Few-shot example selection: fixed, per-document random and
//! embedding-closest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{DatasetSplit, Entry};
use crate::prompts::FewShotStrategy;

/// Default sentence-embedding model for the closest strategy.
pub const DEFAULT_EMBEDDING_MODEL: &str = "all-mpnet-base-v2";

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("requested {requested} examples but only {available} are available")]
    NotEnough { requested: usize, available: usize },
    #[error("embedding vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("embedding vectors come from different models (`{0}` vs `{1}`)")]
    ModelMismatch(String, String),
    #[error("embedding vector has zero norm")]
    ZeroVector,
    #[error("embedding vector is empty or has non-finite entries")]
    InvalidVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, SelectError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(SelectError::InvalidVector);
        }
        Ok(EmbeddingVector {
            values,
            model_id: model_id.into(),
        })
    }

    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub strategy: FewShotStrategy,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_embedding_model")]
    pub embedding_model_id: String,
}

fn default_embedding_model() -> String {
    DEFAULT_EMBEDDING_MODEL.to_string()
}

impl SelectorConfig {
    /// Whether `n` is one of the shot counts used in the published
    /// experiments (1, 3, 5). Other values work but are not comparable.
    pub fn is_standard_n(&self) -> bool {
        matches!(self.n, 1 | 3 | 5)
    }
}

fn check_n(n: usize, available: usize) -> Result<(), SelectError> {
    if n > available {
        return Err(SelectError::NotEnough {
            requested: n,
            available,
        });
    }
    Ok(())
}

/// The first `n` training entries, the same for every test document.
pub fn select_fixed(train: &DatasetSplit, n: usize) -> Result<Vec<&Entry>, SelectError> {
    check_n(n, train.len())?;
    Ok(train.entries.iter().take(n).collect())
}

/// `n` distinct entries drawn without replacement, keyed by
/// `(seed, doc_id)`.
///
/// The generator is SplitMix64 seeded with the first eight bytes
/// (little-endian) of SHA-256 over `seed` as 8 little-endian bytes followed
/// by the UTF-8 bytes of `doc_id`. Draws use a partial Fisher-Yates shuffle
/// over train indices with rejection sampling for unbiased bounds, so the
/// selection is identical on every platform and release.
pub fn select_random<'a>(
    train: &'a DatasetSplit,
    n: usize,
    seed: u64,
    doc_id: &str,
) -> Result<Vec<&'a Entry>, SelectError> {
    check_n(n, train.len())?;
    Ok(sample_indices(train.len(), n, selection_key(seed, doc_id))
        .into_iter()
        .map(|i| &train.entries[i])
        .collect())
}

pub fn selection_key(seed: u64, doc_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(doc_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Partial Fisher-Yates over `0..len`, returning the first `n` positions.
pub fn sample_indices(len: usize, n: usize, key: u64) -> Vec<usize> {
    let mut rng = SplitMix64(key);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n.min(len) {
        let j = i + rng.below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n.min(len));
    idx
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `0..bound` by rejection.
    fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next();
            if v < zone {
                return v % bound;
            }
        }
    }
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SelectError> {
    if u.model_id != v.model_id {
        return Err(SelectError::ModelMismatch(u.model_id.clone(), v.model_id.clone()));
    }
    if u.values.len() != v.values.len() {
        return Err(SelectError::LengthMismatch(u.values.len(), v.values.len()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(SelectError::ZeroVector);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// The `n` entries most similar to `query`, most similar first. Ties keep
/// training order.
pub fn select_closest<'a>(
    train_vectors: &[(&'a Entry, EmbeddingVector)],
    query: &EmbeddingVector,
    n: usize,
) -> Result<Vec<&'a Entry>, SelectError> {
    check_n(n, train_vectors.len())?;
    let mut scored = train_vectors
        .iter()
        .map(|(entry, vector)| Ok((*entry, cosine_similarity(vector, query)?)))
        .collect::<Result<Vec<_>, SelectError>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored.into_iter().take(n).map(|(e, _)| e).collect())
}
