//! Append-only JSONL caches for completions and embeddings.
//!
//! Both caches load the whole file at open time and append one line per
//! new entry through a single locked writer. Lines that fail to parse (for
//! example a torn final line after a crash) are skipped with a warning.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GatewayError, GenerationResult};
use crate::fewshot::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub value: GenerationResult,
    pub created_at: String,
}

fn cache_error(path: &Path, message: impl ToString) -> GatewayError {
    GatewayError::Cache {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, GatewayError> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(cache_error(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => log::warn!("{}: skipping unreadable line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn open_append(path: &Path) -> Result<File, GatewayError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| cache_error(path, e))?;
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| cache_error(path, e))
}

fn append_line<T: Serialize>(path: &Path, writer: &Mutex<File>, record: &T) -> Result<(), GatewayError> {
    let mut line = serde_json::to_string(record).map_err(|e| cache_error(path, e))?;
    line.push('\n');
    let mut file = writer.lock().expect("cache writer poisoned");
    file.write_all(line.as_bytes()).map_err(|e| cache_error(path, e))?;
    file.flush().map_err(|e| cache_error(path, e))
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Completion cache keyed by [`super::GenerationRequest::cache_key`].
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<File>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        for entry in read_jsonl::<CacheEntry>(path)? {
            entries.insert(entry.key.clone(), entry);
        }
        Ok(ResponseCache {
            path: path.to_path_buf(),
            writer: Mutex::new(open_append(path)?),
            entries: RwLock::new(entries),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The stored result, marked as served from cache.
    pub fn get(&self, key: &str) -> Option<GenerationResult> {
        let entries = self.entries.read().expect("cache poisoned");
        entries.get(key).map(|e| GenerationResult {
            cached: true,
            ..e.value.clone()
        })
    }

    pub fn put(&self, key: &str, value: &GenerationResult) -> Result<(), GatewayError> {
        let entry = CacheEntry {
            key: key.to_string(),
            value: GenerationResult {
                cached: false,
                ..value.clone()
            },
            created_at: now_rfc3339(),
        };
        append_line(&self.path, &self.writer, &entry)?;
        self.entries
            .write()
            .expect("cache poisoned")
            .insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Entries in file order (later duplicates of a key win).
    pub fn entries(&self) -> Result<Vec<CacheEntry>, GatewayError> {
        let mut seen = HashMap::new();
        let all = read_jsonl::<CacheEntry>(&self.path)?;
        for (i, e) in all.iter().enumerate() {
            seen.insert(e.key.clone(), i);
        }
        Ok(all
            .into_iter()
            .enumerate()
            .filter(|(i, e)| seen[&e.key] == *i)
            .map(|(_, e)| e)
            .collect())
    }

    /// Removes every entry and truncates the file.
    pub fn clear(&self) -> Result<(), GatewayError> {
        let file = self.writer.lock().expect("cache writer poisoned");
        file.set_len(0).map_err(|e| cache_error(&self.path, e))?;
        self.entries.write().expect("cache poisoned").clear();
        Ok(())
    }
}

/// One line of the embedding cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub model_id: String,
    pub text_sha256: String,
    pub vector: Vec<f64>,
}

pub fn text_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Embedding cache keyed by `(model_id, sha256(text))`.
pub struct EmbeddingCache {
    path: PathBuf,
    vectors: RwLock<HashMap<(String, String), Vec<f64>>>,
    writer: Mutex<File>,
}

impl EmbeddingCache {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let vectors = read_jsonl::<EmbeddingRecord>(path)?
            .into_iter()
            .map(|r| ((r.model_id, r.text_sha256), r.vector))
            .collect();
        Ok(EmbeddingCache {
            path: path.to_path_buf(),
            writer: Mutex::new(open_append(path)?),
            vectors: RwLock::new(vectors),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, model_id: &str, text: &str) -> Option<EmbeddingVector> {
        let key = (model_id.to_string(), text_sha256(text));
        self.vectors
            .read()
            .expect("cache poisoned")
            .get(&key)
            .map(|values| EmbeddingVector {
                values: values.clone(),
                model_id: model_id.to_string(),
            })
    }

    pub fn put(&self, text: &str, vector: &EmbeddingVector) -> Result<(), GatewayError> {
        let record = EmbeddingRecord {
            model_id: vector.model_id.clone(),
            text_sha256: text_sha256(text),
            vector: vector.values.clone(),
        };
        append_line(&self.path, &self.writer, &record)?;
        self.vectors
            .write()
            .expect("cache poisoned")
            .insert((record.model_id, record.text_sha256), record.vector);
        Ok(())
    }
}
