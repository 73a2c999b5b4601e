//! Command-line overrides layered onto a JSON experiment config. Flags win
//! over the file; the merged document is validated by the core config
//! types.

use std::path::PathBuf;

use clap::Args;
use conextract::harness::{ExperimentConfig, HarnessError};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Experiment config (JSON). A run manifest is accepted too.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,

    /// Test split JSONL.
    #[arg(long, value_name = "PATH")]
    pub test: Option<PathBuf>,
    /// Train split JSONL (few-shot examples, idf table).
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    /// Dataset name used in reports.
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Field mapping: `default`, `midas` or a JSON object.
    #[arg(long, value_name = "SPEC")]
    pub field_map: Option<String>,

    /// llm, tfidf or firstphrases.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// openai, echo-gold, noisy-gold or replay.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    #[arg(long, value_name = "SECONDS")]
    pub timeout: Option<u64>,
    /// Maximum in-flight backend requests.
    #[arg(long, value_name = "N")]
    pub max_in_flight: Option<usize>,
    /// Mock fixture: dataset for the gold mocks, cache file for replay.
    #[arg(long, value_name = "PATH")]
    pub fixture: Option<PathBuf>,
    /// Template name, e.g. ZS-Keyphrases or FS-Random.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub search_term: Option<String>,
    /// Number of few-shot examples.
    #[arg(long, value_name = "N")]
    pub fs_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub max_new_tokens: Option<u32>,
    #[arg(long, value_name = "ID")]
    pub embedding_model: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub embedding_cache: Option<PathBuf>,

    /// Response cache (JSONL).
    #[arg(long, value_name = "PATH")]
    pub cache: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, short = 'o', value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Documents processed in parallel.
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Exclude failing documents instead of aborting.
    #[arg(long)]
    pub skip_failures: bool,
    /// Process only the first N test documents.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Cut-offs for the ranked metrics, e.g. `5,10`.
    #[arg(long, value_delimiter = ',', value_name = "K")]
    pub k: Option<Vec<usize>>,
    /// gold_at_k or full_gold.
    #[arg(long)]
    pub recall_denominator: Option<String>,
    #[arg(long)]
    pub case_sensitive: bool,
    /// Score concepts by the probability product instead of the geometric mean.
    #[arg(long)]
    pub product_confidence: bool,
    /// Baseline output size.
    #[arg(long, value_name = "N")]
    pub top_n: Option<usize>,
    /// Persisted idf table for the tf-idf baseline.
    #[arg(long, value_name = "PATH")]
    pub idf: Option<PathBuf>,
}

fn set(root: &mut Value, path: &[&str], value: Value) {
    let mut node = root;
    for key in &path[..path.len() - 1] {
        if !node.get(*key).is_some_and(Value::is_object) {
            node[*key] = Value::Object(Map::new());
        }
        node = &mut node[*key];
    }
    node[path[path.len() - 1]] = value;
}

fn opt<T: serde::Serialize>(root: &mut Value, path: &[&str], value: &Option<T>) {
    if let Some(v) = value {
        set(root, path, json!(v));
    }
}

impl ConfigArgs {
    /// The config file (or an empty document) with every given flag applied.
    pub fn merged(&self) -> Result<Value, HarnessError> {
        let mut root = match &self.config {
            Some(path) => {
                let content = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                let mut value: Value = serde_json::from_str(&content)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                if value.get("tool_version").is_some() && value.get("config").is_some() {
                    value = value["config"].take();
                }
                value
            }
            None => json!({}),
        };
        if !root.is_object() {
            return Err(HarnessError::Config("config must be a JSON object".into()));
        }
        let r = &mut root;
        opt(r, &["dataset", "test_path"], &self.test);
        opt(r, &["dataset", "train_path"], &self.train);
        opt(r, &["dataset", "name"], &self.dataset_name);
        if let Some(spec) = &self.field_map {
            let value = serde_json::from_str::<Value>(spec).unwrap_or_else(|_| json!(spec));
            set(r, &["dataset", "field_map"], value);
        }
        opt(r, &["method"], &self.method);
        opt(r, &["llm", "model_id"], &self.model);
        opt(r, &["llm", "backend", "kind"], &self.backend);
        opt(r, &["llm", "backend", "base_url"], &self.base_url);
        opt(r, &["llm", "backend", "api_key_env"], &self.api_key_env);
        opt(r, &["llm", "backend", "timeout_s"], &self.timeout);
        opt(r, &["llm", "backend", "max_concurrency"], &self.max_in_flight);
        opt(r, &["llm", "backend", "fixture"], &self.fixture);
        opt(r, &["llm", "template_name"], &self.template);
        opt(r, &["llm", "search_term"], &self.search_term);
        opt(r, &["llm", "fs_n"], &self.fs_n);
        opt(r, &["llm", "seed"], &self.seed);
        opt(r, &["llm", "max_new_tokens"], &self.max_new_tokens);
        opt(r, &["llm", "embedding_model_id"], &self.embedding_model);
        opt(r, &["llm", "embedding_cache_path"], &self.embedding_cache);
        opt(r, &["io", "cache_path"], &self.cache);
        opt(r, &["io", "output_dir"], &self.output);
        opt(r, &["concurrency"], &self.concurrency);
        if self.skip_failures {
            set(r, &["skip_failures"], json!(true));
        }
        opt(r, &["limit"], &self.limit);
        opt(r, &["eval", "k_values"], &self.k);
        opt(r, &["eval", "recall_denominator"], &self.recall_denominator);
        if self.case_sensitive {
            set(r, &["extraction", "case_sensitive"], json!(true));
        }
        if self.product_confidence {
            set(r, &["extraction", "confidence"], json!("product"));
        }
        opt(r, &["baseline", "top_n"], &self.top_n);
        opt(r, &["baseline", "idf_path"], &self.idf);
        Ok(root)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let config = ExperimentConfig::from_json(&self.merged()?.to_string())?;
        config.validate()?;
        Ok(config)
    }
}
