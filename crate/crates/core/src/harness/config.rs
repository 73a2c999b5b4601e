//! Experiment configuration (JSON) and its validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use super::HarnessError;
use crate::baselines::DEFAULT_TOP_N;
use crate::corpus::{FieldMap, LoadOptions};
use crate::extraction::ExtractionConfig;
use crate::fewshot::DEFAULT_EMBEDDING_MODEL;
use crate::gateway::{DEFAULT_MAX_CONCURRENCY, DEFAULT_MAX_NEW_TOKENS};
use crate::metrics::RecallDenominator;
use crate::prompts::{FewShotStrategy, PromptTemplate, SearchTerm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    pub io: IoConfig,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub skip_failures: bool,
    /// Only the first `limit` test documents are processed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

fn default_concurrency() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Report name; defaults to the test file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    pub test_path: PathBuf,
    #[serde(default, deserialize_with = "field_map")]
    pub field_map: FieldMap,
    #[serde(default = "yes")]
    pub join_tokens: bool,
}

fn yes() -> bool {
    true
}

/// Accepts a preset name or an object of renamed fields.
fn field_map<'de, D: Deserializer<'de>>(d: D) -> Result<FieldMap, D::Error> {
    let value = Value::deserialize(d)?;
    let spec = match &value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    FieldMap::parse(&spec).map_err(serde::de::Error::custom)
}

impl DatasetConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            field_map: self.field_map.clone(),
            join_tokens: self.join_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Llm,
    Tfidf,
    Firstphrases,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Llm => "llm",
            Method::Tfidf => "tfidf",
            Method::Firstphrases => "firstphrases",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Openai,
    EchoGold,
    NoisyGold,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    /// Dataset JSONL for the gold mocks (default: the test split), or a
    /// response-cache file for replay (default: `io.cache_path`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
}

fn default_timeout() -> u64 {
    120
}

fn default_max_concurrency() -> usize {
    DEFAULT_MAX_CONCURRENCY
}

impl BackendConfig {
    pub fn of_kind(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            base_url: None,
            api_key_env: None,
            timeout_s: default_timeout(),
            max_concurrency: default_max_concurrency(),
            fixture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub model_id: String,
    pub backend: BackendConfig,
    pub template_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_term: Option<SearchTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs_strategy: Option<FewShotStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_embedding_model")]
    pub embedding_model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache_path: Option<PathBuf>,
}

fn default_max_new_tokens() -> u32 {
    DEFAULT_MAX_NEW_TOKENS
}

fn default_embedding_model() -> String {
    DEFAULT_EMBEDDING_MODEL.to_string()
}

impl LlmConfig {
    /// The resolved template with the configured search term applied.
    pub fn template(&self) -> Result<PromptTemplate, HarnessError> {
        let template = PromptTemplate::from_name(&self.template_name, self.fs_n)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match self.search_term {
            Some(term) => template
                .with_search_term(term)
                .map_err(|e| HarnessError::Config(e.to_string())),
            None => Ok(template),
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.model_id.trim().is_empty() {
            return bad("llm.model_id is empty".into());
        }
        let template = self.template()?;
        match template.fs_strategy {
            Some(strategy) => {
                if self.fs_strategy.is_some_and(|s| s != strategy) {
                    return bad(format!(
                        "llm.fs_strategy disagrees with template {}",
                        self.template_name
                    ));
                }
                if strategy == FewShotStrategy::Random && self.seed.is_none() {
                    return bad("llm.seed is required for the random few-shot strategy".into());
                }
                if strategy != FewShotStrategy::Random && self.seed.is_some() {
                    return bad("llm.seed is only used by the random few-shot strategy".into());
                }
            }
            None => {
                if self.fs_strategy.is_some() || self.fs_n.is_some() || self.seed.is_some() {
                    return bad(format!(
                        "zero-shot template {} takes no fs_strategy, fs_n or seed",
                        self.template_name
                    ));
                }
            }
        }
        if self.max_new_tokens == 0 {
            return bad("llm.max_new_tokens must be positive".into());
        }
        if self.backend.kind == BackendKind::Openai && self.backend.base_url.is_none() {
            return bad("llm.backend.base_url is required for the openai backend".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub recall_denominator: RecallDenominator,
}

fn default_k_values() -> Vec<usize> {
    vec![5, 10]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_values: default_k_values(),
            recall_denominator: RecallDenominator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Persisted idf table; built from the train split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idf_path: Option<PathBuf>,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            top_n: DEFAULT_TOP_N,
            idf_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads a config file. A run manifest is accepted too; its config
    /// snapshot is used.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let content = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&content).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(content: &str) -> Result<Self, HarnessError> {
        let mut value: Value = serde_json::from_str(content).map_err(|e| HarnessError::Config(e.to_string()))?;
        if value.get("tool_version").is_some() && value.get("config").is_some() {
            value = value["config"].take();
        }
        serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if self.eval.k_values.is_empty() || self.eval.k_values.contains(&0) {
            return bad("eval.k_values must be non-empty and positive");
        }
        if self.limit == Some(0) {
            return bad("limit must be positive");
        }
        match self.method {
            Method::Llm => {
                let llm = self
                    .llm
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("method llm needs an `llm` section".into()))?;
                llm.validate()?;
                if llm.template()?.is_few_shot() && self.dataset.train_path.is_none() {
                    return bad("few-shot templates need dataset.train_path");
                }
            }
            Method::Tfidf => {
                if self.dataset.train_path.is_none() && self.baseline.idf_path.is_none() {
                    return bad("tfidf needs dataset.train_path or baseline.idf_path");
                }
            }
            Method::Firstphrases => {}
        }
        Ok(())
    }

    /// Model column of reports.
    pub fn model_label(&self) -> String {
        match (&self.method, &self.llm) {
            (Method::Llm, Some(llm)) => llm.model_id.clone(),
            (m, _) => m.as_str().to_string(),
        }
    }

    /// Prompt column of reports.
    pub fn prompt_label(&self) -> String {
        match (&self.method, &self.llm) {
            (Method::Llm, Some(llm)) => llm
                .template()
                .map(|t| t.display_name())
                .unwrap_or_else(|_| llm.template_name.clone()),
            _ => "-".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::json!({
            "dataset": {"test_path": "test.jsonl", "train_path": "train.jsonl", "field_map": "midas"},
            "llm": {
                "model_id": "m",
                "backend": {"kind": "echo-gold"},
                "template_name": "ZS-Keyphrases"
            },
            "io": {"output_dir": "out"}
        })
    }

    fn parse(v: &Value) -> Result<ExperimentConfig, HarnessError> {
        let c = ExperimentConfig::from_json(&v.to_string())?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(&base()).unwrap();
        assert_eq!(c.method, Method::Llm);
        assert_eq!(c.eval.k_values, vec![5, 10]);
        assert_eq!(c.dataset.field_map, FieldMap::midas());
        assert_eq!(c.llm.as_ref().unwrap().max_new_tokens, 512);
        assert_eq!(c.baseline.top_n, 10);
        assert!(c.dataset.join_tokens);
        assert_eq!(c.model_label(), "m");
        assert_eq!(c.prompt_label(), "ZS-Keyphrases");
    }

    #[test]
    fn round_trips_through_json() {
        let c = parse(&base()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn few_shot_field_rules() {
        let mut v = base();
        v["llm"]["template_name"] = "FS-Random".into();
        v["llm"]["fs_n"] = 3.into();
        assert!(parse(&v).is_err(), "seed missing");
        v["llm"]["seed"] = 7.into();
        let c = parse(&v).unwrap();
        assert_eq!(c.prompt_label(), "FS-3-Random");

        let mut v = base();
        v["llm"]["seed"] = 7.into();
        assert!(parse(&v).is_err(), "seed on a zero-shot template");

        let mut v = base();
        v["llm"]["template_name"] = "FS-Closest".into();
        assert!(parse(&v).is_err(), "fs_n missing");

        let mut v = base();
        v["llm"]["template_name"] = "FS-1-Fixed".into();
        v["llm"]["fs_strategy"] = "random".into();
        assert!(parse(&v).is_err(), "strategy disagrees");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut v = base();
        v["bogus"] = 1.into();
        assert!(parse(&v).is_err());
        let mut v = base();
        v["method"] = "tfidf".into();
        v["dataset"].as_object_mut().unwrap().remove("train_path");
        assert!(parse(&v).is_err());
        let mut v = base();
        v["llm"]["backend"] = serde_json::json!({"kind": "openai"});
        assert!(parse(&v).is_err());
        let mut v = base();
        v["concurrency"] = 0.into();
        assert!(parse(&v).is_err());
    }

    #[test]
    fn reads_manifest_snapshots() {
        let c = parse(&base()).unwrap();
        let manifest = serde_json::json!({"tool_version": "x", "config": serde_json::to_value(&c).unwrap()});
        assert_eq!(ExperimentConfig::from_json(&manifest.to_string()).unwrap(), c);
    }
}
