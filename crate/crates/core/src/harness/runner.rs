use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::config::{BackendKind, ExperimentConfig, Method};
use super::report::{render_report, ReportFormat, ResultsTable};
use super::{HarnessError, TOOL_VERSION};
use crate::baselines::{english_stopwords, first_phrases_extract, tfidf_extract, IdfTable};
use crate::corpus::{load_split, DatasetSplit, Entry};
use crate::extraction::{extract, ExtractionResult};
use crate::fewshot::{select_closest, select_fixed, select_random, EmbeddingVector};
use crate::gateway::{
    make_mock_backend, Backend, EmbeddingCache, Gateway, GatewayStats, GenerationRequest, MockKind, OpenAiBackend,
    OpenAiConfig,
};
use crate::metrics::{normalize, score_document, EvalReport, NormalizedPhrase};
use crate::prompts::{build_prompt, FewShotStrategy, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub extractions: PathBuf,
    pub manifest: PathBuf,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub report_txt: PathBuf,
}

impl RunArtifacts {
    fn in_dir(dir: &Path) -> Self {
        RunArtifacts {
            extractions: dir.join("extractions.jsonl"),
            manifest: dir.join("manifest.json"),
            report_json: dir.join("report.json"),
            report_csv: dir.join("report.csv"),
            report_txt: dir.join("report.txt"),
        }
    }
}

/// Everything needed to reproduce a run from its response cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp: String,
    pub config: ExperimentConfig,
    pub dataset: String,
    pub n_documents: usize,
    pub n_scored: usize,
    pub artifacts: RunArtifacts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gateway: Option<GatewayStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_hit_ratio: Option<f64>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub manifest: RunManifest,
    pub extractions: Vec<ExtractionResult>,
}

/// Timestamp for manifests; `SOURCE_DATE_EPOCH` pins it for reproducible
/// builds of the output directory.
fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| HarnessError::io(path, e))
}

fn load_test(config: &ExperimentConfig) -> Result<DatasetSplit, HarnessError> {
    let mut split = load_split(&config.dataset.test_path, &config.dataset.load_options())?;
    if let Some(name) = &config.dataset.name {
        split.name = name.clone();
    }
    if let Some(limit) = config.limit {
        split.entries.truncate(limit);
    }
    Ok(split)
}

fn load_train(config: &ExperimentConfig) -> Result<Option<DatasetSplit>, HarnessError> {
    config
        .dataset
        .train_path
        .as_ref()
        .map(|p| load_split(p, &config.dataset.load_options()))
        .transpose()
        .map_err(Into::into)
}

/// The gateway described by the `llm` section, with caches attached.
pub fn build_gateway(config: &ExperimentConfig) -> Result<Gateway, HarnessError> {
    let llm = config
        .llm
        .as_ref()
        .ok_or_else(|| HarnessError::Config("no `llm` section".into()))?;
    let b = &llm.backend;
    let backend: Box<dyn Backend> = match b.kind {
        BackendKind::Openai => Box::new(OpenAiBackend::new(OpenAiConfig {
            base_url: b
                .base_url
                .clone()
                .ok_or_else(|| HarnessError::Config("llm.backend.base_url is required".into()))?,
            api_key_env: b.api_key_env.clone(),
            timeout_s: b.timeout_s,
        })?),
        BackendKind::EchoGold | BackendKind::NoisyGold => {
            let kind = if b.kind == BackendKind::EchoGold {
                MockKind::EchoGold
            } else {
                MockKind::NoisyGold
            };
            let fixture = b.fixture.as_deref().unwrap_or(&config.dataset.test_path);
            Box::new(make_mock_backend(kind, fixture, &config.dataset.load_options())?)
        }
        BackendKind::Replay => {
            let fixture = b
                .fixture
                .as_deref()
                .or(config.io.cache_path.as_deref())
                .ok_or_else(|| HarnessError::Config("replay needs llm.backend.fixture or io.cache_path".into()))?;
            Box::new(make_mock_backend(
                MockKind::Replay,
                fixture,
                &config.dataset.load_options(),
            )?)
        }
    };
    let mut gateway = Gateway::new(backend).with_max_concurrency(b.max_concurrency);
    if let Some(path) = &config.io.cache_path {
        gateway = gateway.with_response_cache_at(path)?;
    }
    if let Some(path) = &llm.embedding_cache_path {
        gateway = gateway.with_embedding_cache(EmbeddingCache::open(path)?);
    }
    Ok(gateway)
}

/// Embeds every document of `split` through the configured gateway so the
/// embedding cache holds them. Returns the number of documents.
pub fn embed_split(config: &ExperimentConfig, split: &DatasetSplit) -> Result<usize, HarnessError> {
    let llm = config
        .llm
        .as_ref()
        .ok_or_else(|| HarnessError::Config("no `llm` section".into()))?;
    let gateway = build_gateway(config)?;
    let texts: Vec<String> = split.entries.iter().map(|e| e.document.text.clone()).collect();
    if texts.is_empty() {
        return Ok(0);
    }
    gateway.embed(&texts, &llm.embedding_model_id)?;
    Ok(texts.len())
}

enum Extractor<'a> {
    Llm {
        gateway: &'a Gateway,
        template: PromptTemplate,
        train: Option<&'a DatasetSplit>,
        train_vectors: Vec<(&'a Entry, EmbeddingVector)>,
        test_vectors: Vec<EmbeddingVector>,
    },
    Tfidf(IdfTable, HashSet<String>),
    FirstPhrases(HashSet<String>),
}

impl Extractor<'_> {
    fn examples(&self, config: &ExperimentConfig, index: usize, entry: &Entry) -> Result<Vec<&Entry>, HarnessError> {
        let Extractor::Llm {
            template,
            train,
            train_vectors,
            test_vectors,
            ..
        } = self
        else {
            return Ok(Vec::new());
        };
        let (Some(strategy), Some(n)) = (template.fs_strategy, template.fs_n) else {
            return Ok(Vec::new());
        };
        let train = train.ok_or_else(|| HarnessError::Config("few-shot templates need a train split".into()))?;
        let picked = match strategy {
            FewShotStrategy::Fixed => select_fixed(train, n),
            FewShotStrategy::Random => {
                let seed = config.llm.as_ref().and_then(|l| l.seed).unwrap_or_default();
                select_random(train, n, seed, &entry.document.id)
            }
            FewShotStrategy::Closest => select_closest(train_vectors, &test_vectors[index], n),
        };
        picked.map_err(|e| HarnessError::Document {
            doc_id: entry.document.id.clone(),
            message: e.to_string(),
        })
    }

    fn run(&self, config: &ExperimentConfig, index: usize, entry: &Entry) -> Result<ExtractionResult, HarnessError> {
        let doc = &entry.document;
        match self {
            Extractor::Llm { gateway, template, .. } => {
                let examples = self.examples(config, index, entry)?;
                let prompt = build_prompt(template, doc, &examples).map_err(|e| HarnessError::Document {
                    doc_id: doc.id.clone(),
                    message: e.to_string(),
                })?;
                let llm = config.llm.as_ref().expect("validated");
                let mut request = GenerationRequest::greedy(llm.model_id.clone(), prompt.messages);
                request.max_new_tokens = llm.max_new_tokens;
                let generation = gateway.complete(&request)?;
                extract(doc, &generation, &config.extraction).map_err(|e| HarnessError::Document {
                    doc_id: doc.id.clone(),
                    message: e.to_string(),
                })
            }
            Extractor::Tfidf(idf, stopwords) => Ok(tfidf_extract(doc, idf, stopwords, config.baseline.top_n)?),
            Extractor::FirstPhrases(stopwords) => Ok(first_phrases_extract(doc, stopwords, config.baseline.top_n)),
        }
    }
}

struct Extracted {
    results: Vec<Option<ExtractionResult>>,
    failures: Vec<Failure>,
    stats: Option<GatewayStats>,
}

fn run_extraction(config: &ExperimentConfig, test: &DatasetSplit) -> Result<Extracted, HarnessError> {
    config.validate()?;
    let train = load_train(config)?;
    let gateway = match config.method {
        Method::Llm => Some(build_gateway(config)?),
        _ => None,
    };
    let extractor = match config.method {
        Method::Llm => {
            let gateway = gateway.as_ref().expect("built above");
            let llm = config.llm.as_ref().expect("validated");
            let template = llm.template()?;
            let (mut train_vectors, mut test_vectors) = (Vec::new(), Vec::new());
            if template.fs_strategy == Some(FewShotStrategy::Closest) && !test.is_empty() {
                let train = train.as_ref().expect("validated");
                let texts: Vec<String> = train.entries.iter().map(|e| e.document.text.clone()).collect();
                let vectors = gateway.embed(&texts, &llm.embedding_model_id)?;
                train_vectors = train.entries.iter().zip(vectors).collect();
                let texts: Vec<String> = test.entries.iter().map(|e| e.document.text.clone()).collect();
                test_vectors = gateway.embed(&texts, &llm.embedding_model_id)?;
            }
            Extractor::Llm {
                gateway,
                template,
                train: train.as_ref(),
                train_vectors,
                test_vectors,
            }
        }
        Method::Tfidf => {
            let idf = match (&config.baseline.idf_path, &train) {
                (Some(path), _) => IdfTable::load(path)?,
                (None, Some(train)) => IdfTable::from_split(train),
                (None, None) => return Err(HarnessError::Config("tfidf needs a train split or idf table".into())),
            };
            Extractor::Tfidf(idf, english_stopwords())
        }
        Method::Firstphrases => Extractor::FirstPhrases(english_stopwords()),
    };

    let n = test.len();
    let slots: Vec<Mutex<Option<Result<ExtractionResult, HarnessError>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let done = AtomicUsize::new(0);
    let workers = config.concurrency.clamp(1, n.max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = extractor.run(config, i, &test.entries[i]);
                if result.is_err() && !config.skip_failures {
                    stop.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().expect("slot poisoned") = Some(result);
                let finished = done.fetch_add(1, Ordering::SeqCst) + 1;
                log::info!("{finished}/{n} documents processed");
            });
        }
    });

    let mut results = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (slot, entry) in slots.into_iter().zip(&test.entries) {
        match slot.into_inner().expect("slot poisoned") {
            Some(Ok(r)) => results.push(Some(r)),
            Some(Err(e)) => {
                let doc_id = entry.document.id.clone();
                if !config.skip_failures {
                    return Err(HarnessError::Document {
                        doc_id,
                        message: e.to_string(),
                    });
                }
                log::warn!("skipping document {doc_id}: {e}");
                failures.push(Failure {
                    doc_id,
                    error: e.to_string(),
                });
                results.push(None);
            }
            None => results.push(None),
        }
    }
    Ok(Extracted {
        results,
        failures,
        stats: gateway.map(|g| g.stats()),
    })
}

fn extractions_jsonl<'a>(results: impl Iterator<Item = &'a ExtractionResult>) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("extraction serializes"));
        out.push('\n');
    }
    out
}

/// Extracts concepts for every test document and writes
/// `extractions.jsonl` to the output directory, without scoring.
pub fn extract_documents(config: &ExperimentConfig) -> Result<(Vec<ExtractionResult>, Vec<Failure>), HarnessError> {
    let test = load_test(config)?;
    let extracted = run_extraction(config, &test)?;
    let results: Vec<ExtractionResult> = extracted.results.into_iter().flatten().collect();
    let path = RunArtifacts::in_dir(&config.io.output_dir).extractions;
    write_file(&path, &extractions_jsonl(results.iter()))?;
    Ok((results, extracted.failures))
}

fn gold_phrases(entry: &Entry) -> Vec<NormalizedPhrase> {
    entry.gold.keyphrases.iter().filter_map(|p| normalize(p).ok()).collect()
}

/// Runs one experiment end to end and writes its artifacts: extractions,
/// then the manifest, then the reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let test = load_test(config)?;
    let extracted = run_extraction(config, &test)?;

    let mut per_doc = Vec::new();
    for (entry, result) in test.entries.iter().zip(&extracted.results) {
        if let Some(result) = result {
            per_doc.push(score_document(
                &entry.document.id,
                &result.ranked_phrases(),
                &gold_phrases(entry),
                &config.eval.k_values,
                config.eval.recall_denominator,
            )?);
        }
    }
    let report = EvalReport::from_scores(&test.name, &config.model_label(), &config.prompt_label(), per_doc)?;

    let artifacts = RunArtifacts::in_dir(&config.io.output_dir);
    let extractions: Vec<ExtractionResult> = extracted.results.into_iter().flatten().collect();
    write_file(&artifacts.extractions, &extractions_jsonl(extractions.iter()))?;

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        timestamp: timestamp(),
        config: config.clone(),
        dataset: test.name.clone(),
        n_documents: test.len(),
        n_scored: report.per_doc.len(),
        artifacts: artifacts.clone(),
        cache_path: config.io.cache_path.clone(),
        gateway: extracted.stats,
        cache_hit_ratio: extracted.stats.map(|s| s.hit_ratio()),
        failures: extracted.failures,
    };
    write_file(
        &artifacts.manifest,
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    write_file(&artifacts.report_json, &render_report(&report, ReportFormat::Json))?;
    write_file(&artifacts.report_csv, &render_report(&report, ReportFormat::Csv))?;
    write_file(&artifacts.report_txt, &render_report(&report, ReportFormat::Table))?;
    Ok(RunOutcome {
        report,
        manifest,
        extractions,
    })
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub table: ResultsTable,
    pub runs: Vec<Result<RunOutcome, HarnessError>>,
}

/// Runs every config in order, continuing past failed runs, and collects
/// one row per run. With `output_dir` the combined table is written there
/// as `results.csv`, `results.txt` and `results.json`.
pub fn sweep(configs: &[ExperimentConfig], output_dir: Option<&Path>) -> Result<SweepOutcome, HarnessError> {
    if configs.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one config".into()));
    }
    let mut table = ResultsTable::default();
    let mut runs = Vec::with_capacity(configs.len());
    for config in configs {
        let outcome = run_experiment(config);
        match &outcome {
            Ok(run) => table.push_report(&run.report),
            Err(e) => {
                log::error!("run for {} failed: {e}", config.prompt_label());
                let dataset = config.dataset.name.clone().unwrap_or_else(|| {
                    config
                        .dataset
                        .test_path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                });
                table.push_error(&dataset, &config.model_label(), &config.prompt_label(), e.to_string());
            }
        }
        runs.push(outcome);
    }
    if let Some(dir) = output_dir {
        write_file(&dir.join("results.csv"), &table.to_csv())?;
        write_file(&dir.join("results.txt"), &table.to_table())?;
        write_file(&dir.join("results.json"), &table.to_json())?;
    }
    Ok(SweepOutcome { table, runs })
}

/// One config per template name, each writing to its own subdirectory of
/// the base output directory.
pub fn expand_templates(base: &ExperimentConfig, templates: &[String]) -> Result<Vec<ExperimentConfig>, HarnessError> {
    let llm = base
        .llm
        .as_ref()
        .ok_or_else(|| HarnessError::Config("template sweeps need an `llm` section".into()))?;
    templates
        .iter()
        .map(|name| {
            let mut config = base.clone();
            let mut l = llm.clone();
            l.template_name = name.clone();
            l.fs_strategy = None;
            let compact = PromptTemplate::from_name(name, None).is_ok();
            if !name.starts_with("FS-") {
                l.fs_n = None;
                l.seed = None;
            } else if compact {
                l.fs_n = None;
            }
            if let Ok(t) = l.template() {
                if t.fs_strategy != Some(FewShotStrategy::Random) {
                    l.seed = None;
                }
                config.io.output_dir = base.io.output_dir.join(t.display_name());
            } else {
                config.io.output_dir = base.io.output_dir.join(name);
            }
            config.llm = Some(l);
            Ok(config)
        })
        .collect()
}
