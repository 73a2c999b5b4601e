//! Experiment orchestration: configuration, the per-document pipeline,
//! manifests and reports.

pub mod config;
pub mod report;
mod runner;

use std::path::Path;

use thiserror::Error;

pub use config::{
    BackendConfig, BackendKind, BaselineConfig, DatasetConfig, EvalConfig, ExperimentConfig, IoConfig, LlmConfig,
    Method,
};
pub use report::{aligned_table, render_report, ReportFormat, ReportRow, ResultsTable};
pub use runner::{
    build_gateway, embed_split, expand_templates, extract_documents, run_experiment, sweep, Failure, RunArtifacts,
    RunManifest, RunOutcome, SweepOutcome,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("document {doc_id}: {message}")]
    Document { doc_id: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}
