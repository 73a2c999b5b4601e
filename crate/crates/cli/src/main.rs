//! `conextract`: dataset statistics, prompt catalog, embedding cache,
//! extraction runs, sweeps and response-cache maintenance.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod overrides;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use conextract::corpus::{compute_stats, load_split, FieldMap, LoadOptions};
use conextract::gateway::ResponseCache;
use conextract::harness::{
    embed_split, expand_templates, extract_documents, render_report, run_experiment, sweep, HarnessError, ReportFormat,
};
use conextract::prompts::{dump_catalog, list_templates};
use serde_json::json;

use overrides::ConfigArgs;

#[derive(Debug, Parser)]
#[command(
    name = "conextract",
    version,
    about = "Present-concept extraction with LLMs and its evaluation harness"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus statistics for one split.
    Stats {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Field mapping: `default`, `midas` or a JSON object.
        #[arg(long, value_name = "SPEC", default_value = "default")]
        field_map: String,
        /// Reject tokenized documents instead of joining them.
        #[arg(long)]
        no_join_tokens: bool,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// List the prompt templates, or dump them as JSON.
    Prompts {
        #[arg(long)]
        dump: bool,
    },
    /// Fill the embedding cache for a split.
    Embed {
        /// Split to embed; defaults to the configured test split.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extract concepts for every test document without scoring.
    Extract {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extract, score and write reports.
    Run {
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run several experiments and print one combined table.
    Sweep {
        /// Additional config files, one run each.
        #[arg(long = "configs", value_name = "PATH", num_args = 1.., value_delimiter = ',')]
        configs: Vec<PathBuf>,
        /// Expand the base config into one run per template.
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        templates: Vec<String>,
        /// Where to write results.csv/.txt/.json.
        #[arg(long, value_name = "DIR")]
        results_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Inspect or maintain a response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    /// One line per entry: key, backend, creation time, completion length.
    Ls {
        #[arg(long, value_name = "PATH")]
        cache: PathBuf,
    },
    /// Remove every entry.
    Clear {
        #[arg(long, value_name = "PATH")]
        cache: PathBuf,
    },
    /// Write deduplicated entries as JSONL.
    Export {
        #[arg(long, value_name = "PATH")]
        cache: PathBuf,
        /// Destination file; stdout when absent.
        #[arg(long, short = 'o', value_name = "PATH")]
        output: Option<PathBuf>,
    },
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    HarnessError::Config(message.into()).into()
}

fn stats(dataset: &Path, field_map: &str, join_tokens: bool, format: Format) -> Result<String> {
    let options = LoadOptions {
        field_map: FieldMap::parse(field_map).map_err(|e| usage(e.to_string()))?,
        join_tokens,
    };
    let split = load_split(dataset, &options)?;
    let stats = compute_stats(&split)?;
    Ok(match format {
        Format::Table => stats.to_table(),
        Format::Csv => stats.to_csv(),
        Format::Json => serde_json::to_string_pretty(&stats)? + "\n",
    })
}

fn prompts(dump: bool) -> Result<String> {
    if dump {
        return Ok(serde_json::to_string_pretty(&dump_catalog())? + "\n");
    }
    Ok(list_templates().iter().map(|n| format!("{n}\n")).collect())
}

fn embed(dataset: Option<PathBuf>, args: &ConfigArgs) -> Result<String> {
    let mut value = args.merged()?;
    // embedding needs neither a prompt template nor an output directory
    let defaults = [
        (&["llm", "model_id"][..], json!("embeddings")),
        (&["llm", "template_name"][..], json!("ZS-Keyphrases")),
        (&["io", "output_dir"][..], json!(".")),
    ];
    for (path, default) in defaults {
        let mut node = &mut value;
        for key in &path[..path.len() - 1] {
            node = &mut node[*key];
        }
        if node.get(path[path.len() - 1]).is_none() {
            node[path[path.len() - 1]] = default;
        }
    }
    if let Some(path) = &dataset {
        value["dataset"]["test_path"] = json!(path);
    }
    let config = conextract::harness::ExperimentConfig::from_json(&value.to_string())?;
    let llm = config
        .llm
        .as_ref()
        .ok_or_else(|| usage("embedding needs an llm backend"))?;
    let cache = llm
        .embedding_cache_path
        .clone()
        .ok_or_else(|| usage("set --embedding-cache (or llm.embedding_cache_path)"))?;
    let split = load_split(&config.dataset.test_path, &config.dataset.load_options())?;
    let n = embed_split(&config, &split)?;
    Ok(format!(
        "embedded {n} documents with {} into {}\n",
        llm.embedding_model_id,
        cache.display()
    ))
}

fn extract(args: &ConfigArgs) -> Result<String> {
    let config = args.resolve()?;
    let (results, failures) = extract_documents(&config)?;
    let concepts: usize = results.iter().map(|r| r.concepts.len()).sum();
    let mut out = format!(
        "{} documents, {concepts} concepts -> {}\n",
        results.len(),
        config.io.output_dir.join("extractions.jsonl").display()
    );
    for f in failures {
        out.push_str(&format!("skipped {}: {}\n", f.doc_id, f.error));
    }
    Ok(out)
}

fn run(args: &ConfigArgs, format: Format) -> Result<String> {
    let config = args.resolve()?;
    let outcome = run_experiment(&config)?;
    for f in &outcome.manifest.failures {
        log::warn!("skipped {}: {}", f.doc_id, f.error);
    }
    Ok(render_report(&outcome.report, format.into()))
}

/// Prints the combined table; fails with the runtime code when any run failed.
fn run_sweep(
    extra: &[PathBuf],
    templates: &[String],
    results_dir: Option<PathBuf>,
    args: &ConfigArgs,
    format: Format,
) -> Result<String> {
    let mut configs = Vec::new();
    if args.config.is_some() || extra.is_empty() {
        configs.push(args.resolve()?);
    }
    for path in extra {
        let file_args = ConfigArgs {
            config: Some(path.clone()),
            ..args.clone()
        };
        configs.push(file_args.resolve()?);
    }
    let mut results_dir = results_dir;
    if !templates.is_empty() {
        if configs.len() != 1 {
            return Err(usage("--templates expands exactly one base config"));
        }
        results_dir = results_dir.or_else(|| Some(configs[0].io.output_dir.clone()));
        configs = expand_templates(&configs[0], templates)?;
        for c in &configs {
            c.validate()?;
        }
    }
    let outcome = sweep(&configs, results_dir.as_deref())?;
    let table = match format {
        Format::Table => outcome.table.to_table(),
        Format::Csv => outcome.table.to_csv(),
        Format::Json => outcome.table.to_json(),
    };
    let failed = outcome.runs.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        print!("{table}");
        return Err(anyhow!("{failed} of {} runs failed", outcome.runs.len()));
    }
    Ok(table)
}

fn existing_cache(path: &Path) -> Result<ResponseCache> {
    if !path.exists() {
        return Err(anyhow!("no response cache at {}", path.display()));
    }
    Ok(ResponseCache::open(path)?)
}

fn cache(action: &CacheAction) -> Result<String> {
    match action {
        CacheAction::Ls { cache } => {
            let entries = existing_cache(cache)?.entries()?;
            let mut out = String::new();
            for e in &entries {
                out.push_str(&format!(
                    "{}  {}  {}  {} chars  {} tokens\n",
                    e.key,
                    e.value.backend_id,
                    e.created_at,
                    e.value.text.chars().count(),
                    e.value.tokens.len()
                ));
            }
            out.push_str(&format!("{} entries\n", entries.len()));
            Ok(out)
        }
        CacheAction::Clear { cache } => {
            let c = existing_cache(cache)?;
            let n = c.len();
            c.clear()?;
            Ok(format!("removed {n} entries from {}\n", cache.display()))
        }
        CacheAction::Export { cache, output } => {
            let mut lines = String::new();
            for e in existing_cache(cache)?.entries()? {
                lines.push_str(&serde_json::to_string(&e)?);
                lines.push('\n');
            }
            match output {
                Some(path) => {
                    std::fs::write(path, &lines).with_context(|| format!("writing {}", path.display()))?;
                    Ok(String::new())
                }
                None => Ok(lines),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Stats {
            dataset,
            field_map,
            no_join_tokens,
            format,
        } => stats(&dataset, &field_map, !no_join_tokens, format),
        Command::Prompts { dump } => prompts(dump),
        Command::Embed { dataset, config } => embed(dataset, &config),
        Command::Extract { config } => extract(&config),
        Command::Run { format, config } => run(&config, format),
        Command::Sweep {
            configs,
            templates,
            results_dir,
            format,
            config,
        } => run_sweep(&configs, &templates, results_dir, &config, format),
        Command::Cache { action } => cache(&action),
    }
}

fn exit_code(error: &anyhow::Error) -> u8 {
    match error.downcast_ref::<HarnessError>() {
        Some(e) => e.exit_code() as u8,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
