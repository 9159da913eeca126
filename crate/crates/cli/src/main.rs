//! `ocr-reflect`: run, report, validate and score benchmark runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ocr_reflect::agent::Agent;
use ocr_reflect::backend::{HttpBackend, ModelBackend, ScriptedBackend, ScriptedFixture};
use ocr_reflect::capability::Taxonomy;
use ocr_reflect::harness::{
    compare_runs, iteration_curve, load_dataset, load_run, method_table, parse_dataset, render_report, run_benchmark,
    score_predictions, DatasetError, RunOptions, RunResult,
};

use crate::config::{layered, BackendChoice, CliConfig, Settings};

/// Snapshot of the resolved settings, loadable with `run --config`.
const CLI_CONFIG_FILE: &str = "cli_config.toml";

/// Answers the built-in mock gives when no fixture file is supplied.
const MOCK_INITIAL: &str = "ANSWER: unknown";
const MOCK_REFLECT: &str = "The answer may be incomplete.\nSTEP: re-read the question and the relevant region";
const MOCK_REFINE: &str = "ANSWER: unknown";

#[derive(Parser)]
#[command(name = "ocr-reflect", version, about = "Capability-filtered, memory-conditioned reflection for OCR")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every dataset sample through the agent and write a run directory.
    Run(Box<RunArgs>),
    /// Print tables for one or more finished runs.
    Report(ReportArgs),
    /// Check a dataset file against the schema.
    Validate {
        dataset: PathBuf,
    },
    /// Score externally produced answers without running episodes.
    Score(ScoreArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config file (also OCR_REFLECT_CONFIG).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue a run from its checkpoint.
    #[arg(long)]
    resume: bool,
    /// Stop after this many newly executed samples.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Run directories; several produce a method comparison table.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Per-iteration averages instead of the final-answer table.
    #[arg(long)]
    curves: bool,
    /// Per-task deltas against another run of the same dataset.
    #[arg(long, value_name = "RUN_DIR")]
    compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(clap::Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// JSON object of id → answer, or JSONL lines of {"id", "answer"}.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = RunOptions::default().anls_threshold)]
    tau: f64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

/// Errors that map to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();

    let outcome = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Report(args) => cmd_report(&args),
        Command::Validate { dataset } => cmd_validate(&dataset),
        Command::Score(args) => cmd_score(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn warn_unknown_env() {
    for (var, _) in std::env::vars() {
        let known = var == config::CONFIG_ENV || Settings::KEYS.iter().any(|&(_, v)| v == var);
        if var.starts_with("OCR_REFLECT_") && !known {
            eprintln!("warning: ignoring unknown environment variable {var}");
        }
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    warn_unknown_env();
    let settings = layered(args.settings, args.config.as_deref(), |k| std::env::var(k).ok()).map_err(usage)?;
    let mut cfg = CliConfig::resolve(settings).map_err(usage)?;
    // Absolute paths keep the snapshot valid from any working directory.
    cfg.dataset = absolute(&cfg.dataset);
    cfg.taxonomy = cfg.taxonomy.as_deref().map(absolute);
    if let BackendChoice::Mock { fixture: Some(f) } = &mut cfg.backend {
        *f = absolute(f);
    }

    let dataset = load_dataset(&cfg.dataset, cfg.strict)?;
    if dataset.is_empty() {
        bail!("dataset {} has no usable samples", cfg.dataset.display());
    }
    let backend: Arc<dyn ModelBackend> = match &cfg.backend {
        BackendChoice::Mock { fixture: Some(path) } => Arc::new(ScriptedBackend::new(
            ScriptedFixture::load(path).with_context(|| format!("loading fixture {}", path.display()))?,
        )),
        BackendChoice::Mock { fixture: None } => {
            Arc::new(ScriptedBackend::new(ScriptedFixture::constant(MOCK_INITIAL, MOCK_REFLECT, MOCK_REFINE)))
        }
        BackendChoice::Http(http) => Arc::new(HttpBackend::new(http.clone())?),
    };
    let mut agent = Agent::new(backend, cfg.agent.clone()).map_err(usage)?;
    if let Some(path) = &cfg.taxonomy {
        agent = agent.with_taxonomy(Taxonomy::load(path)?);
    }

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let snapshot = toml::to_string(&cfg.snapshot()).context("serializing settings")?;
    std::fs::write(cfg.out.join(CLI_CONFIG_FILE), snapshot)?;

    let opts = RunOptions { workers: cfg.workers, resume: args.resume, limit: args.limit, anls_threshold: cfg.tau };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let result = runtime.block_on(run_benchmark(&dataset, &agent, &cfg.out, &opts))?;
    print!("{}", render_report(&result));
    println!("run directory: {}", cfg.out.display());
    Ok(ExitCode::SUCCESS)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_report(args: &ReportArgs) -> anyhow::Result<ExitCode> {
    let runs: Vec<RunResult> = args
        .runs
        .iter()
        .map(|d| load_run(d).with_context(|| format!("loading run {}", d.display())))
        .collect::<Result<_, _>>()?;
    let out = if let Some(other) = &args.compare {
        if runs.len() != 1 {
            return Err(usage("--compare takes exactly one run directory"));
        }
        let other = load_run(other).with_context(|| format!("loading run {}", other.display()))?;
        let cmp = compare_runs(&runs[0], &other)?;
        match args.format {
            Format::Text => cmp.to_text(),
            Format::Csv => cmp.to_csv(),
            Format::Json => to_json(&cmp),
        }
    } else if args.curves {
        let mut out = String::new();
        for run in &runs {
            let curve = iteration_curve(run).with_context(|| format!("run {}", run.run_id))?;
            out.push_str(&match args.format {
                Format::Text => curve.to_text(),
                Format::Csv => curve.to_csv(),
                Format::Json => to_json(&curve),
            });
        }
        out
    } else if runs.len() > 1 {
        let table = method_table(&runs.iter().collect::<Vec<_>>())?;
        match args.format {
            Format::Text => table.to_text(),
            Format::Csv => table.to_csv(),
            Format::Json => to_json(&table),
        }
    } else {
        let run = &runs[0];
        match (args.format, &run.aggregate) {
            (Format::Text, _) => render_report(run),
            (Format::Csv, Some(t)) => t.to_csv(),
            (Format::Json, Some(t)) => to_json(t),
            (_, None) => bail!("run {} has no scored samples", run.run_id),
        }
    };
    std::io::stdout().write_all(out.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(path: &Path) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let (samples, errors) = match parse_dataset(&text, base, false) {
        Ok(ds) => {
            for d in &ds.diagnostics {
                println!("{}:{d}", path.display());
            }
            (ds.len(), ds.diagnostics.len())
        }
        Err(DatasetError::DuplicateId { id, first, second }) => {
            println!("{}:line {second}: duplicate id {id:?} (first on line {first})", path.display());
            (0, 1)
        }
        Err(e) => return Err(e.into()),
    };
    println!("{samples} samples, {errors} errors");
    Ok(if errors == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    #[serde(alias = "sample_id")]
    id: String,
    answer: String,
}

fn parse_predictions(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, String>>(text) {
        return Ok(map);
    }
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine = serde_json::from_str(line).with_context(|| format!("predictions line {}", i + 1))?;
        out.insert(p.id, p.answer);
    }
    Ok(out)
}

fn cmd_score(args: &ScoreArgs) -> anyhow::Result<ExitCode> {
    if !(0.0..=1.0).contains(&args.tau) {
        return Err(usage(format!("--tau {} is outside [0, 1]", args.tau)));
    }
    let dataset = load_dataset(&args.dataset, true)?;
    let text = std::fs::read_to_string(&args.predictions)
        .with_context(|| format!("reading {}", args.predictions.display()))?;
    let predictions = parse_predictions(&text)?;
    if predictions.is_empty() {
        tracing::warn!("predictions file is empty");
        eprintln!("warning: no predictions to score");
    }
    let (run, unknown) = score_predictions(&dataset, &predictions, args.tau);
    for id in &unknown {
        eprintln!("warning: unknown sample id {id:?}");
    }
    let out = match (args.format, &run.aggregate) {
        (Format::Json, _) => to_json(&run),
        (Format::Csv, Some(t)) => t.to_csv(),
        (Format::Csv, None) => String::new(),
        (Format::Text, Some(t)) => t.to_text(),
        (Format::Text, None) => "no samples scored\n".to_string(),
    };
    std::io::stdout().write_all(out.as_bytes())?;
    eprintln!("coverage: scored {} of {} samples", run.scored, dataset.len());
    Ok(ExitCode::SUCCESS)
}
