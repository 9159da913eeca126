//! Benchmark runs: execute episodes over a dataset, score every
//! intermediate answer, checkpoint, and write a run directory.
//!
//! Run directory layout:
//!
//! | file | contents |
//! |---|---|
//! | `config.json` | agent config, ANLS threshold, backend, dataset and template hashes |
//! | `checkpoint.jsonl` | one completed episode per line, appended as samples finish |
//! | `episodes.jsonl` | every episode trace in dataset order, failed ones included |
//! | `scores.jsonl` | per-sample status and per-round scores |
//! | `result.json` | the full [`RunResult`] |
//! | `report.txt` | aligned aggregate tables (and the iteration curve) |
//! | `aggregate.csv`, `curve.csv` | the same tables as CSV |
//! | `timing.json` | wall-clock statistics, kept apart so results stay reproducible |

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use futures::stream::{self, StreamExt};
use ocr_reflect_metrics::{MetricScore, DEFAULT_ANLS_THRESHOLD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{export_traces, Agent, AgentConfig, EpisodeState, Mode};
use crate::sample::{Language, Sample, TaskType};

mod dataset;
mod report;
mod scoring;

pub use dataset::{load_dataset, parse_dataset, Dataset, DatasetError, LineDiagnostic};
pub use report::{
    aggregate, aggregate_by_language, aggregate_with, compare_runs, iteration_curve, method_table, render_table,
    Averaging, Comparison, CurvePoint, Delta, IterationCurve, MethodRow, MethodTable, PairedDiff, ReportError,
    TaskColumn, TaskTable,
};
pub use scoring::{extract_counts, parse_box, parse_key_values, parse_spots, score_answer, spotting_f1, SPOTTING_IOU_GATE};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const REPORT_FILE: &str = "report.txt";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const CURVE_CSV: &str = "curve.csv";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Episodes in flight at once.
    pub workers: usize,
    /// Skip samples already in the checkpoint.
    pub resume: bool,
    /// Stop after this many newly executed samples (simulates an
    /// interruption; the run then reports [`HarnessError::Interrupted`]).
    pub limit: Option<usize>,
    pub anls_threshold: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 4, resume: false, limit: None, anls_threshold: DEFAULT_ANLS_THRESHOLD }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("checkpoint belongs to run {found}, not {expected}; use a fresh output directory or drop --resume")]
    CheckpointMismatch { expected: String, found: String },
    #[error("run interrupted after {completed} new sample(s); {remaining} remain (resume to finish)")]
    Interrupted { completed: usize, remaining: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Scored,
    Failed,
}

/// Outcome for one sample. The full trace lives in `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub task_type: TaskType,
    pub language: Language,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub answers: Vec<String>,
    /// Score of each answer, round 0 first. Empty for failed samples.
    pub scores: Vec<MetricScore>,
}

impl SampleResult {
    pub fn is_scored(&self) -> bool {
        self.status == SampleStatus::Scored
    }

    pub fn final_score(&self) -> Option<f64> {
        if self.is_scored() {
            self.scores.last().map(|s| s.value)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub mode: Mode,
    pub max_iterations: u32,
    pub config_hash: String,
    pub dataset_hash: String,
    pub template_hash: String,
    pub template_hashes: BTreeMap<String, String>,
    pub backend: String,
    pub records: Vec<SampleResult>,
    pub aggregate: Option<TaskTable>,
    pub by_language: BTreeMap<Language, TaskTable>,
    pub scored: usize,
    pub failed: usize,
    /// Episodes whose rendered memory had to be summarized.
    pub memory_truncated: usize,
}

/// Everything needed to re-execute a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub agent: AgentConfig,
    pub anls_threshold: f64,
    pub backend: String,
    pub dataset: PathBuf,
    pub dataset_hash: String,
    pub template_set: String,
    pub template_hash: String,
    pub template_hashes: BTreeMap<String, String>,
    pub taxonomy_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub executed: usize,
    pub resumed: usize,
    pub mean_episode_seconds: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    run_id: String,
    episode: EpisodeState,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunConfig {
    pub fn new(dataset: &Dataset, agent: &Agent, anls_threshold: f64) -> Self {
        let mut cfg = Self {
            run_id: String::new(),
            agent: agent.config().clone(),
            anls_threshold,
            backend: agent.backend().describe(),
            dataset: dataset.source.clone(),
            dataset_hash: dataset.hash.clone(),
            template_set: agent.templates().id().to_string(),
            template_hash: agent.templates().hash(),
            template_hashes: agent.templates().template_hashes(),
            taxonomy_hash: agent.taxonomy().fingerprint(),
        };
        cfg.run_id = cfg.config_hash()[..16].to_string();
        cfg
    }

    /// Hash of everything that can change results. The dataset path is
    /// left out so a moved dataset keeps its run id.
    pub fn config_hash(&self) -> String {
        let canon = serde_json::json!({
            "agent": self.agent,
            "anls_threshold": self.anls_threshold,
            "backend": self.backend,
            "dataset_hash": self.dataset_hash,
            "template_hash": self.template_hash,
            "taxonomy_hash": self.taxonomy_hash,
        });
        sha_hex(canon.to_string().as_bytes())
    }
}

fn score_episode(sample: &Sample, state: &EpisodeState, tau: f64) -> SampleResult {
    SampleResult {
        sample_id: sample.id.clone(),
        task_type: sample.task_type,
        language: sample.language,
        status: SampleStatus::Scored,
        error: None,
        answers: state.answers.clone(),
        scores: state.answers.iter().map(|a| score_answer(sample, a, tau)).collect(),
    }
}

fn read_checkpoint(path: &Path, run_id: &str) -> Result<HashMap<String, EpisodeState>, HarnessError> {
    let mut done = HashMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(done);
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(io_err(path))?;
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CheckpointEntry>(line) {
            Ok(entry) if entry.run_id != run_id => {
                return Err(HarnessError::CheckpointMismatch { expected: run_id.into(), found: entry.run_id })
            }
            Ok(entry) => {
                done.insert(entry.episode.sample_id.clone(), entry.episode);
            }
            // A write cut short by a kill; that sample simply reruns.
            Err(e) if i == last => tracing::warn!("ignoring truncated checkpoint tail: {e}"),
            Err(e) => {
                return Err(HarnessError::Corrupt {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(done)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("run artifacts serialize");
    out.push(b'\n');
    out
}

/// Runs every sample of `dataset` through `agent` and writes the run
/// directory `out_dir`. Backend failures mark samples failed; only I/O on
/// the run directory aborts.
pub async fn run_benchmark(
    dataset: &Dataset,
    agent: &Agent,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunResult, HarnessError> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let config = RunConfig::new(dataset, agent, opts.anls_threshold);
    write_file(&out_dir.join(CONFIG_FILE), &to_json_pretty(&config))?;

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let mut done = if opts.resume { read_checkpoint(&ckpt_path, &config.run_id)? } else { HashMap::new() };
    done.retain(|id, _| dataset.get(id).is_some());
    let resumed = done.len();
    if !opts.resume {
        File::create(&ckpt_path).map_err(io_err(&ckpt_path))?;
    }

    let pending: Vec<&Sample> = dataset.samples.iter().filter(|s| !done.contains_key(&s.id)).collect();
    let take = opts.limit.unwrap_or(pending.len()).min(pending.len());
    let mut ckpt = OpenOptions::new().append(true).create(true).open(&ckpt_path).map_err(io_err(&ckpt_path))?;

    let mut failed: HashMap<String, (EpisodeState, String)> = HashMap::new();
    let mut episode_seconds = Vec::with_capacity(take);
    let mut outcomes = stream::iter(pending[..take].iter().copied())
        .map(|sample| async move {
            let t = Instant::now();
            (sample, agent.run_episode(sample).await, t.elapsed().as_secs_f64())
        })
        .buffered(opts.workers.max(1));
    while let Some((sample, outcome, secs)) = outcomes.next().await {
        episode_seconds.push(secs);
        match outcome {
            Ok(state) => {
                let entry = CheckpointEntry { run_id: config.run_id.clone(), episode: state };
                let mut line = serde_json::to_vec(&entry).expect("episode serializes");
                line.push(b'\n');
                ckpt.write_all(&line).and_then(|_| ckpt.flush()).map_err(io_err(&ckpt_path))?;
                done.insert(sample.id.clone(), entry.episode);
            }
            Err(e) => {
                tracing::warn!(sample = %sample.id, "episode failed: {}", e.failure);
                failed.insert(sample.id.clone(), (*e.state, e.failure.to_string()));
            }
        }
    }
    drop(outcomes);
    if take < pending.len() {
        return Err(HarnessError::Interrupted { completed: take, remaining: pending.len() - take });
    }

    let mut records = Vec::with_capacity(dataset.len());
    let mut episodes = Vec::with_capacity(dataset.len());
    for sample in &dataset.samples {
        if let Some(state) = done.remove(&sample.id) {
            records.push(score_episode(sample, &state, opts.anls_threshold));
            episodes.push(state);
        } else if let Some((state, error)) = failed.remove(&sample.id) {
            records.push(SampleResult {
                sample_id: sample.id.clone(),
                task_type: sample.task_type,
                language: sample.language,
                status: SampleStatus::Failed,
                error: Some(error),
                answers: state.answers.clone(),
                scores: Vec::new(),
            });
            episodes.push(state);
        }
    }

    let mut result = RunResult {
        run_id: config.run_id.clone(),
        mode: config.agent.mode,
        max_iterations: config.agent.max_iterations,
        config_hash: config.config_hash(),
        dataset_hash: config.dataset_hash.clone(),
        template_hash: config.template_hash.clone(),
        template_hashes: config.template_hashes.clone(),
        backend: config.backend.clone(),
        scored: records.iter().filter(|r| r.is_scored()).count(),
        failed: records.iter().filter(|r| !r.is_scored()).count(),
        memory_truncated: episodes.iter().filter(|e| e.memory_truncated).count(),
        records,
        aggregate: None,
        by_language: BTreeMap::new(),
    };
    result.aggregate = aggregate(&result).ok();
    result.by_language = aggregate_by_language(&result);

    let mut traces = Vec::new();
    export_traces(&episodes, &mut traces).map_err(|e| HarnessError::Corrupt {
        path: out_dir.join(EPISODES_FILE).display().to_string(),
        message: e.to_string(),
    })?;
    write_file(&out_dir.join(EPISODES_FILE), &traces)?;
    let mut scores = Vec::new();
    for r in &result.records {
        serde_json::to_writer(&mut scores, r).expect("scores serialize");
        scores.push(b'\n');
    }
    write_file(&out_dir.join(SCORES_FILE), &scores)?;
    write_file(&out_dir.join(RESULT_FILE), &to_json_pretty(&result))?;
    write_reports(&result, out_dir)?;

    let timing = Timing {
        wall_seconds: started.elapsed().as_secs_f64(),
        executed: episode_seconds.len(),
        resumed,
        mean_episode_seconds: (!episode_seconds.is_empty())
            .then(|| episode_seconds.iter().sum::<f64>() / episode_seconds.len() as f64),
    };
    write_file(&out_dir.join(TIMING_FILE), &to_json_pretty(&timing))?;
    Ok(result)
}

/// Human-readable summary of a run: overall and per-language tables, plus
/// the iteration curve for iterative modes.
pub fn render_report(result: &RunResult) -> String {
    let mut out = format!(
        "run {}  mode {}  rounds {}  scored {}  failed {}\n\n",
        result.run_id, result.mode, result.max_iterations, result.scored, result.failed
    );
    match &result.aggregate {
        Some(t) => out.push_str(&t.to_text()),
        None => out.push_str("no scored samples\n"),
    }
    if result.by_language.len() > 1 {
        for (lang, t) in &result.by_language {
            out.push_str(&format!("\n[{lang}]\n"));
            out.push_str(&t.to_text());
        }
    }
    if let Ok(curve) = iteration_curve(result) {
        out.push_str("\nper-round scores\n");
        out.push_str(&curve.to_text());
    }
    if result.memory_truncated > 0 {
        out.push_str(&format!("\nmemory summarized to fit the budget in {} episode(s)\n", result.memory_truncated));
    }
    out
}

fn write_reports(result: &RunResult, out_dir: &Path) -> Result<(), HarnessError> {
    write_file(&out_dir.join(REPORT_FILE), render_report(result).as_bytes())?;
    if let Some(t) = &result.aggregate {
        write_file(&out_dir.join(AGGREGATE_CSV), t.to_csv().as_bytes())?;
    }
    if let Ok(curve) = iteration_curve(result) {
        write_file(&out_dir.join(CURVE_CSV), curve.to_csv().as_bytes())?;
    }
    Ok(())
}

/// Reads `result.json` from a run directory.
pub fn load_run(dir: &Path) -> Result<RunResult, HarnessError> {
    let path = dir.join(RESULT_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Corrupt { path: path.display().to_string(), message: e.to_string() })
}

/// Scores externally produced answers (sample id → answer) as a naive run.
/// Unknown ids are returned separately.
pub fn score_predictions(
    dataset: &Dataset,
    predictions: &BTreeMap<String, String>,
    anls_threshold: f64,
) -> (RunResult, Vec<String>) {
    let unknown: Vec<String> = predictions.keys().filter(|id| dataset.get(id).is_none()).cloned().collect();
    let records: Vec<SampleResult> = dataset
        .samples
        .iter()
        .filter_map(|s| {
            let answer = predictions.get(&s.id)?;
            Some(SampleResult {
                sample_id: s.id.clone(),
                task_type: s.task_type,
                language: s.language,
                status: SampleStatus::Scored,
                error: None,
                answers: vec![answer.clone()],
                scores: vec![score_answer(s, answer, anls_threshold)],
            })
        })
        .collect();
    let mut result = RunResult {
        run_id: format!("predictions-{}", &sha_hex(serde_json::to_string(predictions).unwrap().as_bytes())[..16]),
        mode: Mode::Naive,
        max_iterations: 0,
        config_hash: String::new(),
        dataset_hash: dataset.hash.clone(),
        template_hash: String::new(),
        template_hashes: BTreeMap::new(),
        backend: "external".into(),
        scored: records.len(),
        failed: 0,
        memory_truncated: 0,
        records,
        aggregate: None,
        by_language: BTreeMap::new(),
    };
    result.aggregate = aggregate(&result).ok();
    result.by_language = aggregate_by_language(&result);
    (result, unknown)
}
