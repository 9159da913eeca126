//! Aggregate tables, iteration curves and run comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{RunResult, SampleResult};
use crate::agent::Mode;
use crate::sample::{Language, TaskType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("run has no scored samples")]
    EmptyRun,
    #[error("run mode {0} has no refinement rounds, so there is no iteration curve")]
    NotIterative(Mode),
    #[error("runs use different datasets: {a} vs {b}")]
    DatasetMismatch { a: String, b: String },
}

/// How the Average column combines task columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over represented task columns.
    #[default]
    Tasks,
    /// Mean over all scored samples.
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskColumn {
    pub task: TaskType,
    /// Mean final-answer score × 100.
    pub score: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTable {
    pub columns: Vec<TaskColumn>,
    pub average: f64,
    pub averaging: Averaging,
    pub scored: usize,
    pub failed: usize,
}

impl TaskTable {
    pub fn get(&self, task: TaskType) -> Option<f64> {
        self.columns.iter().find(|c| c.task == task).map(|c| c.score)
    }

    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = self.columns.iter().map(|c| c.task.label().to_string()).collect();
        header.push("Average".into());
        let mut row: Vec<String> = self.columns.iter().map(|c| fmt1(c.score)).collect();
        row.push(fmt1(self.average));
        let mut out = render_table(&header, &[row]);
        let _ = writeln!(out, "scored: {}  failed: {}", self.scored, self.failed);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.columns.iter().map(|c| c.task.label().to_string()).collect();
        header.push("Average".into());
        w.write_record(&header).expect("in-memory write");
        let mut row: Vec<String> = self.columns.iter().map(|c| c.score.to_string()).collect();
        row.push(self.average.to_string());
        w.write_record(&row).expect("in-memory write");
        finish_csv(w)
    }
}

pub(crate) fn fmt1(v: f64) -> String {
    format!("{v:.1}")
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Right-aligned columns under a left-aligned first column.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, cell) in r.iter().enumerate().take(n) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = widths[i].saturating_sub(cell.chars().count());
            if i == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * n.saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-task means of `score_of` over scored records, in report order.
fn task_means<'a>(
    records: impl IntoIterator<Item = &'a SampleResult>,
    score_of: impl Fn(&SampleResult) -> Option<f64>,
) -> (Vec<TaskColumn>, Vec<f64>) {
    let mut by_task: BTreeMap<TaskType, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = score_of(r) {
            by_task.entry(r.task_type).or_default().push(v);
        }
    }
    let all: Vec<f64> = by_task.values().flatten().copied().collect();
    let columns = TaskType::ALL
        .into_iter()
        .filter_map(|t| {
            by_task.get(&t).map(|v| TaskColumn { task: t, score: 100.0 * mean(v), samples: v.len() })
        })
        .collect();
    (columns, all)
}

pub(crate) fn aggregate_records<'a>(
    records: impl IntoIterator<Item = &'a SampleResult> + Clone,
    averaging: Averaging,
) -> Option<TaskTable> {
    let failed = records.clone().into_iter().filter(|r| !r.is_scored()).count();
    let (columns, all) = task_means(records, SampleResult::final_score);
    if columns.is_empty() {
        return None;
    }
    let average = match averaging {
        Averaging::Tasks => mean(&columns.iter().map(|c| c.score).collect::<Vec<_>>()),
        Averaging::Samples => 100.0 * mean(&all),
    };
    Some(TaskTable { columns, average, averaging, scored: all.len(), failed })
}

/// Final-answer scores per task, × 100.
pub fn aggregate(run: &RunResult) -> Result<TaskTable, ReportError> {
    aggregate_with(run, Averaging::Tasks)
}

pub fn aggregate_with(run: &RunResult, averaging: Averaging) -> Result<TaskTable, ReportError> {
    aggregate_records(&run.records, averaging).ok_or(ReportError::EmptyRun)
}

pub fn aggregate_by_language(run: &RunResult) -> BTreeMap<Language, TaskTable> {
    let mut langs: Vec<Language> = run.records.iter().map(|r| r.language).collect();
    langs.sort();
    langs.dedup();
    langs
        .into_iter()
        .filter_map(|l| {
            aggregate_records(run.records.iter().filter(|r| r.language == l), Averaging::Tasks).map(|t| (l, t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u32,
    /// Per-task score × 100, aligned with [`IterationCurve::tasks`].
    pub scores: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCurve {
    pub tasks: Vec<TaskType>,
    pub points: Vec<CurvePoint>,
}

impl IterationCurve {
    pub fn averages(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.average).collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["Iteration".to_string()];
        h.extend(self.tasks.iter().map(|t| t.label().to_string()));
        h.push("Average".into());
        h
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                let mut r = vec![p.iteration.to_string()];
                r.extend(p.scores.iter().map(|&v| fmt1(v)));
                r.push(fmt1(p.average));
                r
            })
            .collect();
        render_table(&self.header(), &rows)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for p in &self.points {
            let mut r = vec![p.iteration.to_string()];
            r.extend(p.scores.iter().map(f64::to_string));
            r.push(p.average.to_string());
            w.write_record(&r).expect("in-memory write");
        }
        finish_csv(w)
    }
}

/// Per-task averages of the answer after each round (round 0 is the
/// zero-shot answer).
pub fn iteration_curve(run: &RunResult) -> Result<IterationCurve, ReportError> {
    if !run.mode.is_iterative() {
        return Err(ReportError::NotIterative(run.mode));
    }
    let mut points = Vec::new();
    let mut tasks = Vec::new();
    for i in 0..=run.max_iterations {
        let (columns, _) = task_means(&run.records, |r| {
            r.is_scored().then(|| r.scores.get(i as usize).map(|s| s.value)).flatten()
        });
        if columns.is_empty() {
            return Err(ReportError::EmptyRun);
        }
        tasks = columns.iter().map(|c| c.task).collect();
        let scores: Vec<f64> = columns.iter().map(|c| c.score).collect();
        points.push(CurvePoint { iteration: i, average: mean(&scores), scores });
    }
    Ok(IterationCurve { tasks, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

impl Delta {
    fn new(a: f64, b: f64) -> Self {
        Self { a, b, delta: b - a }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub sample_id: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub dataset_hash: String,
    /// Tasks scored in both runs, × 100.
    pub columns: Vec<(TaskType, Delta)>,
    pub average: Delta,
    /// Final-answer differences for samples scored in both runs.
    pub paired: Vec<PairedDiff>,
}

impl Comparison {
    fn header(&self) -> Vec<String> {
        let mut h = vec![String::new()];
        h.extend(self.columns.iter().map(|(t, _)| t.label().to_string()));
        h.push("Average".into());
        h
    }

    fn rows(&self, cell: impl Fn(f64) -> String) -> Vec<Vec<String>> {
        type Pick = fn(&Delta) -> f64;
        let pick: [(&str, Pick); 3] = [("a", |d| d.a), ("b", |d| d.b), ("delta", |d| d.delta)];
        pick.iter()
            .map(|(name, f)| {
                let mut r = vec![name.to_string()];
                r.extend(self.columns.iter().map(|(_, d)| cell(f(d))));
                r.push(cell(f(&self.average)));
                r
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut rows = self.rows(fmt1);
        for cell in rows[2].iter_mut().skip(1) {
            if !cell.starts_with('-') {
                cell.insert(0, '+');
            }
        }
        let mut out = format!("a = {}\nb = {}\n", self.run_a, self.run_b);
        out.push_str(&render_table(&self.header(), &rows));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in self.rows(|v| v.to_string()) {
            w.write_record(&r).expect("in-memory write");
        }
        finish_csv(w)
    }
}

/// Deltas `b − a` per task and for the average.
pub fn compare_runs(a: &RunResult, b: &RunResult) -> Result<Comparison, ReportError> {
    if a.dataset_hash != b.dataset_hash {
        return Err(ReportError::DatasetMismatch { a: a.dataset_hash.clone(), b: b.dataset_hash.clone() });
    }
    let ta = aggregate(a)?;
    let tb = aggregate(b)?;
    let columns = ta
        .columns
        .iter()
        .filter_map(|ca| tb.get(ca.task).map(|sb| (ca.task, Delta::new(ca.score, sb))))
        .collect();
    let finals_b: BTreeMap<&str, f64> =
        b.records.iter().filter_map(|r| r.final_score().map(|v| (r.sample_id.as_str(), v))).collect();
    let paired = a
        .records
        .iter()
        .filter_map(|r| {
            let va = r.final_score()?;
            let vb = *finals_b.get(r.sample_id.as_str())?;
            Some(PairedDiff { sample_id: r.sample_id.clone(), a: va, b: vb, delta: vb - va })
        })
        .collect();
    Ok(Comparison {
        run_a: a.run_id.clone(),
        run_b: b.run_id.clone(),
        dataset_hash: a.dataset_hash.clone(),
        columns,
        average: Delta::new(ta.average, tb.average),
        paired,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub mode: Mode,
    pub label: String,
    pub scores: Vec<Option<f64>>,
    pub average: f64,
}

/// One row per run, one column per task any run scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub tasks: Vec<TaskType>,
    pub rows: Vec<MethodRow>,
}

impl MethodTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["Method".to_string()];
        h.extend(self.tasks.iter().map(|t| t.label().to_string()));
        h.push("Average".into());
        h
    }

    fn cells(&self, cell: impl Fn(f64) -> String) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut out = vec![r.label.clone()];
                out.extend(r.scores.iter().map(|s| s.map_or_else(|| "-".to_string(), &cell)));
                out.push(cell(r.average));
                out
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        render_table(&self.header(), &self.cells(fmt1))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in self.cells(|v| v.to_string()) {
            w.write_record(&r).expect("in-memory write");
        }
        finish_csv(w)
    }
}

/// Method comparison over runs of one dataset, rows in the given order.
pub fn method_table(runs: &[&RunResult]) -> Result<MethodTable, ReportError> {
    let Some(first) = runs.first() else {
        return Err(ReportError::EmptyRun);
    };
    let mut tables = Vec::with_capacity(runs.len());
    for run in runs {
        if run.dataset_hash != first.dataset_hash {
            return Err(ReportError::DatasetMismatch {
                a: first.dataset_hash.clone(),
                b: run.dataset_hash.clone(),
            });
        }
        tables.push(aggregate(run)?);
    }
    let tasks: Vec<TaskType> = TaskType::ALL
        .into_iter()
        .filter(|t| tables.iter().any(|tb| tb.get(*t).is_some()))
        .collect();
    let rows = runs
        .iter()
        .zip(&tables)
        .map(|(run, tb)| MethodRow {
            mode: run.mode,
            label: run.mode.label().to_string(),
            scores: tasks.iter().map(|&t| tb.get(t)).collect(),
            average: tb.average,
        })
        .collect();
    Ok(MethodTable { tasks, rows })
}
