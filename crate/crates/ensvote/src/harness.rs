//! Benchmark runs: reference tests per source, ensemble selection per task,
//! and the resulting report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ensvote_core::bench::{achievable_accuracy, pass_at_1, per_source_accuracy, RunRecord, NO_SELECTION};
use ensvote_core::{Candidate, EnsembleConfig, SelectionResult, Task, TieBreakReason};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::DiffBackend;
use crate::pipeline::{select_for_task, PairDetail, PipelineError};
use crate::runner::{RunnerCommand, RunnerError, RunnerSession};
use crate::syntax::resolve_entry_point;

/// Reference tests get this multiple of the per-call execution timeout.
pub const TEST_TIMEOUT_FACTOR: u64 = 10;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no tasks to report on")]
    NoTasks,
    #[error("task `{task_id}`, candidate `{candidate}`: reference tests: {source}")]
    Tests {
        task_id: String,
        candidate: String,
        #[source]
        source: RunnerError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Whether `candidate` passes the task's reference tests. Candidates without
/// a resolvable entry point or that fail to load do not pass.
pub fn run_reference_tests(
    task: &Task,
    candidate: &Candidate,
    runner: &RunnerCommand,
    config: &EnsembleConfig,
) -> Result<bool, RunnerError> {
    let Some(entry) = resolve_entry_point(&candidate.text, &task.entry_point) else {
        return Ok(false);
    };
    let mut session = RunnerSession::spawn(runner)?;
    if session.load(&candidate.text)?.is_err() {
        return Ok(false);
    }
    let timeout = Duration::from_millis(config.exec_timeout_ms.saturating_mul(TEST_TIMEOUT_FACTOR));
    Ok(session.run_tests(&task.reference_tests, &entry.name, timeout)?.passed)
}

/// Per-task section of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    #[serde(flatten)]
    pub record: RunRecord,
    pub rejected: Vec<String>,
    pub tie_set: Vec<String>,
    pub tie_break_reason: Option<TieBreakReason>,
    pub aggregated: BTreeMap<String, f64>,
}

/// Outcome of evaluating one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvaluation {
    pub report: TaskReport,
    pub pairs: Vec<PairDetail>,
}

/// Runs every source's candidate against the reference tests, then the
/// ensemble on the pool.
pub fn evaluate_task(
    task: &Task,
    candidates: Vec<Candidate>,
    config: &EnsembleConfig,
    backend: &dyn DiffBackend,
    runner: &RunnerCommand,
) -> Result<TaskEvaluation, HarnessError> {
    let verdicts: Vec<(String, Result<bool, RunnerError>)> = candidates
        .par_iter()
        .map(|c| (c.source_id.clone(), run_reference_tests(task, c, runner, config)))
        .collect();
    let mut per_source_correct = BTreeMap::new();
    for (source, verdict) in verdicts {
        let ok = verdict
            .map_err(|source_err| HarnessError::Tests { task_id: task.id.clone(), candidate: source.clone(), source: source_err })?;
        per_source_correct.insert(source, ok);
    }
    let source_of: BTreeMap<String, String> = candidates.iter().map(|c| (c.id.clone(), c.source_id.clone())).collect();

    let (selection, pairs, rejected, survivors): (Option<SelectionResult>, Vec<PairDetail>, Vec<String>, u32) =
        match select_for_task(task, candidates, config, backend) {
            Ok(sel) => (Some(sel.result), sel.pairs, sel.rejected, sel.survivors.len() as u32),
            Err(PipelineError::NoViableCandidates { .. }) => {
                log::warn!("{}: no viable candidates", task.id);
                (None, Vec::new(), per_source_correct.keys().cloned().collect(), 0)
            }
            Err(e) => return Err(e.into()),
        };
    let selected_source = selection
        .as_ref()
        .map_or_else(|| NO_SELECTION.to_string(), |s| source_of[&s.winner_id].clone());
    let selected_correct = per_source_correct.get(&selected_source).copied().unwrap_or(false);
    let record = RunRecord {
        task_id: task.id.clone(),
        per_source_correct,
        selected_source,
        selected_correct,
        survivors,
    };
    let report = TaskReport {
        record,
        rejected,
        tie_set: selection.as_ref().map(|s| s.tie_set.clone()).unwrap_or_default(),
        tie_break_reason: selection.as_ref().map(|s| s.tie_break_reason),
        aggregated: selection.map(|s| s.aggregated).unwrap_or_default(),
    };
    Ok(TaskEvaluation { report, pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tasks: usize,
    pub pass_at_1: f64,
    pub achievable_accuracy: f64,
    pub per_source: BTreeMap<String, f64>,
}

/// Complete benchmark report. Serialization is deterministic: no timing or
/// host data, maps are ordered, tasks keep input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: EnsembleConfig,
    pub summary: Summary,
    pub tasks: Vec<TaskReport>,
}

impl BenchReport {
    pub fn new(config: &EnsembleConfig, tasks: Vec<TaskReport>) -> Result<Self, HarnessError> {
        let records: Vec<RunRecord> = tasks.iter().map(|t| t.record.clone()).collect();
        let summary = Summary {
            tasks: records.len(),
            pass_at_1: pass_at_1(&records).map_err(|_| HarnessError::NoTasks)?,
            achievable_accuracy: achievable_accuracy(&records).map_err(|_| HarnessError::NoTasks)?,
            per_source: per_source_accuracy(&records).map_err(|_| HarnessError::NoTasks)?,
        };
        Ok(BenchReport { config: config.clone(), summary, tasks })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table: one row per source, then the ensemble row with the
    /// achievable accuracy in parentheses.
    pub fn table(&self) -> String {
        let width = self.summary.per_source.keys().map(String::len).max().unwrap_or(0).max(30);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "Source", "pass@1");
        let _ = writeln!(out, "{}", "-".repeat(width + 10));
        for (source, acc) in &self.summary.per_source {
            let _ = writeln!(out, "{source:<width$}  {acc:>8.1}");
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.1} ({:.1})",
            "Ensemble pass@1 (achievable)", self.summary.pass_at_1, self.summary.achievable_accuracy
        );
        out
    }
}

/// Writes `report.json` and `report.txt` into `out_dir`. Fails before
/// writing anything when there are no tasks.
pub fn emit_report(
    config: &EnsembleConfig,
    tasks: Vec<TaskReport>,
    out_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let report = BenchReport::new(config, tasks)?;
    let io = |path: PathBuf| move |source| HarnessError::Io { path, source };
    fs::create_dir_all(out_dir).map_err(io(out_dir.to_path_buf()))?;
    let json_path = out_dir.join(REPORT_JSON);
    fs::write(&json_path, report.to_json()).map_err(io(json_path.clone()))?;
    let table_path = out_dir.join(REPORT_TABLE);
    fs::write(&table_path, report.table()).map_err(io(table_path.clone()))?;
    Ok(report)
}
