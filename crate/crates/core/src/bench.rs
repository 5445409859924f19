//! Benchmark arithmetic: pass@1, per-source accuracy and achievable accuracy.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker used as `selected_source` when no candidate survived filtering.
pub const NO_SELECTION: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("no run records")]
    EmptyRecords,
}

/// Evaluation of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    /// Whether each source's own candidate passed the reference tests.
    pub per_source_correct: BTreeMap<String, bool>,
    pub selected_source: String,
    pub selected_correct: bool,
    /// Candidates left after the syntax filter.
    pub survivors: u32,
}

impl RunRecord {
    pub fn any_correct(&self) -> bool {
        self.per_source_correct.values().any(|&c| c)
    }
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of tasks whose selected program passed.
pub fn pass_at_1(records: &[RunRecord]) -> Result<f64, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    Ok(percent(records.iter().filter(|r| r.selected_correct).count(), records.len()))
}

/// Percentage of tasks where at least one source was correct; the ceiling
/// for any selector over the same pools.
pub fn achievable_accuracy(records: &[RunRecord]) -> Result<f64, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    Ok(percent(records.iter().filter(|r| r.any_correct()).count(), records.len()))
}

/// pass@1 of each individual source over all records. A source missing from
/// a record counts as incorrect on that task.
pub fn per_source_accuracy(records: &[RunRecord]) -> Result<BTreeMap<String, f64>, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        for (source, &ok) in &r.per_source_correct {
            *hits.entry(source.clone()).or_insert(0) += usize::from(ok);
        }
    }
    Ok(hits.into_iter().map(|(s, h)| (s, percent(h, records.len()))).collect())
}
