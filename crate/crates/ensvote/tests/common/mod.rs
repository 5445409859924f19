#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ensvote::acquire::{load_candidate_dir, load_tasks};
use ensvote::diff::{DiffBackend, DiffError};
use ensvote::runner::RunnerCommand;
use ensvote_core::{CallSignature, Candidate, DiffReport, EnsembleConfig, Task};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn stub_runner() -> RunnerCommand {
    RunnerCommand::new(fixtures().join("stub_runner.py"))
}

pub fn read_fixture(rel: &str) -> String {
    fs::read_to_string(fixtures().join(rel)).unwrap()
}

pub fn quartet() -> (Task, Vec<Candidate>) {
    let task = load_tasks(&fixtures().join("quartet/tasks.jsonl")).unwrap().remove(0);
    let candidates = load_candidate_dir(&fixtures().join("quartet/binary_search"), &task.id).unwrap();
    (task, candidates)
}

pub fn quartet_candidate(candidates: &[Candidate], id: &str) -> Candidate {
    candidates.iter().find(|c| c.id == id).unwrap().clone()
}

/// Counterexample counts from a lookup table keyed by unordered id pairs;
/// absent pairs have none.
pub struct TableBackend(pub BTreeMap<(String, String), u32>);

impl TableBackend {
    pub fn new(entries: &[(&str, &str, u32)]) -> Self {
        TableBackend(
            entries
                .iter()
                .flat_map(|&(a, b, c)| [((a.to_string(), b.to_string()), c), ((b.to_string(), a.to_string()), c)])
                .collect(),
        )
    }
}

impl DiffBackend for TableBackend {
    fn diff(
        &self,
        a: &Candidate,
        b: &Candidate,
        _task: &Task,
        _sig: &CallSignature,
        config: &EnsembleConfig,
    ) -> Result<DiffReport, DiffError> {
        let count = self.0.get(&(a.id.clone(), b.id.clone())).copied().unwrap_or(0).min(config.n_cap);
        Ok(DiffReport { cex_count: count, ..DiffReport::identical(&a.id, &b.id) })
    }
}
