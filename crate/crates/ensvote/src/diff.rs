//! Differential execution of candidate pairs through runner processes.

use std::time::Duration;

use ensvote_core::behave::cross_execute;
use ensvote_core::{generate_inputs, CallSignature, Candidate, DiffReport, EnsembleConfig, Task};
use thiserror::Error;

use crate::runner::{CandidateExecutor, RunnerCommand, RunnerError};
use crate::syntax::resolve_entry_point;

/// Infrastructure failure while diffing a specific pair.
#[derive(Debug, Error)]
#[error("diffing `{}` against `{}`: {source}", pair.0, pair.1)]
pub struct DiffError {
    pub pair: (String, String),
    #[source]
    pub source: RunnerError,
}

/// Something able to count behavioural divergences between two candidates.
pub trait DiffBackend: Sync {
    fn diff(
        &self,
        a: &Candidate,
        b: &Candidate,
        task: &Task,
        sig: &CallSignature,
        config: &EnsembleConfig,
    ) -> Result<DiffReport, DiffError>;
}

/// Executes candidates in external runner processes.
#[derive(Debug, Clone)]
pub struct RunnerBackend {
    pub command: RunnerCommand,
}

impl RunnerBackend {
    pub fn new(command: RunnerCommand) -> Self {
        RunnerBackend { command }
    }
}

impl DiffBackend for RunnerBackend {
    fn diff(
        &self,
        a: &Candidate,
        b: &Candidate,
        task: &Task,
        sig: &CallSignature,
        config: &EnsembleConfig,
    ) -> Result<DiffReport, DiffError> {
        diff_pair(a, b, task, sig, config, &self.command)
    }
}

/// Runs both candidates on the same generated inputs and counts distinct
/// inputs on which they disagree, up to `config.n_cap`.
pub fn diff_pair(
    a: &Candidate,
    b: &Candidate,
    task: &Task,
    sig: &CallSignature,
    config: &EnsembleConfig,
    runner: &RunnerCommand,
) -> Result<DiffReport, DiffError> {
    let (Some(entry_a), Some(entry_b)) =
        (resolve_entry_point(&a.text, &task.entry_point), resolve_entry_point(&b.text, &task.entry_point))
    else {
        log::debug!("{}: entry point missing in `{}` or `{}`", task.id, a.id, b.id);
        return Ok(DiffReport::entry_point_missing(&a.id, &b.id, config.n_cap));
    };
    let wrap = |source| DiffError { pair: (a.id.clone(), b.id.clone()), source };
    let timeout = Duration::from_millis(config.exec_timeout_ms);
    let inputs = generate_inputs(sig, config.diff_budget, config.seed);
    let mut exec_a = CandidateExecutor::start(runner, &a.text, &entry_a.name, timeout).map_err(wrap)?;
    let mut exec_b = CandidateExecutor::start(runner, &b.text, &entry_b.name, timeout).map_err(wrap)?;
    cross_execute((&a.id, &b.id), &mut exec_a, &mut exec_b, &inputs, config.n_cap, config.float_tolerance)
        .map_err(wrap)
}
