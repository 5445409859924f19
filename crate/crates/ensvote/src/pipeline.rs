//! Per-task selection: syntax filter, pairwise similarity matrix and vote.

use ensvote_core::vote::{combine, symmetrize};
use ensvote_core::{
    select, CallSignature, Candidate, CodeBleuBreakdown, DiffReport, EnsembleConfig, ProgramFeatures,
    SelectionResult, SimilarityMatrix, Task,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffBackend, DiffError};
use crate::syntax::{features, parse_check, task_signature};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("task `{task_id}`: no candidate survived the syntax filter")]
    NoViableCandidates { task_id: String },
    #[error("task `{task_id}`: {source}")]
    Diff {
        task_id: String,
        #[source]
        source: DiffError,
    },
}

/// Everything computed for one unordered pair, in explain-record form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDetail {
    pub task_id: String,
    pub a: String,
    pub b: String,
    /// CodeBLEU of `a` scored against `b` as reference.
    pub codebleu_ab: CodeBleuBreakdown,
    pub codebleu_ba: CodeBleuBreakdown,
    pub codebleu_sym: f64,
    pub cex_count: u32,
    pub bsim: f64,
    pub combined: f64,
    pub diff: DiffReport,
}

/// Result of running the engine on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSelection {
    pub task_id: String,
    /// Ids of candidates dropped by the syntax filter.
    pub rejected: Vec<String>,
    pub survivors: Vec<Candidate>,
    pub signature: Option<CallSignature>,
    pub matrix: SimilarityMatrix,
    pub pairs: Vec<PairDetail>,
    pub result: SelectionResult,
}

impl TaskSelection {
    pub fn winner(&self) -> &Candidate {
        self.survivors.iter().find(|c| c.id == self.result.winner_id).expect("winner is a survivor")
    }
}

fn pair_detail(
    task: &Task,
    (a, fa): (&Candidate, &ProgramFeatures),
    (b, fb): (&Candidate, &ProgramFeatures),
    sig: Option<&CallSignature>,
    config: &EnsembleConfig,
    backend: &dyn DiffBackend,
) -> Result<PairDetail, DiffError> {
    let duplicate = a.text == b.text;
    let (ab, ba) = if duplicate {
        let one = CodeBleuBreakdown::from_parts(1.0, 1.0, 1.0, 1.0, &config.codebleu_weights);
        (one, one)
    } else {
        (CodeBleuBreakdown::compute(fa, fb, config), CodeBleuBreakdown::compute(fb, fa, config))
    };
    let diff = match sig {
        _ if duplicate => DiffReport::identical(&a.id, &b.id),
        Some(sig) => backend.diff(a, b, task, sig, config)?,
        None => DiffReport::entry_point_missing(&a.id, &b.id, config.n_cap),
    };
    let codebleu_sym = symmetrize(ab.combined, ba.combined);
    let bsim = diff.bsim(config.n_cap);
    Ok(PairDetail {
        task_id: task.id.clone(),
        a: a.id.clone(),
        b: b.id.clone(),
        codebleu_ab: ab,
        codebleu_ba: ba,
        codebleu_sym,
        cex_count: diff.cex_count,
        bsim,
        combined: combine(config.lambda, codebleu_sym, bsim),
        diff,
    })
}

/// Pairwise matrix over `candidates` (which must all parse), in the given
/// order. Each unordered pair is diffed once; pairs run on the current rayon
/// pool. On infrastructure failure the error of the first failing pair (in
/// row-major order) is returned.
pub fn build_matrix(
    task: &Task,
    candidates: &[Candidate],
    sig: Option<&CallSignature>,
    config: &EnsembleConfig,
    backend: &dyn DiffBackend,
) -> Result<(SimilarityMatrix, Vec<PairDetail>), DiffError> {
    let feats: Vec<ProgramFeatures> = candidates
        .par_iter()
        .map(|c| features(&c.text, config.subtree_depth).unwrap_or_default())
        .collect();
    let n = candidates.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<Result<PairDetail, DiffError>> = pairs
        .par_iter()
        .map(|&(i, j)| pair_detail(task, (&candidates[i], &feats[i]), (&candidates[j], &feats[j]), sig, config, backend))
        .collect();
    let details = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut matrix = SimilarityMatrix::identity(candidates.iter().map(|c| c.id.clone()).collect());
    for (&(i, j), d) in pairs.iter().zip(&details) {
        matrix.codebleu[i][j] = d.codebleu_ab.combined;
        matrix.codebleu[j][i] = d.codebleu_ba.combined;
        matrix.bsim[i][j] = d.bsim;
        matrix.bsim[j][i] = d.bsim;
        matrix.combined[i][j] = d.combined;
        matrix.combined[j][i] = d.combined;
        matrix.cex_counts[i][j] = d.cex_count;
        matrix.cex_counts[j][i] = d.cex_count;
    }
    Ok((matrix, details))
}

/// Runs the whole engine on one task's raw candidate pool.
pub fn select_for_task(
    task: &Task,
    candidates: Vec<Candidate>,
    config: &EnsembleConfig,
    backend: &dyn DiffBackend,
) -> Result<TaskSelection, PipelineError> {
    let mut survivors = Vec::new();
    let mut rejected = Vec::new();
    for c in candidates {
        let c = parse_check(c, task.subject_language);
        if c.is_parsed_ok() {
            survivors.push(c);
        } else {
            log::info!("{}: dropping `{}` (does not parse)", task.id, c.id);
            rejected.push(c.id);
        }
    }
    if survivors.is_empty() {
        return Err(PipelineError::NoViableCandidates { task_id: task.id.clone() });
    }
    survivors.sort_by(|a, b| a.id.cmp(&b.id));
    rejected.sort();
    let signature = task_signature(task, &survivors);
    let (matrix, pairs) = build_matrix(task, &survivors, signature.as_ref(), config, backend)
        .map_err(|source| PipelineError::Diff { task_id: task.id.clone(), source })?;
    let result = select(&matrix, config).expect("matrix has survivors");
    Ok(TaskSelection { task_id: task.id.clone(), rejected, survivors, signature, matrix, pairs, result })
}
