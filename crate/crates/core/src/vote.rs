//! Pairwise combination, aggregation and winner selection.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behave::{bsim, DiffReport};
use crate::codebleu::CodeBleuBreakdown;
use crate::model::{EnsembleConfig, SelectionResult, SimilarityMatrix, TieBreakReason};

/// Aggregates closer than this are treated as tied.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("no candidates to vote on")]
    Empty,
}

/// Average of the two reference directions.
pub fn symmetrize(ab: f64, ba: f64) -> f64 {
    (ab + ba) / 2.0
}

/// `lambda * codebleu + (1 - lambda) * bsim`.
pub fn combine(lambda: f64, codebleu_sym: f64, bsim: f64) -> f64 {
    lambda * codebleu_sym + (1.0 - lambda) * bsim
}

/// Combined similarity of a pair from both CodeBLEU directions and its diff report.
pub fn pair_similarity(
    ab: &CodeBleuBreakdown,
    ba: &CodeBleuBreakdown,
    diff: &DiffReport,
    config: &EnsembleConfig,
) -> f64 {
    combine(config.lambda, symmetrize(ab.combined, ba.combined), diff.bsim(config.n_cap))
}

/// Fills a matrix from directed CodeBLEU scores and symmetric counterexample
/// counts. Diagonal entries of the inputs are ignored.
pub fn assemble_matrix(
    candidate_ids: Vec<String>,
    codebleu: &[Vec<f64>],
    cex_counts: &[Vec<u32>],
    config: &EnsembleConfig,
) -> SimilarityMatrix {
    let n = candidate_ids.len();
    let mut m = SimilarityMatrix::identity(candidate_ids);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = bsim(cex_counts[i][j], config.n_cap);
            m.codebleu[i][j] = codebleu[i][j];
            m.cex_counts[i][j] = cex_counts[i][j];
            m.bsim[i][j] = b;
            m.combined[i][j] = combine(config.lambda, symmetrize(codebleu[i][j], codebleu[j][i]), b);
        }
    }
    m
}

/// Row sums of the combined matrix, diagonal excluded, in candidate order.
pub fn aggregate_scores(matrix: &SimilarityMatrix) -> Vec<f64> {
    (0..matrix.len())
        .map(|i| {
            matrix.combined[i]
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .sum()
        })
        .collect()
}

/// Aggregated similarity keyed by candidate id.
pub fn aggregate(matrix: &SimilarityMatrix) -> BTreeMap<String, f64> {
    matrix.candidate_ids.iter().cloned().zip(aggregate_scores(matrix)).collect()
}

/// Picks the candidate with the highest aggregate. Ties go to the fewest
/// total counterexamples, then to a pick seeded by `config.seed` over the
/// remaining ids in sorted order.
pub fn select(matrix: &SimilarityMatrix, config: &EnsembleConfig) -> Result<SelectionResult, VoteError> {
    if matrix.is_empty() {
        return Err(VoteError::Empty);
    }
    let scores = aggregate_scores(matrix);
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<usize> = (0..scores.len()).filter(|&i| best - scores[i] <= TIE_EPSILON).collect();
    tied.sort_by(|&a, &b| matrix.candidate_ids[a].cmp(&matrix.candidate_ids[b]));
    let tie_set: Vec<String> = tied.iter().map(|&i| matrix.candidate_ids[i].clone()).collect();

    let (winner, reason) = if tied.len() == 1 {
        (tied[0], TieBreakReason::UniqueMax)
    } else {
        let fewest = tied.iter().map(|&i| matrix.total_cex(i)).min().expect("non-empty tie set");
        let remaining: Vec<usize> = tied.iter().copied().filter(|&i| matrix.total_cex(i) == fewest).collect();
        if remaining.len() == 1 {
            (remaining[0], TieBreakReason::FewerCounterexamples)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (remaining[rng.gen_range(0..remaining.len())], TieBreakReason::SeededPick)
        }
    };

    Ok(SelectionResult {
        winner_id: matrix.candidate_ids[winner].clone(),
        aggregated: aggregate(matrix),
        tie_set,
        tie_break_reason: reason,
    })
}
