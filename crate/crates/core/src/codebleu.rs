//! The four CodeBLEU components and their weighted combination.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CodeBleuWeights, EnsembleConfig, TokenWeights};
use crate::syntax::{DataFlowGraph, ProgramFeatures, SubtreeBag, Token, TokenClass, TokenStream};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("token stream is empty")]
    EmptyStream,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("candidate subtree bag is empty")]
    EmptyBag,
}

/// Per-component scores and their weighted sum for one directed pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuBreakdown {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
    pub combined: f64,
}

impl CodeBleuBreakdown {
    /// Combines the four parts with `weights`.
    pub fn from_parts(ngram: f64, weighted_ngram: f64, syntax: f64, dataflow: f64, weights: &CodeBleuWeights) -> Self {
        let dot = weights.ngram * ngram
            + weights.weighted_ngram * weighted_ngram
            + weights.syntax * syntax
            + weights.dataflow * dataflow;
        // The weight vector may sum to 1 only within tolerance.
        let combined = dot.clamp(0.0, 1.0);
        CodeBleuBreakdown { ngram, weighted_ngram, syntax, dataflow, combined }
    }

    /// Scores `cand` against `reference`. Programs without tokens or internal
    /// syntax nodes (comment-only files) score 1 against each other and 0
    /// against anything else on the affected component.
    pub fn compute(cand: &ProgramFeatures, reference: &ProgramFeatures, config: &EnsembleConfig) -> Self {
        let vacuous = |c: bool, r: bool| if c && r { 1.0 } else { 0.0 };
        let (ngram, weighted) = if cand.tokens.is_empty() || reference.tokens.is_empty() {
            let v = vacuous(cand.tokens.is_empty(), reference.tokens.is_empty());
            (v, v)
        } else {
            (
                ngram_precision(&cand.tokens, &reference.tokens, config.ngram_order)
                    .expect("non-empty streams and positive order"),
                weighted_ngram_precision(&cand.tokens, &reference.tokens, config.ngram_order, &config.token_weights)
                    .expect("non-empty streams and positive order"),
            )
        };
        let syntax = ast_match(&cand.subtrees, &reference.subtrees)
            .unwrap_or_else(|_| vacuous(true, reference.subtrees.is_empty()));
        let dataflow = dataflow_match(&cand.dataflow, &reference.dataflow);
        CodeBleuBreakdown::from_parts(ngram, weighted, syntax, dataflow, &config.codebleu_weights)
    }
}

fn class_weight(weights: &TokenWeights, class: TokenClass) -> f64 {
    match class {
        TokenClass::Keyword => weights.keyword,
        TokenClass::Identifier => weights.identifier,
        TokenClass::Literal => weights.literal,
        TokenClass::Operator => weights.operator,
        TokenClass::Punctuation => weights.punctuation,
    }
}

fn gram_counts(tokens: &[Token], k: usize) -> BTreeMap<Vec<&str>, (u32, &[Token])> {
    let mut counts: BTreeMap<Vec<&str>, (u32, &[Token])> = BTreeMap::new();
    for window in tokens.windows(k) {
        let key: Vec<&str> = window.iter().map(|t| t.lexeme.as_str()).collect();
        counts.entry(key).or_insert((0, window)).0 += 1;
    }
    counts
}

/// Geometric mean over orders `1..=min(order, |cand|)` of the clipped,
/// gram-weighted precision. A zero match count at order `k` is replaced by
/// `1 / (n_k + 1)` where `n_k` is the number of candidate k-grams.
fn precision_with(
    cand: &TokenStream,
    reference: &TokenStream,
    order: u32,
    gram_weight: impl Fn(&[Token]) -> f64,
) -> Result<f64, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyStream);
    }
    if order == 0 {
        return Err(MetricError::ZeroOrder);
    }
    let max_k = (order as usize).min(cand.len());
    let mut log_sum = 0.0;
    for k in 1..=max_k {
        let cand_grams = gram_counts(&cand.tokens, k);
        let ref_grams = gram_counts(&reference.tokens, k);
        let mut matched = 0.0;
        let mut total = 0.0;
        let mut matched_count = 0u32;
        for (key, &(count, window)) in &cand_grams {
            let w = gram_weight(window);
            let clipped = count.min(ref_grams.get(key).map_or(0, |r| r.0));
            matched += w * f64::from(clipped);
            total += w * f64::from(count);
            matched_count += clipped;
        }
        let p = if matched_count == 0 {
            1.0 / ((cand.len() - k + 1) as f64 + 1.0)
        } else {
            matched / total
        };
        log_sum += libm::log(p);
    }
    Ok(libm::exp(log_sum / max_k as f64).min(1.0))
}

/// Clipped n-gram precision of `cand` against `reference`.
pub fn ngram_precision(cand: &TokenStream, reference: &TokenStream, order: u32) -> Result<f64, MetricError> {
    precision_with(cand, reference, order, |_| 1.0)
}

/// As [`ngram_precision`], with each k-gram weighted by the mean class weight
/// of its tokens.
pub fn weighted_ngram_precision(
    cand: &TokenStream,
    reference: &TokenStream,
    order: u32,
    weights: &TokenWeights,
) -> Result<f64, MetricError> {
    precision_with(cand, reference, order, |gram| {
        gram.iter().map(|t| class_weight(weights, t.class)).sum::<f64>() / gram.len() as f64
    })
}

/// Fraction of the candidate's subtrees also present in the reference
/// (multiset intersection over candidate total).
pub fn ast_match(cand: &SubtreeBag, reference: &SubtreeBag) -> Result<f64, MetricError> {
    if cand.is_empty() {
        return Err(MetricError::EmptyBag);
    }
    Ok(f64::from(cand.overlap(reference)) / f64::from(cand.total))
}

/// Fraction of the candidate's data-flow edges matched in the reference.
/// A candidate without edges scores 1 iff the reference has none either.
pub fn dataflow_match(cand: &DataFlowGraph, reference: &DataFlowGraph) -> f64 {
    if cand.edges.is_empty() {
        return if reference.edges.is_empty() { 1.0 } else { 0.0 };
    }
    let ref_counts = reference.edge_counts();
    let matched: u32 = cand
        .edge_counts()
        .iter()
        .map(|(e, &c)| c.min(ref_counts.get(e).copied().unwrap_or(0)))
        .sum();
    f64::from(matched) / cand.edges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::DataFlowEdge;
    use alloc::string::ToString;
    use alloc::vec;

    fn stream(spec: &[(&str, TokenClass)]) -> TokenStream {
        TokenStream::new(spec.iter().map(|(l, c)| Token::new(*l, *c)).collect())
    }

    fn idents(words: &[&str]) -> TokenStream {
        TokenStream::new(words.iter().map(|w| Token::new(*w, TokenClass::Identifier)).collect())
    }

    #[test]
    fn identical_streams_score_one() {
        let s = idents(&["a", "b", "c", "a"]);
        assert_eq!(ngram_precision(&s, &s, 4).unwrap(), 1.0);
        assert_eq!(weighted_ngram_precision(&s, &s, 4, &TokenWeights::default()).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_streams_hit_smoothing_floor() {
        let c = idents(&["a", "b", "c"]);
        let r = idents(&["x", "y"]);
        assert_eq!(ngram_precision(&c, &r, 1).unwrap(), 1.0 / 4.0);
    }

    #[test]
    fn hand_counted_bigram_example() {
        // unigrams: a, b match of 3 -> 2/3; bigrams: "a b" matches of {ab, bc} -> 1/2
        let c = idents(&["a", "b", "c"]);
        let r = idents(&["a", "b", "d"]);
        let expected = libm::sqrt(2.0 / 3.0 * 0.5);
        assert!((ngram_precision(&c, &r, 2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.577).abs() < 1e-3);
    }

    #[test]
    fn clipping_limits_repeated_grams() {
        let c = idents(&["a", "a", "a", "a"]);
        let r = idents(&["a", "b"]);
        assert_eq!(ngram_precision(&c, &r, 1).unwrap(), 0.25);
    }

    #[test]
    fn errors_on_empty_inputs() {
        let s = idents(&["a"]);
        assert_eq!(ngram_precision(&TokenStream::default(), &s, 1), Err(MetricError::EmptyStream));
        assert_eq!(ngram_precision(&s, &s, 0), Err(MetricError::ZeroOrder));
        assert_eq!(ast_match(&SubtreeBag::default(), &SubtreeBag::default()), Err(MetricError::EmptyBag));
    }

    #[test]
    fn punctuation_only_difference_is_down_weighted() {
        use TokenClass::*;
        let c = stream(&[("f", Identifier), ("(", Punctuation), ("x", Identifier), (")", Punctuation)]);
        let r = stream(&[("f", Identifier), ("[", Punctuation), ("x", Identifier), ("]", Punctuation)]);
        let plain = ngram_precision(&c, &r, 1).unwrap();
        let weighted = weighted_ngram_precision(&c, &r, 1, &TokenWeights::default()).unwrap();
        // plain 2/4, weighted (1 + 1) / (1 + 0.1 + 1 + 0.1)
        assert!((plain - 0.5).abs() < 1e-12);
        assert!((weighted - 2.0 / 2.2).abs() < 1e-12);
        assert!(weighted > plain);
        let plain4 = ngram_precision(&c, &r, 4).unwrap();
        let weighted4 = weighted_ngram_precision(&c, &r, 4, &TokenWeights::default()).unwrap();
        assert!(weighted4 > plain4);
    }

    #[test]
    fn keyword_difference_is_up_weighted() {
        use TokenClass::*;
        let c = stream(&[("if", Keyword), ("x", Identifier), ("==", Operator), ("y", Identifier), (":", Punctuation)]);
        let r = stream(&[("while", Keyword), ("x", Identifier), ("==", Operator), ("y", Identifier), (":", Punctuation)]);
        let plain = ngram_precision(&c, &r, 1).unwrap();
        let weighted = weighted_ngram_precision(&c, &r, 1, &TokenWeights::default()).unwrap();
        // plain 4/5, weighted (1 + 1 + 1 + 0.1) / (5 + 1 + 1 + 1 + 0.1)
        assert!((plain - 0.8).abs() < 1e-12);
        assert!((weighted - 3.1 / 8.1).abs() < 1e-12);
        assert!(weighted < plain);
        let plain4 = ngram_precision(&c, &r, 4).unwrap();
        let weighted4 = weighted_ngram_precision(&c, &r, 4, &TokenWeights::default()).unwrap();
        assert!(weighted4 < plain4);
    }

    #[test]
    fn ast_match_extremes() {
        let a: SubtreeBag = ["(x y)".to_string(), "(x z)".to_string()].into_iter().collect();
        let b: SubtreeBag = ["(q)".to_string()].into_iter().collect();
        assert_eq!(ast_match(&a, &a).unwrap(), 1.0);
        assert_eq!(ast_match(&a, &b).unwrap(), 0.0);
        let half: SubtreeBag = ["(x y)".to_string()].into_iter().collect();
        assert_eq!(ast_match(&a, &half).unwrap(), 0.5);
        assert_eq!(ast_match(&half, &a).unwrap(), 1.0);
    }

    #[test]
    fn dataflow_match_conventions() {
        let empty = DataFlowGraph::default();
        let g = DataFlowGraph::new(vec![DataFlowEdge::new(0, 1), DataFlowEdge::new(0, 1), DataFlowEdge::new(1, 1)], 2);
        assert_eq!(dataflow_match(&g, &g), 1.0);
        assert_eq!(dataflow_match(&empty, &empty), 1.0);
        assert_eq!(dataflow_match(&empty, &g), 0.0);
        assert_eq!(dataflow_match(&g, &empty), 0.0);
        let one = DataFlowGraph::new(vec![DataFlowEdge::new(0, 1)], 2);
        assert!((dataflow_match(&g, &one) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn default_weights_combine_syntax_and_dataflow() {
        let b = CodeBleuBreakdown::from_parts(0.1, 0.2, 0.6, 1.0, &CodeBleuWeights::default());
        assert!((b.combined - 0.8).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_give_arithmetic_mean() {
        let b = CodeBleuBreakdown::from_parts(0.1, 0.2, 0.6, 1.0, &CodeBleuWeights::uniform());
        assert!((b.combined - (0.1 + 0.2 + 0.6 + 1.0) / 4.0).abs() < 1e-12);
    }
}
