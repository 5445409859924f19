use std::collections::BTreeSet;

use ensvote_core::behave::{generate_inputs, TypeHint};
use ensvote_core::codebleu::{ngram_precision, weighted_ngram_precision};
use ensvote_core::vote::{aggregate_scores, assemble_matrix, combine};
use ensvote_core::{
    bsim, select, CallSignature, CodeBleuBreakdown, EnsembleConfig, InputConstraint, Param, ProgramFeatures,
    SimilarityMatrix, TieBreakReason, Token, TokenClass, TokenStream, TokenWeights,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u32 = 256;

/// Independent statement of the voting rule: highest row sum, then fewest
/// total counterexamples, then a seeded pick over the sorted ids.
fn brute_force_winner(m: &SimilarityMatrix, seed: u64) -> String {
    let n = m.candidate_ids.len();
    let mut rows = Vec::new();
    for i in 0..n {
        let mut agg = 0.0;
        let mut cex = 0u64;
        for j in 0..n {
            if i != j {
                agg += m.combined[i][j];
                cex += u64::from(m.cex_counts[i][j]);
            }
        }
        rows.push((m.candidate_ids[i].clone(), agg, cex));
    }
    let best = rows.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    let mut tied: Vec<_> = rows.into_iter().filter(|r| best - r.1 <= 1e-9).collect();
    let fewest = tied.iter().map(|r| r.2).min().unwrap();
    tied.retain(|r| r.2 == fewest);
    tied.sort_by(|a, b| a.0.cmp(&b.0));
    if tied.len() == 1 {
        return tied[0].0.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tied[rng.gen_range(0..tied.len())].0.clone()
}

fn random_matrix(n: usize, seed: u64, coarse: bool) -> SimilarityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..n).map(|i| format!("cand{i:02}")).collect();
    let mut cb = vec![vec![1.0; n]; n];
    let mut cex = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // coarse values make exact ties common
                cb[i][j] = if coarse { f64::from(rng.gen_range(0..3u8)) / 2.0 } else { rng.gen::<f64>() };
            }
            if i < j {
                let c = if coarse { rng.gen_range(0..3) * 5 } else { rng.gen_range(0..15) };
                cex[i][j] = c;
                cex[j][i] = c;
            }
        }
    }
    assemble_matrix(ids, &cb, &cex, &EnsembleConfig::default())
}

fn token_strategy() -> impl Strategy<Value = Token> {
    let class = prop_oneof![
        Just(TokenClass::Keyword),
        Just(TokenClass::Identifier),
        Just(TokenClass::Literal),
        Just(TokenClass::Operator),
        Just(TokenClass::Punctuation),
    ];
    ("[a-d]", class).prop_map(|(lexeme, class)| Token::new(lexeme, class))
}

fn stream_strategy() -> impl Strategy<Value = TokenStream> {
    prop::collection::vec(token_strategy(), 1..24).prop_map(TokenStream::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn bsim_is_monotone_and_bounded(n in 1u32..50, a in 0u32..80, b in 0u32..80) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (bsim(lo, n), bsim(hi, n));
        prop_assert!((0.0..=1.0).contains(&s_lo) && (0.0..=1.0).contains(&s_hi));
        prop_assert!(s_hi <= s_lo);
        prop_assert_eq!(bsim(0, n), 1.0);
        prop_assert_eq!(bsim(n + a, n), 0.0);
    }

    #[test]
    fn combination_stays_in_unit_interval(l in 0.0f64..=1.0, c in 0.0f64..=1.0, s in 0.0f64..=1.0) {
        let v = combine(l, c, s);
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&v));
        prop_assert!(v >= c.min(s) - 1e-12 && v <= c.max(s) + 1e-12);
    }

    #[test]
    fn assembled_matrices_are_symmetric(n in 1usize..8, seed in any::<u64>()) {
        let m = random_matrix(n, seed, false);
        prop_assert!(m.check_invariants().is_ok(), "{:?}", m.check_invariants());
        for i in 0..n {
            prop_assert_eq!(m.combined[i][i], 1.0);
            for j in 0..n {
                prop_assert_eq!(m.bsim[i][j], m.bsim[j][i]);
                prop_assert_eq!(m.cex_counts[i][j], m.cex_counts[j][i]);
                prop_assert_eq!(m.combined[i][j], m.combined[j][i]);
                prop_assert!((0.0..=1.0).contains(&m.combined[i][j]));
            }
        }
    }

    #[test]
    fn select_matches_brute_force(n in 1usize..9, seed in any::<u64>(), coarse in any::<bool>(), vote_seed in any::<u64>()) {
        let m = random_matrix(n, seed, coarse);
        let config = EnsembleConfig { seed: vote_seed, ..EnsembleConfig::default() };
        let r = select(&m, &config).unwrap();
        prop_assert_eq!(&r.winner_id, &brute_force_winner(&m, vote_seed));
        prop_assert!(r.tie_set.contains(&r.winner_id));
        prop_assert_eq!(r.tie_set.len() == 1, r.tie_break_reason == TieBreakReason::UniqueMax);
    }

    #[test]
    fn winner_is_invariant_under_permutation(n in 2usize..8, seed in any::<u64>(), coarse in any::<bool>(), shuffle in any::<u64>()) {
        let m = random_matrix(n, seed, coarse);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut p = SimilarityMatrix::identity(order.iter().map(|&i| m.candidate_ids[i].clone()).collect());
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                p.codebleu[a][b] = m.codebleu[i][j];
                p.bsim[a][b] = m.bsim[i][j];
                p.combined[a][b] = m.combined[i][j];
                p.cex_counts[a][b] = m.cex_counts[i][j];
            }
        }
        let config = EnsembleConfig::default();
        prop_assert_eq!(select(&m, &config).unwrap().winner_id, select(&p, &config).unwrap().winner_id);
    }

    #[test]
    fn aggregate_excludes_diagonal(n in 1usize..8, seed in any::<u64>()) {
        let m = random_matrix(n, seed, false);
        for (i, a) in aggregate_scores(&m).iter().enumerate() {
            let manual: f64 = (0..n).filter(|&j| j != i).map(|j| m.combined[i][j]).sum();
            prop_assert!((a - manual).abs() < 1e-12);
            prop_assert!(*a <= (n - 1) as f64 + 1e-12);
        }
    }

    #[test]
    fn ngram_scores_are_bounded_and_reflexive(a in stream_strategy(), b in stream_strategy(), order in 1u32..6) {
        let w = TokenWeights::default();
        for v in [ngram_precision(&a, &b, order).unwrap(), weighted_ngram_precision(&a, &b, order, &w).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((ngram_precision(&a, &a, order).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((weighted_ngram_precision(&a, &a, order, &w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn codebleu_self_similarity_is_one(a in stream_strategy(), weights in prop::array::uniform4(0.0f64..1.0)) {
        let sum: f64 = weights.iter().sum();
        prop_assume!(sum > 1e-3);
        let config = EnsembleConfig {
            codebleu_weights: ensvote_core::CodeBleuWeights::new(
                weights[0] / sum, weights[1] / sum, weights[2] / sum, weights[3] / sum),
            ..EnsembleConfig::default()
        };
        let mut f = ProgramFeatures { tokens: a.clone(), ..Default::default() };
        for t in &a.tokens {
            f.subtrees.insert(format!("(leaf {})", t.lexeme));
        }
        let b = CodeBleuBreakdown::compute(&f, &f, &config);
        prop_assert!((b.combined - 1.0).abs() < 1e-9, "{:?}", b);
    }

    #[test]
    fn generated_inputs_respect_constraints(seed in any::<u64>(), budget in 1u32..60) {
        let sig = CallSignature {
            function_name: "f".into(),
            params: vec![
                Param { name: "xs".into(), hint: TypeHint::ListOf(Box::new(TypeHint::Int)) },
                Param { name: "k".into(), hint: TypeHint::Int },
            ],
            constraints: vec![InputConstraint::Sorted, InputConstraint::NonEmpty, InputConstraint::Distinct],
        };
        let inputs = generate_inputs(&sig, budget, seed);
        prop_assert_eq!(inputs.len(), budget as usize);
        prop_assert_eq!(&inputs, &generate_inputs(&sig, budget, seed));
        for args in &inputs {
            prop_assert_eq!(args.len(), 2);
            let xs: Vec<i64> = args[0].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
            prop_assert!(!xs.is_empty());
            prop_assert!(xs.windows(2).all(|w| w[0] < w[1]), "{:?}", xs);
            prop_assert_eq!(xs.iter().collect::<BTreeSet<_>>().len(), xs.len());
            prop_assert!(args[1].is_i64());
        }
    }
}
