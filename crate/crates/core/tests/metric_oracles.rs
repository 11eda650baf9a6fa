mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use locedit::metrics::{
    aggregate_scores, distinct_n, perplexity, rank_tokens, rep_n, span_detection_scores,
    ProbabilityMode,
};
use locedit::modeling::NGramLm;

const TOL: f64 = 1e-9;
const WORDS: &[&str] = &["a", "b", "c", "d", "e"];

fn sentence(rng: &mut ChaCha8Rng, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

#[test]
fn distinct_and_repetition_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let groups: Vec<Vec<String>> = (0..rng.gen_range(1..4))
            .map(|_| (0..rng.gen_range(1..4)).map(|_| sentence(&mut rng, 8)).collect())
            .collect();
        match (distinct_n(&groups, 3), distinct_oracle(&groups, 3)) {
            (Ok(a), Some(b)) => assert!((a - b).abs() <= TOL, "{groups:?}: {a} vs {b}"),
            (Err(_), None) => {}
            (a, b) => panic!("{groups:?}: {a:?} vs {b:?}"),
        }
        for t in groups.iter().flatten() {
            assert_eq!(rep_n(t, 3), rep_oracle(t, 3), "{t}");
        }
    }
}

#[test]
fn bigram_perplexity_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let corpus: Vec<String> = (0..rng.gen_range(1..8))
            .map(|_| sentence(&mut rng, 6))
            .filter(|s| !s.is_empty())
            .collect();
        if corpus.is_empty() {
            continue;
        }
        let lm = NGramLm::from_corpus("lm", corpus.iter().map(String::as_str), 2).unwrap();
        let mut text = sentence(&mut rng, 6);
        if text.is_empty() {
            text = "z a".to_string();
        }
        let got = perplexity(&text, &lm).unwrap();
        let want = bigram_ppl_oracle(&corpus, &text);
        assert!((got - want).abs() <= TOL * want.max(1.0), "{text}: {got} vs {want}");
    }
}

#[test]
fn probability_aggregation_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let scores: Vec<(String, f64)> = (0..rng.gen_range(1..20))
            .map(|_| (format!("p{}", rng.gen_range(0..5)), rng.gen_range(0.0..=1.0)))
            .collect();
        let (prob, avg_max) = probability_oracle(&scores);
        assert!((aggregate_scores(&scores, ProbabilityMode::ProbOverCorpus) - prob).abs() <= TOL);
        assert!((aggregate_scores(&scores, ProbabilityMode::AvgMaxPerPrompt) - avg_max).abs() <= TOL);
    }
}

#[test]
fn span_detection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..300 {
        let l = rng.gen_range(1..15);
        let values: Vec<f64> = (0..l).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
        let relevant: Vec<bool> = (0..l).map(|_| rng.gen_bool(0.3)).collect();
        let ranking = rank_tokens(&values);
        assert_eq!(ranking, ranking_oracle(&values));
        match (span_detection_scores(&ranking, &relevant, 6), span_oracle(&ranking, &relevant, 6)) {
            (None, None) => {}
            (Some(got), Some((p, r, ap))) => {
                assert!((got.precision_at_k - p).abs() <= TOL);
                assert!((got.recall_at_k - r).abs() <= TOL);
                assert!((got.average_precision - ap).abs() <= TOL);
            }
            (a, b) => panic!("{a:?} vs {b:?}"),
        }
    }
}
