//! Evaluation metrics: constraint satisfaction, fluency, diversity, content
//! preservation, speed and span-detection accuracy.
//!
//! Dist-n and Rep-n split on whitespace. Dist-n pools the n-grams of all
//! generations for one prompt before taking the distinct ratio; n-grams do
//! not cross generation boundaries.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::math::cosine;
use crate::modeling::{CausalLmAdapter, EmbeddingAdapter, TextClassifier, TokenizedView};
use crate::{Error, Result};

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Distinct n-gram ratio averaged over groups of generations.
pub fn distinct_n<S: AsRef<str>>(groups: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Input("n must be >= 1".into()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (g, group) in groups.iter().enumerate() {
        let mut total = 0usize;
        let mut distinct: HashSet<Vec<&str>> = HashSet::new();
        for text in group {
            let toks = words(text.as_ref());
            for w in toks.windows(n) {
                total += 1;
                distinct.insert(w.to_vec());
            }
        }
        if total == 0 {
            log::warn!("group {g} has no {n}-grams; skipped");
            continue;
        }
        sum += distinct.len() as f64 / total as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Input(format!("no group has any {n}-gram")));
    }
    Ok(sum / used as f64)
}

/// Some token repeats consecutively more than `n` times.
pub fn rep_n(text: &str, n: usize) -> bool {
    let toks = words(text);
    let mut run = 0;
    for (i, t) in toks.iter().enumerate() {
        run = if i > 0 && toks[i - 1] == *t { run + 1 } else { 1 };
        if run > n {
            return true;
        }
    }
    false
}

/// Fraction of texts flagged by [`rep_n`]; 0 for an empty corpus.
pub fn rep_rate<S: AsRef<str>>(texts: &[S], n: usize) -> f64 {
    if texts.is_empty() {
        return 0.0;
    }
    texts.iter().filter(|t| rep_n(t.as_ref(), n)).count() as f64 / texts.len() as f64
}

/// `exp(mean token NLL)`.
pub fn perplexity(text: &str, lm: &dyn CausalLmAdapter) -> Result<f64> {
    let lp = lm.token_logprobs(text)?;
    if lp.is_empty() {
        return Err(Error::Input("perplexity of a text without tokens".into()));
    }
    Ok((-lp.iter().sum::<f64>() / lp.len() as f64).exp())
}

pub fn delta_ppl(original: f64, output: f64) -> f64 {
    (original - output).abs()
}

/// Greedy-matched embedding F1: each token takes its best cosine match on
/// the other side; precision averages over output tokens, recall over
/// original tokens.
pub fn content_preservation(original: &str, output: &str, emb: &dyn EmbeddingAdapter) -> Result<f64> {
    let a = emb.embed_tokens(original);
    let b = emb.embed_tokens(output);
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("content preservation needs two nonempty texts".into()));
    }
    let best = |x: &[f64], ys: &[Vec<f64>]| {
        ys.iter()
            .map(|y| cosine(x, y))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let precision = b.iter().map(|x| best(x, &a)).sum::<f64>() / b.len() as f64;
    let recall = a.iter().map(|x| best(x, &b)).sum::<f64>() / a.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentStats {
    pub mean: f64,
    /// Fraction of pairs with F >= 0.5.
    pub fraction_at_least_half: f64,
}

pub fn content_stats(scores: &[f64]) -> Option<ContentStats> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(ContentStats {
        mean: scores.iter().sum::<f64>() / n,
        fraction_at_least_half: scores.iter().filter(|&&f| f >= 0.5).count() as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    /// Fraction of texts scoring at least 0.5.
    ProbOverCorpus,
    /// Mean over prompts of the highest score among the prompt's texts.
    AvgMaxPerPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintProbability {
    pub value: f64,
    pub scored: usize,
    /// Texts the classifier failed on (or scored outside [0, 1]); excluded.
    pub failures: usize,
}

/// Aggregates precomputed `(prompt id, score)` pairs.
pub fn aggregate_scores(scores: &[(String, f64)], mode: ProbabilityMode) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    match mode {
        ProbabilityMode::ProbOverCorpus => {
            scores.iter().filter(|(_, s)| *s >= 0.5).count() as f64 / scores.len() as f64
        }
        ProbabilityMode::AvgMaxPerPrompt => {
            let mut max: BTreeMap<&str, f64> = BTreeMap::new();
            for (p, s) in scores {
                let m = max.entry(p.as_str()).or_insert(f64::NEG_INFINITY);
                *m = m.max(*s);
            }
            max.values().sum::<f64>() / max.len() as f64
        }
    }
}

/// Scores `(prompt id, text)` pairs with `classifier` and aggregates them.
pub fn constraint_probability(
    items: &[(String, String)],
    classifier: &dyn TextClassifier,
    mode: ProbabilityMode,
) -> ConstraintProbability {
    let mut scores = Vec::with_capacity(items.len());
    let mut failures = 0;
    for (prompt, text) in items {
        match classifier.classify(text) {
            Ok(s) if (0.0..=1.0).contains(&s) => scores.push((prompt.clone(), s)),
            Ok(s) => {
                log::warn!("classifier score {s} outside [0, 1]; excluded");
                failures += 1;
            }
            Err(e) => {
                log::warn!("classifier failed: {e}");
                failures += 1;
            }
        }
    }
    ConstraintProbability {
        value: aggregate_scores(&scores, mode),
        scored: scores.len(),
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub average_precision: f64,
}

/// Token indices ordered by descending saliency, ties by index.
pub fn rank_tokens(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Marks tokens overlapping any gold byte interval.
pub fn gold_tokens(view: &TokenizedView, gold: &[(usize, usize)]) -> Vec<bool> {
    view.char_spans
        .iter()
        .map(|&(s, e)| gold.iter().any(|&(gs, ge)| s < ge && gs < e))
        .collect()
}

/// Ranked-retrieval scores for one text; `None` when nothing is relevant.
pub fn span_detection_scores(ranking: &[usize], relevant: &[bool], k: usize) -> Option<SpanScores> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 || k == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut hits_at_k = 0usize;
    let mut ap = 0.0;
    for (rank, &t) in ranking.iter().enumerate() {
        if relevant[t] {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
            if rank < k {
                hits_at_k += 1;
            }
        }
    }
    Some(SpanScores {
        precision_at_k: hits_at_k as f64 / k as f64,
        recall_at_k: hits_at_k as f64 / total as f64,
        average_precision: ap / total as f64,
    })
}

/// Per-field means over scored records.
pub fn mean_span_scores(scores: &[SpanScores]) -> Option<SpanScores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(SpanScores {
        precision_at_k: scores.iter().map(|s| s.precision_at_k).sum::<f64>() / n,
        recall_at_k: scores.iter().map(|s| s.recall_at_k).sum::<f64>() / n,
        average_precision: scores.iter().map(|s| s.average_precision).sum::<f64>() / n,
    })
}

/// Total tokens over total seconds.
pub fn throughput(token_counts: &[usize], seconds: &[f64]) -> Result<f64> {
    let secs: f64 = seconds.iter().sum();
    if secs.is_nan() || secs <= 0.0 {
        return Err(Error::Input("throughput needs a positive duration".into()));
    }
    Ok(token_counts.iter().sum::<usize>() as f64 / secs)
}

/// Character edit distance relative to the original length.
pub fn edited_char_fraction(original: &str, edited: &str) -> f64 {
    let len = original.chars().count().max(1);
    strsim::levenshtein(original, edited) as f64 / len as f64
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input("spearman needs two equal-length samples of size >= 2".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Input("spearman is undefined for a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::modeling::{StaticWordVectors, UniformLm};

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[vec!["a b c d"]], 3).unwrap(), 1.0);
        assert_eq!(distinct_n(&[vec!["a a a a"]], 3).unwrap(), 0.5);
        assert_eq!(distinct_n(&[vec!["a b c d", "a b c d"]], 3).unwrap(), 0.5);
        // short group skipped
        assert_eq!(distinct_n(&[vec!["a b c d"], vec!["x"]], 3).unwrap(), 1.0);
        assert!(distinct_n(&[vec!["x"]], 3).is_err());
    }

    #[test]
    fn rep_examples() {
        assert!(rep_n("x x x x", 3));
        assert!(!rep_n("x x x y", 3));
        assert!(!rep_n("", 3));
        assert_eq!(rep_rate(&["x x x x", "a b"], 3), 0.5);
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let lm = UniformLm::new("u", 50);
        assert!((perplexity("a b c", &lm).unwrap() - 50.0).abs() < 1e-9);
        assert!(perplexity("", &lm).is_err());
        assert_eq!(delta_ppl(3.0, 3.0), 0.0);
    }

    #[test]
    fn content_preservation_examples() {
        let emb = StaticWordVectors::one_hot(["a", "b", "c", "d"]);
        assert_eq!(content_preservation("a b", "a b", &emb).unwrap(), 1.0);
        assert_eq!(content_preservation("a b", "c d", &emb).unwrap(), 0.0);
        // by hand: P = (1 + 0)/2, R = (1 + 0)/2 -> F = 0.5
        assert!((content_preservation("a b", "a c", &emb).unwrap() - 0.5).abs() < 1e-15);
        let table = HashMap::from([
            ("x".to_string(), vec![1.0, 0.0]),
            ("y".to_string(), vec![0.0, 1.0]),
            ("z".to_string(), vec![1.0, 1.0]),
        ]);
        let emb = StaticWordVectors::from_table(table, 0);
        // output "z": P = cos(z, x) = 1/sqrt2; R = mean(1/sqrt2, 1/sqrt2)
        let f = content_preservation("x y", "z", &emb).unwrap();
        assert!((f - 0.5f64.sqrt()).abs() < 1e-12);
        let stats = content_stats(&[1.0, 0.2, 0.5]).unwrap();
        assert!((stats.fraction_at_least_half - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn probability_modes() {
        let s = |v: &[f64]| v.iter().map(|&x| ("p".to_string(), x)).collect::<Vec<_>>();
        let scores = s(&[0.2, 0.9, 0.4]);
        assert_eq!(aggregate_scores(&scores, ProbabilityMode::AvgMaxPerPrompt), 0.9);
        assert!((aggregate_scores(&scores, ProbabilityMode::ProbOverCorpus) - 1.0 / 3.0).abs() < 1e-15);
        let zeros = s(&[0.0, 0.0]);
        assert_eq!(aggregate_scores(&zeros, ProbabilityMode::AvgMaxPerPrompt), 0.0);
        assert_eq!(aggregate_scores(&zeros, ProbabilityMode::ProbOverCorpus), 0.0);
    }

    #[test]
    fn span_scores_examples() {
        let rel = [false, true, false, true, false];
        let s = span_detection_scores(&[3, 0, 1, 2, 4], &rel, 6).unwrap();
        assert!((s.average_precision - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.precision_at_k - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.recall_at_k, 1.0);
        let perfect = span_detection_scores(&[1, 3, 0, 2, 4], &rel, 1).unwrap();
        assert_eq!(perfect.average_precision, 1.0);
        assert_eq!(perfect.precision_at_k, 1.0);
        assert_eq!(perfect.recall_at_k, 0.5);
        let miss = span_detection_scores(&[0, 2, 4, 1, 3], &rel, 2).unwrap();
        assert_eq!(miss.precision_at_k, 0.0);
        assert!(span_detection_scores(&[0, 1], &[false, false], 6).is_none());
        assert_eq!(rank_tokens(&[0.1, 0.5, 0.5, 0.0]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn throughput_sums_before_dividing() {
        assert_eq!(throughput(&[100], &[10.0]).unwrap(), 10.0);
        // (100 + 10) / (10 + 10), not mean(10, 1)
        assert_eq!(throughput(&[100, 10], &[10.0, 10.0]).unwrap(), 5.5);
        assert!(throughput(&[1], &[0.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // ties: ranks (1.5, 1.5, 3) vs (1, 2, 3) -> r = sqrt(3)/2
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn edited_fraction() {
        assert_eq!(edited_char_fraction("abcd", "abcd"), 0.0);
        assert_eq!(edited_char_fraction("abcd", "abxd"), 0.25);
    }
}
