//! Independent reference implementations shared by the property tests and
//! the acceptance target. Nothing here calls the code it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use locedit::energy::TermSet;
use locedit::locate::{LocatedSpans, Selection};
use locedit::modeling::TokenizedView;
use locedit::rerank::Hypothesis;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative tolerance with a tiny absolute floor for roundoff on entries
/// that are zero analytically.
pub fn fd_close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + 1e-9
}

/// Filter to hypotheses meeting every scorer threshold and take the least
/// fluency energy there (then least overall); with none satisfying, take
/// the least overall. Remaining ties go to the earliest choice vector.
pub fn select_best_oracle(hyps: &[Hypothesis], terms: &TermSet) -> usize {
    let fluency = &terms.fluency().name;
    let report = |i: usize| hyps[i].report.as_ref().unwrap();
    let satisfying: Vec<usize> = (0..hyps.len())
        .filter(|&i| {
            terms
                .constraints()
                .all(|t| report(i).energy(&t.name) < -t.threshold.unwrap_or(0.5).ln())
        })
        .collect();
    let pool: Vec<usize> = if satisfying.is_empty() {
        (0..hyps.len()).collect()
    } else {
        satisfying.clone()
    };
    let key = |j: usize| {
        let r = report(j);
        if satisfying.is_empty() {
            (r.overall, 0.0)
        } else {
            (r.energy(fluency), r.overall)
        }
    };
    let mut best = pool[0];
    for &i in &pool[1..] {
        let (a, b) = (key(i), key(best));
        let better = a.0 < b.0
            || (a.0 == b.0 && a.1 < b.1)
            || (a == b && hyps[i].slot_choices < hyps[best].slot_choices);
        if better {
            best = i;
        }
    }
    best
}

/// Checks a salient-token selection against its definition.
pub fn check_selection(values: &[f64], m: usize, sel: &Selection) -> Result<(), String> {
    let l = values.len();
    let mean = values.iter().sum::<f64>() / l as f64;
    if !sel.indices.windows(2).all(|w| w[0] < w[1]) {
        return Err(format!("indices not strictly increasing: {:?}", sel.indices));
    }
    let above: Vec<usize> = (0..l).filter(|&i| values[i] > mean).collect();
    let cap = (2 * l / 3).min(m);
    if sel.fallback {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = values.iter().position(|&v| v == max).unwrap();
        if sel.indices != [first] {
            return Err(format!("fallback picked {:?}, argmax is {first}", sel.indices));
        }
        if !above.is_empty() && cap > 0 {
            return Err(format!("fallback although {} values exceed the mean", above.len()));
        }
        return Ok(());
    }
    if sel.indices.is_empty() {
        return Err("empty selection without fallback".into());
    }
    if sel.indices.len() > cap {
        return Err(format!("{} selected, cap {cap}", sel.indices.len()));
    }
    if let Some(&i) = sel.indices.iter().find(|&&i| values[i] <= mean) {
        return Err(format!("index {i} value {} not above mean {mean}", values[i]));
    }
    // the kept set is the top of `above` by value, ties to the lower index
    let mut want = above;
    want.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    want.truncate(cap);
    want.sort_unstable();
    if want != sel.indices {
        return Err(format!("selected {:?}, expected {want:?}", sel.indices));
    }
    Ok(())
}

/// Spans start and end on word boundaries, are disjoint and ordered, and
/// cover every picked token.
pub fn check_completion(text: &str, view: &TokenizedView, picked: &[usize], spans: &LocatedSpans) -> Result<(), String> {
    let b = text.as_bytes();
    let ws = |i: usize| b[i].is_ascii_whitespace();
    for &(s, e) in &spans.char_spans {
        if s >= e || (s > 0 && !ws(s - 1)) || (e < b.len() && !ws(e)) || ws(s) || ws(e - 1) {
            return Err(format!("span {s}..{e} of {text:?} is not word-aligned"));
        }
    }
    if !spans.char_spans.windows(2).all(|w| w[0].1 < w[1].0) {
        return Err(format!("spans overlap or are unordered: {:?}", spans.char_spans));
    }
    for &i in picked {
        let (s, e) = view.char_spans[i];
        if !spans.char_spans.iter().any(|&(a, z)| a <= s && e <= z) {
            return Err(format!("token {i} ({s}..{e}) not covered"));
        }
    }
    Ok(())
}

/// The bytes covered by `mapped` target tokens equal the non-whitespace
/// bytes of `spans`.
pub fn check_mapping(text: &str, spans: &LocatedSpans, target: &TokenizedView, mapped: &[usize]) -> Result<(), String> {
    let covered: BTreeSet<usize> = mapped
        .iter()
        .flat_map(|&i| target.char_spans[i].0..target.char_spans[i].1)
        .collect();
    let wanted: BTreeSet<usize> = spans
        .char_spans
        .iter()
        .flat_map(|&(s, e)| s..e)
        .filter(|&i| !text.as_bytes()[i].is_ascii_whitespace())
        .collect();
    if covered != wanted {
        return Err(format!("mapped tokens cover {covered:?}, spans cover {wanted:?}"));
    }
    Ok(())
}

fn words(t: &str) -> Vec<&str> {
    t.split(' ').filter(|s| !s.is_empty()).collect()
}

/// Per-group distinct n-gram ratio, averaged over groups with any n-gram.
pub fn distinct_oracle(groups: &[Vec<String>], n: usize) -> Option<f64> {
    let mut ratios = Vec::new();
    for g in groups {
        let mut grams = Vec::new();
        for t in g {
            let w = words(t);
            for i in 0..w.len().saturating_sub(n - 1) {
                grams.push(w[i..i + n].join(" "));
            }
        }
        if !grams.is_empty() {
            let distinct: BTreeSet<&String> = grams.iter().collect();
            ratios.push(distinct.len() as f64 / grams.len() as f64);
        }
    }
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Some word repeated at least `n + 1` times in a row.
pub fn rep_oracle(text: &str, n: usize) -> bool {
    words(text).windows(n + 1).any(|w| w.iter().all(|x| *x == w[0]))
}

/// Perplexity under an add-one bigram model of `corpus` whose vocabulary
/// is the corpus words plus `<unk>`; unseen contexts get `1 / |V|`.
pub fn bigram_ppl_oracle(corpus: &[String], text: &str) -> f64 {
    let mut vocab: BTreeSet<&str> = corpus.iter().flat_map(|s| words(s)).collect();
    vocab.insert("<unk>");
    let v = vocab.len() as f64;
    let mut pair: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut ctx: BTreeMap<String, f64> = BTreeMap::new();
    for s in corpus {
        let mut prev = "<s>".to_string();
        for w in words(s) {
            *pair.entry((prev.clone(), w.to_string())).or_default() += 1.0;
            *ctx.entry(prev.clone()).or_default() += 1.0;
            prev = w.to_string();
        }
    }
    let mut prev = "<s>".to_string();
    let mut nll = 0.0;
    let tokens = words(text);
    for w in &tokens {
        let w = if vocab.contains(w) { w.to_string() } else { "<unk>".to_string() };
        let p = match ctx.get(&prev) {
            Some(c) => (pair.get(&(prev.clone(), w.clone())).copied().unwrap_or(0.0) + 1.0) / (c + v),
            None => 1.0 / v,
        };
        nll -= p.ln();
        prev = w;
    }
    (nll / tokens.len() as f64).exp()
}

/// Fraction of scores at least 0.5, and the mean per-prompt maximum.
pub fn probability_oracle(scores: &[(String, f64)]) -> (f64, f64) {
    let prob = scores.iter().filter(|s| s.1 >= 0.5).count() as f64 / scores.len() as f64;
    let prompts: BTreeSet<&String> = scores.iter().map(|s| &s.0).collect();
    let avg_max = prompts
        .iter()
        .map(|p| scores.iter().filter(|s| &s.0 == *p).map(|s| s.1).fold(0.0, f64::max))
        .sum::<f64>()
        / prompts.len() as f64;
    (prob, avg_max)
}

/// Ranking by descending value, ties by position.
pub fn ranking_oracle(values: &[f64]) -> Vec<usize> {
    let mut r: Vec<usize> = (0..values.len()).collect();
    r.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    r
}

/// (P@k, R@k, AP) by scanning every cutoff.
pub fn span_oracle(ranking: &[usize], relevant: &[bool], k: usize) -> Option<(f64, f64, f64)> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let hits = ranking.iter().take(k).filter(|&&t| relevant[t]).count() as f64;
    let mut precisions = Vec::new();
    for cut in 1..=ranking.len() {
        if relevant[ranking[cut - 1]] {
            let h = ranking[..cut].iter().filter(|&&t| relevant[t]).count();
            precisions.push(h as f64 / cut as f64);
        }
    }
    Some((
        hits / k as f64,
        hits / total as f64,
        precisions.iter().sum::<f64>() / total as f64,
    ))
}
