use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use locedit::metrics::{
    aggregate_scores, content_preservation, content_stats, delta_ppl,
    distinct_n, perplexity, rep_rate, throughput, ProbabilityMode,
};
use locedit::modeling::{ScorerClassifier, TextClassifier};

use super::{open_input, open_output, sidecar, write_json};
use crate::config::{EvaluationConfig, LoadedConfig, Overrides};
use crate::CommonArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    // the aliases accept `run` output lines as they are
    #[serde(alias = "y_star")]
    pub output: String,
    #[serde(default, alias = "y0")]
    pub original: Option<String>,
    #[serde(default, alias = "prompt")]
    pub prompt_id: Option<String>,
    /// Wall time spent producing `output`, if known.
    #[serde(default)]
    pub seconds: Option<f64>,
}

/// Table columns, in display order. `None` is printed as `n/a`.
pub const COLUMNS: &[&str] = &[
    "avg_max",
    "prob",
    "ppl",
    "delta_ppl",
    "acceptability",
    "dist_n",
    "rep_n",
    "f_bert",
    "f_bert_ge_0.5",
    "toks_per_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub records: usize,
    pub values: BTreeMap<String, Option<f64>>,
    /// Per-column count of records that could not be scored.
    pub failures: BTreeMap<String, usize>,
}

impl MetricsTable {
    pub fn to_tsv(&self) -> String {
        let cell = |c: &&str| match self.values.get(*c).copied().flatten() {
            Some(v) => format!("{v:.6}"),
            None => "n/a".to_string(),
        };
        format!(
            "{}\n{}\n",
            COLUMNS.join("\t"),
            COLUMNS.iter().map(cell).collect::<Vec<_>>().join("\t")
        )
    }
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).with_context(|| format!("pairs line {}", i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

fn group_key(r: &PairRecord) -> String {
    r.prompt_id.clone().unwrap_or_else(|| r.id.clone())
}

/// `(group, score)` for every output the classifier handled, plus the
/// number it failed on or scored outside `[0, 1]`.
fn classify(pairs: &[PairRecord], classifier: &dyn TextClassifier) -> (Vec<(String, f64)>, usize) {
    let mut scores = Vec::new();
    let mut failed = 0;
    for r in pairs {
        match classifier.classify(&r.output) {
            Ok(s) if (0.0..=1.0).contains(&s) => scores.push((group_key(r), s)),
            Ok(_) | Err(_) => failed += 1,
        }
    }
    (scores, failed)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn compute(loaded: &LoadedConfig, pairs: &[PairRecord]) -> Result<MetricsTable> {
    let default_eval = EvaluationConfig {
        classifier: None,
        invert: false,
        acceptability: None,
        embeddings: None,
        distinct_n: 3,
        rep_n: 3,
    };
    let ev = loaded.config.evaluation.clone().unwrap_or(default_eval);
    let mut values: BTreeMap<String, Option<f64>> =
        COLUMNS.iter().map(|c| (c.to_string(), None)).collect();
    let mut failures = BTreeMap::new();
    let mut set = |k: &str, v: Option<f64>| {
        values.insert(k.to_string(), v);
    };
    let lm = loaded.build_lm()?;

    let scorers = if ev.classifier.is_some() || ev.acceptability.is_some() {
        loaded.build_scorers()?
    } else {
        BTreeMap::new()
    };
    if let Some(id) = &ev.classifier {
        let classifier = ScorerClassifier::new(scorers[id].clone(), ev.invert);
        let (scores, failed) = classify(pairs, &classifier);
        failures.insert("classifier".to_string(), failed);
        if !scores.is_empty() {
            set("prob", Some(aggregate_scores(&scores, ProbabilityMode::ProbOverCorpus)));
            set("avg_max", Some(aggregate_scores(&scores, ProbabilityMode::AvgMaxPerPrompt)));
        }
    }
    if let Some(id) = &ev.acceptability {
        let judge = ScorerClassifier::new(scorers[id].clone(), false);
        let (scores, failed) = classify(pairs, &judge);
        failures.insert("acceptability".to_string(), failed);
        if !scores.is_empty() {
            set("acceptability", Some(aggregate_scores(&scores, ProbabilityMode::ProbOverCorpus)));
        }
    }

    let mut ppl_out = Vec::new();
    let mut deltas = Vec::new();
    let mut ppl_failures = 0;
    for r in pairs {
        match perplexity(&r.output, lm.as_ref()) {
            Ok(p) => {
                ppl_out.push(p);
                if let Some(orig) = &r.original {
                    match perplexity(orig, lm.as_ref()) {
                        Ok(q) => deltas.push(delta_ppl(q, p)),
                        Err(_) => ppl_failures += 1,
                    }
                }
            }
            Err(_) => ppl_failures += 1,
        }
    }
    failures.insert("ppl".to_string(), ppl_failures);
    set("ppl", mean(&ppl_out));
    set("delta_ppl", mean(&deltas));

    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for r in pairs {
        groups.entry(group_key(r)).or_default().push(&r.output);
    }
    let groups: Vec<Vec<&str>> = groups.into_values().collect();
    set("dist_n", distinct_n(&groups, ev.distinct_n).ok());
    let outputs: Vec<&str> = pairs.iter().map(|r| r.output.as_str()).collect();
    set("rep_n", (!outputs.is_empty()).then(|| rep_rate(&outputs, ev.rep_n)));

    if let Some(emb_cfg) = &ev.embeddings {
        let emb = loaded.build_embeddings(emb_cfg)?;
        let mut fs = Vec::new();
        let mut failed = 0;
        for r in pairs {
            if let Some(orig) = &r.original {
                match content_preservation(orig, &r.output, &emb) {
                    Ok(f) => fs.push(f),
                    Err(_) => failed += 1,
                }
            }
        }
        failures.insert("f_bert".to_string(), failed);
        if let Some(stats) = content_stats(&fs) {
            set("f_bert", Some(stats.mean));
            set("f_bert_ge_0.5", Some(stats.fraction_at_least_half));
        }
    }

    if !pairs.is_empty() && pairs.iter().all(|r| r.seconds.is_some()) {
        let tokens: Vec<usize> = pairs.iter().map(|r| lm.tokenize(&r.output).len()).collect();
        let secs: Vec<f64> = pairs.iter().map(|r| r.seconds.unwrap()).collect();
        set("toks_per_s", throughput(&tokens, &secs).ok());
    }

    Ok(MetricsTable {
        records: pairs.len(),
        values,
        failures,
    })
}

pub fn execute(args: &CommonArgs) -> Result<()> {
    // --input/--output name the pairs and the table, not the run's io paths
    let overrides = Overrides {
        seed: args.seed,
        ..Overrides::default()
    };
    let loaded = LoadedConfig::load(&args.config, &overrides)?;
    if args.dry_run {
        println!("{}", toml::to_string_pretty(&loaded.config)?);
        return Ok(());
    }
    // by default evaluate what `run` wrote
    let input = match (&args.input, &loaded.config.io.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => bail!(
            "config {}: no pairs; set io.output or pass --input",
            loaded.path.display()
        ),
    };
    let pairs = read_pairs(open_input(&input)?).with_context(|| format!("{}", input.display()))?;
    if pairs.is_empty() {
        bail!("{}: no pairs to evaluate", input.display());
    }
    let table = compute(&loaded, &pairs)?;
    let output = args.output.clone();
    let mut w = open_output(output.as_deref())?;
    w.write_all(table.to_tsv().as_bytes())?;
    w.flush()?;
    if let Some(path) = &output {
        write_json(&sidecar(path, "json"), &table)?;
    }
    Ok(())
}
