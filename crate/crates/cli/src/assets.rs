//! Writes the synthetic detoxification task to disk as a runnable config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use locedit::controller::{BatchRecord, ControllerConfig};
use locedit::energy::EnergyTerm;
use locedit::locate::SaliencyMethod;
use locedit::rerank::{Reranker, DEFAULT_EXPLOSION_GUARD};
use locedit::synth::{graded_examples, DetoxTask};
use locedit::training::TrainingExample;

use crate::config::{
    AdapterConfig, EmbeddingConfig, EvaluationConfig, FillerConfig, IoConfig, LmConfig, RunConfig,
    ScorerConfig,
};

pub const CONFIG_FILE: &str = "toxicity.toml";

/// The toxicity settings: threshold 0.75, weights 0.1 / 0.9, N=3, m=5,
/// k=10, b=5, beam reranking on overall energy.
pub fn toy_config(seed: u64) -> RunConfig {
    RunConfig {
        task: "toy-detox".to_string(),
        seed,
        primary_term: "toxicity".to_string(),
        terms: vec![
            EnergyTerm::fluency("fluency", 0.1),
            EnergyTerm::scorer("toxicity", 0.9, 0.75, "toxicity"),
        ],
        controller: ControllerConfig {
            max_iterations: 3,
            max_edit_tokens: 5,
            candidates_per_slot: 10,
            beam_size: 5,
            reranker: Reranker::BeamOverall,
            locator: SaliencyMethod::GradientNorm,
            explosion_guard: DEFAULT_EXPLOSION_GUARD,
        },
        adapters: AdapterConfig {
            scorers: vec![ScorerConfig::ToyLexicon {
                id: "toxicity".to_string(),
                path: "lexicon.tsv".into(),
                bias: locedit::synth::LEXICON_BIAS,
                dim: 16,
                piece_width: 3,
                attention: true,
            }],
            mask_filler: FillerConfig::ToyCount {
                path: "clean.txt".into(),
            },
            causal_lm: LmConfig::ToyNgram {
                path: "clean.txt".into(),
                order: 2,
            },
        },
        io: IoConfig {
            input: Some("inputs.jsonl".into()),
            output: Some("out/edits.jsonl".into()),
            trace: false,
        },
        evaluation: Some(EvaluationConfig {
            classifier: Some("toxicity".to_string()),
            invert: true,
            acceptability: None,
            embeddings: Some(EmbeddingConfig::Hashed { dim: 32 }),
            distinct_n: 3,
            rep_n: 3,
        }),
    }
}

fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut w = std::io::BufWriter::new(
        fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    for l in lines {
        writeln!(w, "{}", l.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes lexicon, clean corpus, `inputs` toxic records, graded training
/// data and the config into `dir`. Returns the config path.
pub fn write_toy_task(dir: &Path, inputs: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let task = DetoxTask::generate(inputs, seed);
    write_lines(
        &dir.join("lexicon.tsv"),
        task.lexicon.iter().map(|(w, v)| format!("{w}\t{v}")),
    )?;
    write_lines(&dir.join("clean.txt"), &task.clean_corpus)?;
    let records = task.inputs.iter().enumerate().map(|(i, t)| {
        serde_json::to_string(&BatchRecord {
            id: format!("{i:04}"),
            prompt: None,
            text: t.clone(),
        })
        .unwrap()
    });
    write_lines(&dir.join("inputs.jsonl"), records)?;
    let graded = graded_examples(1000, seed).into_iter().map(|g| {
        serde_json::to_string(&TrainingExample {
            text: g.text,
            label: g.label,
        })
        .unwrap()
    });
    write_lines(&dir.join("graded.jsonl"), graded)?;
    let config = dir.join(CONFIG_FILE);
    fs::write(&config, toml::to_string_pretty(&toy_config(seed))?)
        .with_context(|| format!("cannot write {}", config.display()))?;
    Ok(config)
}
