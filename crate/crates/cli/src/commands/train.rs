use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use locedit::metrics::spearman;
use locedit::modeling::BagScorer;
use locedit::training::{load_examples, train_scorer, Objective, TrainConfig, TrainReport, TrainingExample};

use super::{open_input, open_output, sidecar, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Regression,
    Classification,
    Both,
}

impl ObjectiveArg {
    fn objectives(self) -> Vec<Objective> {
        match self {
            ObjectiveArg::Regression => vec![Objective::Regression],
            ObjectiveArg::Classification => vec![Objective::Classification],
            ObjectiveArg::Both => vec![Objective::Regression, Objective::Classification],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// `{"text", "label"}` JSONL with labels in [0, 1].
    #[arg(long)]
    pub input: PathBuf,
    /// Artifact prefix; writes `<output>.<objective>` and `<output>.report.json`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Both)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub piece_width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of the data kept out of training for the rank comparison.
    #[arg(long, default_value_t = 0.2)]
    pub heldout_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResult {
    pub artifact: PathBuf,
    pub report: TrainReport,
    /// Spearman correlation of held-out logits with held-out labels.
    pub heldout_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_examples: usize,
    pub heldout_examples: usize,
    pub results: Vec<ObjectiveResult>,
}

/// Seeded split into (train, held out).
pub fn split(
    mut examples: Vec<TrainingExample>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>)> {
    if !(0.0..1.0).contains(&fraction) {
        bail!("--heldout-fraction must lie in [0, 1), got {fraction}");
    }
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = (examples.len() as f64 * fraction).round() as usize;
    let held = held.min(examples.len() - 1);
    let heldout = examples.split_off(examples.len() - held);
    Ok((examples, heldout))
}

fn rank_agreement(model: &BagScorer, heldout: &[TrainingExample]) -> Option<f64> {
    if heldout.len() < 2 {
        return None;
    }
    let logits: Vec<f64> = heldout.iter().map(|e| model.logit(&e.text)).collect();
    let labels: Vec<f64> = heldout.iter().map(|e| e.label).collect();
    spearman(&logits, &labels).ok()
}

/// Trains one scorer per objective from identical initial weights.
pub fn train_all(args: &TrainArgs, examples: Vec<TrainingExample>) -> Result<TrainSummary> {
    let (train, heldout) = split(examples, args.heldout_fraction, args.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let mut results = Vec::new();
    for objective in args.objective.objectives() {
        let mut model = BagScorer::trainable(
            objective.name(),
            train.iter().map(|e| e.text.as_str()),
            args.dim,
            args.piece_width,
            args.seed,
        );
        let report = train_scorer(&train, &mut model, &cfg, objective)
            .with_context(|| format!("training the {} scorer", objective.name()))?;
        let artifact = sidecar(&args.output, objective.name());
        save(&model, &artifact)?;
        results.push(ObjectiveResult {
            artifact,
            heldout_spearman: rank_agreement(&model, &heldout),
            report,
        });
    }
    Ok(TrainSummary {
        train_examples: train.len(),
        heldout_examples: heldout.len(),
        results,
    })
}

fn save(model: &BagScorer, path: &Path) -> Result<()> {
    let mut w = open_output(Some(path))?;
    model.save(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn execute(args: &TrainArgs) -> Result<()> {
    let examples = load_examples(open_input(&args.input)?)
        .with_context(|| format!("{}", args.input.display()))?;
    let summary = train_all(args, examples)?;
    write_json(&sidecar(&args.output, "report.json"), &summary)?;
    for r in &summary.results {
        println!(
            "{}\tfinal_loss {:.6}\theldout_spearman {}\t{}",
            r.report.objective.name(),
            r.report.final_loss(),
            r.heldout_spearman.map_or("n/a".to_string(), |v| format!("{v:.4}")),
            r.artifact.display()
        );
    }
    Ok(())
}
