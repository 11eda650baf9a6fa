//! Soft-label objective and a minibatch trainer for [`BagScorer`].
//!
//! The loss is binary cross-entropy against a continuous label
//! `s in [0, 1]`: `-(s ln p + (1 - s) ln(1 - p))` with `p = sigmoid(g)`.
//! Classification mode thresholds `s` at 0.5 first and is otherwise the same
//! code path.

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{dot, sigmoid};
use crate::modeling::BagScorer;
use crate::{Error, Result};

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingExample {
    pub text: String,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Regression,
    Classification,
}

impl Objective {
    pub fn target(self, s: f64) -> f64 {
        match self {
            Objective::Regression => s,
            Objective::Classification => {
                if s >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Regression => "regression",
            Objective::Classification => "classification",
        }
    }
}

fn check_label(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Input(format!("label must lie in [0, 1], got {s}")));
    }
    Ok(())
}

/// `-(s ln p + (1 - s) ln(1 - p))`, `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn soft_cross_entropy(s: f64, p: f64) -> Result<f64> {
    check_label(s)?;
    if p.is_nan() {
        return Err(Error::Input("predicted probability is NaN".into()));
    }
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(-(s * p.ln() + (1.0 - s) * (1.0 - p).ln()))
}

/// Derivative of the soft cross-entropy with respect to the logit.
pub fn soft_ce_gradient(s: f64, g: f64) -> f64 {
    sigmoid(g) - s
}

/// The label-weighted score `-s * sigmoid(g)`, reported next to the
/// training loss for comparison. It is not minimized.
pub fn label_weighted_score(s: f64, g: f64) -> f64 {
    -s * sigmoid(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.5,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: Objective,
    /// Mean loss before the first update.
    pub initial_loss: f64,
    /// Mean loss over the training set after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean [`label_weighted_score`] after each epoch.
    pub label_weighted: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

struct Gradients {
    embeddings: Vec<Vec<f64>>,
    readout: Vec<f64>,
    bias: f64,
}

fn mean_losses(model: &BagScorer, data: &[(Vec<Option<usize>>, f64, f64)]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut weighted = 0.0;
    for (rows, target, label) in data {
        let g = logit(model, rows);
        loss += soft_cross_entropy(*target, sigmoid(g))?;
        weighted += label_weighted_score(*label, g);
    }
    let n = data.len() as f64;
    Ok((loss / n, weighted / n))
}

fn logit(model: &BagScorer, rows: &[Option<usize>]) -> f64 {
    model.bias
        + rows
            .iter()
            .flatten()
            .map(|&r| {
                let z = dot(&model.readout, &model.embeddings[r]);
                z + 0.5 * z * z.abs()
            })
            .sum::<f64>()
}

/// Trains `model` in place with minibatch gradient descent.
pub fn train_scorer(
    examples: &[TrainingExample],
    model: &mut BagScorer,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Input(
            "batch size must be >= 1 and learning rate positive".into(),
        ));
    }
    for ex in examples {
        check_label(ex.label)?;
    }
    // Unknown pieces embed to zero and receive no update.
    let data: Vec<(Vec<Option<usize>>, f64, f64)> = examples
        .iter()
        .map(|ex| (model.token_rows(&ex.text), objective.target(ex.label), ex.label))
        .collect();
    let (initial_loss, _) = mean_losses(model, &data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let dim = model.dim();
    let mut report = TrainReport {
        objective,
        initial_loss,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        label_weighted: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients {
                embeddings: vec![vec![0.0; dim]; model.embeddings.len()],
                readout: vec![0.0; dim],
                bias: 0.0,
            };
            for &i in batch {
                let (rows, target, _) = &data[i];
                let dl_dg = soft_ce_gradient(*target, logit(model, rows));
                grads.bias += dl_dg;
                for &r in rows.iter().flatten() {
                    let e = &model.embeddings[r];
                    let slope = 1.0 + dot(&model.readout, e).abs();
                    for (d, &ed) in e.iter().enumerate() {
                        grads.readout[d] += dl_dg * slope * ed;
                        grads.embeddings[r][d] += dl_dg * slope * model.readout[d];
                    }
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            model.bias -= step * grads.bias;
            for d in 0..dim {
                model.readout[d] -= step * grads.readout[d];
            }
            for (row, g) in model.embeddings.iter_mut().zip(&grads.embeddings) {
                for (x, gx) in row.iter_mut().zip(g) {
                    *x -= step * gx;
                }
            }
        }
        let (loss, weighted) = mean_losses(model, &data).unwrap_or((f64::NAN, f64::NAN));
        let finite = model.bias.is_finite()
            && model.readout.iter().all(|x| x.is_finite())
            && model.embeddings.iter().flatten().all(|x| x.is_finite());
        if !loss.is_finite() || !finite {
            return Err(Error::Divergence {
                epoch,
                message: format!(
                    "mean loss {loss}, parameters finite: {finite}; try a smaller learning rate (now {})",
                    cfg.learning_rate
                ),
            });
        }
        log::debug!("epoch {epoch}: {} loss {loss:.6}", objective.name());
        report.epoch_losses.push(loss);
        report.label_weighted.push(weighted);
    }
    Ok(report)
}

/// Reads `{"text", "label"}` lines. Every problem names its 1-based line.
pub fn load_examples<R: BufRead>(input: R) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&ex.label) {
            return Err(Error::Record {
                line: i + 1,
                message: format!("label {} outside [0, 1]", ex.label),
            });
        }
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::Input("training data is empty".into()));
    }
    Ok(out)
}
