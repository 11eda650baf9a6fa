//! The iterative edit loop.
//!
//! `y*` starts as the input and is replaced only when an edit has strictly
//! lower overall energy. Each iteration locates on the latest edit, not on
//! `y*`, so the working text may get worse for a step while `y*` never does.
//! The loop stops early once `y*` satisfies every term.

use std::io::BufRead;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::edit::{build_masked, generate_candidates};
use crate::energy::{EnergyModel, EnergyReport, TermKind, TermSet};
use crate::locate::{locate, map_spans, SaliencyMethod};
use crate::modeling::{Adapters, MaskFillerAdapter, ScorerAdapter};
use crate::rerank::{rerank, BeamStep, Reranker, DEFAULT_EXPLOSION_GUARD};
use crate::{Error, Result};

fn default_guard() -> usize {
    DEFAULT_EXPLOSION_GUARD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// `N`
    pub max_iterations: usize,
    /// `m`
    pub max_edit_tokens: usize,
    /// `k`
    pub candidates_per_slot: usize,
    /// `b`
    pub beam_size: usize,
    pub reranker: Reranker,
    pub locator: SaliencyMethod,
    #[serde(default = "default_guard")]
    pub explosion_guard: usize,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_iterations", self.max_iterations),
            ("max_edit_tokens", self.max_edit_tokens),
            ("candidates_per_slot", self.candidates_per_slot),
            ("beam_size", self.beam_size),
            ("explosion_guard", self.explosion_guard),
        ] {
            if v == 0 {
                return Err(Error::Input(format!("controller.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocatedRecord {
    /// Selected tokens in the scorer's tokenization, before word completion.
    pub selected: Vec<usize>,
    pub fallback: bool,
    pub char_spans: Vec<(usize, usize)>,
    /// Masked positions in the mask filler's tokenization.
    pub slots: Vec<usize>,
    pub original_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub input: String,
    pub located: LocatedRecord,
    /// Candidate tokens per slot, best first.
    pub candidates: Vec<Vec<String>>,
    pub short_list: bool,
    pub hypotheses_considered: usize,
    pub selected: String,
    pub selected_tokens: Vec<String>,
    pub report: EnergyReport,
    pub promoted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beam_steps: Vec<BeamStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub y0: String,
    pub best_text: String,
    /// `None` only if the input itself could not be evaluated.
    pub best_report: Option<EnergyReport>,
    pub initial_report: Option<EnergyReport>,
    pub iterations_run: usize,
    pub early_stopped: bool,
    /// Set when an adapter failed mid-run; the trace holds completed iterations.
    pub error: Option<String>,
    pub trace: Vec<IterationRecord>,
    pub energy_evaluations: usize,
    pub warnings: Vec<String>,
}

impl EditOutcome {
    /// `y*` satisfies every scorer constraint.
    pub fn satisfied(&self, terms: &TermSet) -> bool {
        self.best_report
            .as_ref()
            .is_some_and(|r| r.constraints_satisfied(terms))
    }
}

/// A configured edit loop bound to adapters.
#[derive(Clone)]
pub struct Editor {
    config: ControllerConfig,
    energy: EnergyModel,
    primary_term: String,
    primary: Arc<dyn ScorerAdapter>,
    filler: Arc<dyn MaskFillerAdapter>,
    concurrent_safe: bool,
}

impl std::fmt::Debug for Editor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Editor")
            .field("config", &self.config)
            .field("primary_term", &self.primary_term)
            .finish()
    }
}

impl Editor {
    pub fn new(
        config: ControllerConfig,
        terms: TermSet,
        primary_term: &str,
        adapters: &Adapters,
    ) -> Result<Self> {
        config.validate()?;
        match terms.get(primary_term) {
            Some(t) if t.kind == TermKind::Scorer => {}
            Some(_) => {
                return Err(Error::Input(format!(
                    "primary term `{primary_term}` must be a scorer term"
                )))
            }
            None => return Err(Error::Input(format!("unknown primary term `{primary_term}`"))),
        }
        let energy = EnergyModel::bind(terms, adapters)?;
        let primary = energy.scorer_for(primary_term).unwrap().clone();
        let caps = primary.capabilities();
        let capable = match config.locator {
            SaliencyMethod::GradientNorm => caps.gradients,
            SaliencyMethod::Attention => caps.attention,
        };
        if !capable {
            let what = match config.locator {
                SaliencyMethod::GradientNorm => "embedding gradients",
                SaliencyMethod::Attention => "attention maps",
            };
            return Err(Error::capability(primary.id(), what));
        }
        Ok(Self {
            config,
            energy,
            primary_term: primary_term.to_string(),
            primary,
            filler: adapters.mask_filler.clone(),
            concurrent_safe: adapters.concurrent_safe(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn energy(&self) -> &EnergyModel {
        &self.energy
    }

    pub fn terms(&self) -> &TermSet {
        self.energy.terms()
    }

    pub fn primary_term(&self) -> &str {
        &self.primary_term
    }

    pub fn run(&self, y0: &str) -> EditOutcome {
        let mut out = EditOutcome {
            y0: y0.to_string(),
            best_text: y0.to_string(),
            best_report: None,
            initial_report: None,
            iterations_run: 0,
            early_stopped: false,
            error: None,
            trace: Vec::new(),
            energy_evaluations: 0,
            warnings: Vec::new(),
        };
        let initial = self.energy.evaluate_one(y0);
        out.energy_evaluations += 1;
        let initial = match initial {
            Ok(r) => r,
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        };
        out.initial_report = Some(initial.clone());
        out.best_report = Some(initial);
        if y0.trim().is_empty() {
            log::warn!("empty input text returned unchanged");
            out.warnings.push("empty input text returned unchanged".into());
            return out;
        }
        let mut current = y0.to_string();
        for iteration in 1..=self.config.max_iterations {
            if out.best_report.as_ref().unwrap().all_satisfied() {
                out.early_stopped = true;
                break;
            }
            match self.step(iteration, &current) {
                Ok((mut record, evaluations)) => {
                    out.energy_evaluations += evaluations;
                    let best = out.best_report.as_ref().unwrap();
                    if record.report.overall < best.overall {
                        record.promoted = true;
                        out.best_text = record.selected.clone();
                        out.best_report = Some(record.report.clone());
                    }
                    current = record.selected.clone();
                    out.trace.push(record);
                    out.iterations_run = iteration;
                }
                Err(e) => {
                    out.error = Some(format!("iteration {iteration}: {e}"));
                    break;
                }
            }
        }
        out
    }

    fn step(&self, iteration: usize, text: &str) -> Result<(IterationRecord, usize)> {
        let cfg = &self.config;
        let located = locate(text, self.primary.as_ref(), cfg.locator, cfg.max_edit_tokens)?;
        let view = self.filler.tokenize(text);
        let slots = map_spans(&located.spans, text, &view)?;
        let masked = build_masked(view, &slots)?;
        let cands = generate_candidates(&masked, cfg.candidates_per_slot, self.filler.as_ref())?;
        let ranked = rerank(
            &masked,
            &cands,
            cfg.reranker,
            cfg.beam_size,
            cfg.explosion_guard,
            &self.energy,
        )?;
        let report = ranked.best.report.clone().unwrap();
        let record = IterationRecord {
            iteration,
            input: text.to_string(),
            located: LocatedRecord {
                selected: located.selection.indices,
                fallback: located.selection.fallback,
                char_spans: located.spans.char_spans,
                slots: masked.slot_indices.clone(),
                original_tokens: masked.original_tokens.clone(),
            },
            candidates: cands
                .per_slot
                .iter()
                .map(|s| s.iter().map(|c| c.token.clone()).collect())
                .collect(),
            short_list: cands.short_list,
            hypotheses_considered: ranked.considered,
            selected: ranked.best.text,
            selected_tokens: ranked.best.tokens,
            report,
            promoted: false,
            beam_steps: ranked.steps,
        };
        Ok((record, ranked.evaluations))
    }

    /// Runs every record, in input order. Uses up to `workers` threads when
    /// all adapters are safe to share, one otherwise.
    pub fn run_batch(&self, records: &[BatchRecord], workers: usize) -> Result<BatchOutput> {
        use rayon::prelude::*;
        let mut workers = workers.max(1);
        if workers > 1 && !self.concurrent_safe {
            log::warn!("adapters are not concurrent-safe; running with one worker");
            workers = 1;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
        let start = Instant::now();
        let outcomes: Vec<EditOutcome> =
            pool.install(|| records.par_iter().map(|r| self.run(&r.text)).collect());
        let seconds = start.elapsed().as_secs_f64();
        let lm = self.energy.causal_lm();
        let tokens = outcomes
            .iter()
            .map(|o| lm.tokenize(&o.best_text).len())
            .sum();
        let summary = BatchSummary::from_outcomes(&outcomes, self.terms(), tokens, seconds);
        Ok(BatchOutput { outcomes, summary })
    }
}

/// One input line: `{"id", "prompt"?, "text"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub text: String,
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Parses JSONL records; blank lines are ignored, malformed ones reported
/// with their 1-based line number.
pub fn read_records<R: BufRead>(input: R) -> Result<(Vec<BatchRecord>, Vec<LineError>)> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<BatchRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((records, errors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// Same order as the input records.
    pub outcomes: Vec<EditOutcome>,
    pub summary: BatchSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub records: usize,
    pub failed: usize,
    pub satisfied: usize,
    pub satisfaction_rate: f64,
    pub mean_iterations: f64,
    pub early_stopped: usize,
    pub output_tokens: usize,
    pub wall_seconds: f64,
    pub tokens_per_second: f64,
}

impl BatchSummary {
    pub fn from_outcomes(outcomes: &[EditOutcome], terms: &TermSet, tokens: usize, seconds: f64) -> Self {
        let n = outcomes.len();
        let ratio = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
        let satisfied = outcomes.iter().filter(|o| o.satisfied(terms)).count();
        let iterations: usize = outcomes.iter().map(|o| o.iterations_run).sum();
        Self {
            records: n,
            failed: outcomes.iter().filter(|o| o.error.is_some()).count(),
            satisfied,
            satisfaction_rate: ratio(satisfied),
            mean_iterations: ratio(iterations),
            early_stopped: outcomes.iter().filter(|o| o.early_stopped).count(),
            output_tokens: tokens,
            wall_seconds: seconds,
            tokens_per_second: if seconds > 0.0 { tokens as f64 / seconds } else { 0.0 },
        }
    }
}
