//! Combining per-slot candidates into full texts and picking one.
//!
//! Selection rule: among hypotheses satisfying every scorer constraint, the
//! one with the lowest fluency energy; if none satisfies them, the one with
//! the lowest overall energy. Remaining ties go to the lower overall energy
//! and then to the lexicographically smaller slot-choice vector.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::edit::{CandidateSet, MaskedText};
use crate::energy::{EnergyModel, EnergyReport, TermSet};
use crate::{Error, Result};

pub const DEFAULT_EXPLOSION_GUARD: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Exhaustive,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    /// Candidate rank chosen at each slot.
    pub slot_choices: Vec<usize>,
    pub tokens: Vec<String>,
    pub report: Option<EnergyReport>,
    pub origin: Origin,
}

impl Hypothesis {
    fn build(masked: &MaskedText, cands: &CandidateSet, choices: Vec<usize>, origin: Origin) -> Self {
        let tokens: Vec<String> = choices
            .iter()
            .enumerate()
            .map(|(j, &c)| cands.per_slot[j][c].token.clone())
            .collect();
        Self {
            text: masked.render(&tokens),
            slot_choices: choices,
            tokens,
            report: None,
            origin,
        }
    }

    fn report(&self) -> Result<&EnergyReport> {
        self.report
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("hypothesis `{}` was not evaluated", self.text)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamScoring {
    /// Fluency energy of the filled prefix, ending at the current slot.
    FluencyOnly,
    /// Overall energy of the filled prefix followed by the original suffix.
    OverallEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub scoring: BeamScoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reranker {
    Exhaustive,
    BeamFluency,
    BeamOverall,
}

impl Reranker {
    pub fn beam_scoring(self) -> Option<BeamScoring> {
        match self {
            Reranker::Exhaustive => None,
            Reranker::BeamFluency => Some(BeamScoring::FluencyOnly),
            Reranker::BeamOverall => Some(BeamScoring::OverallEnergy),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Reranker::Exhaustive => "exhaustive",
            Reranker::BeamFluency => "beam_fluency",
            Reranker::BeamOverall => "beam_overall",
        }
    }
}

impl std::str::FromStr for Reranker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Reranker::Exhaustive),
            "beam_fluency" => Ok(Reranker::BeamFluency),
            "beam_overall" => Ok(Reranker::BeamOverall),
            other => Err(Error::Input(format!(
                "unknown reranker `{other}` (expected exhaustive, beam_fluency or beam_overall)"
            ))),
        }
    }
}

/// One branching step of the beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamStep {
    pub slot: usize,
    /// Token position of the slot in the mask filler's view.
    pub position: usize,
    pub branched: usize,
    pub kept: usize,
    /// Scores of the kept partial hypotheses, best first.
    pub scores: Vec<f64>,
}

/// Every combination of candidates, in lexicographic slot-choice order.
pub fn enumerate_hypotheses(
    masked: &MaskedText,
    cands: &CandidateSet,
    guard: usize,
) -> Result<Vec<Hypothesis>> {
    let count = cands.product();
    if count > guard as u128 {
        return Err(Error::ExplosionGuard { count, guard });
    }
    let counts = cands.counts();
    let mut out = Vec::with_capacity(count as usize);
    if count == 0 {
        return Ok(out);
    }
    let mut choice = vec![0usize; counts.len()];
    loop {
        out.push(Hypothesis::build(masked, cands, choice.clone(), Origin::Exhaustive));
        // odometer increment, last slot fastest
        let mut j = counts.len();
        loop {
            if j == 0 {
                return Ok(out);
            }
            j -= 1;
            choice[j] += 1;
            if choice[j] < counts[j] {
                break;
            }
            choice[j] = 0;
        }
    }
}

/// Fills in the energy report of every hypothesis in one batch.
pub fn evaluate_hypotheses(hyps: &mut [Hypothesis], energy: &EnergyModel) -> Result<()> {
    let texts: Vec<&str> = hyps.iter().map(|h| h.text.as_str()).collect();
    let reports = energy.evaluate(&texts);
    for (h, r) in hyps.iter_mut().zip(reports) {
        h.report = Some(r?);
    }
    Ok(())
}

fn fluency_of(report: &EnergyReport, terms: &TermSet) -> f64 {
    report.energy(&terms.fluency().name)
}

/// Index of the hypothesis chosen by the selection rule.
pub fn select_best(hyps: &[Hypothesis], terms: &TermSet) -> Result<usize> {
    if hyps.is_empty() {
        return Err(Error::Contract("cannot select from an empty hypothesis set".into()));
    }
    let mut satisfying = Vec::new();
    for (i, h) in hyps.iter().enumerate() {
        if h.report()?.constraints_satisfied(terms) {
            satisfying.push(i);
        }
    }
    let by_overall = |a: &usize, b: &usize| -> Ordering {
        let (ra, rb) = (hyps[*a].report.as_ref().unwrap(), hyps[*b].report.as_ref().unwrap());
        ra.overall
            .total_cmp(&rb.overall)
            .then_with(|| hyps[*a].slot_choices.cmp(&hyps[*b].slot_choices))
    };
    let best = if satisfying.is_empty() {
        (0..hyps.len()).min_by(by_overall)
    } else {
        satisfying.into_iter().min_by(|a, b| {
            let (ra, rb) = (hyps[*a].report.as_ref().unwrap(), hyps[*b].report.as_ref().unwrap());
            fluency_of(ra, terms)
                .total_cmp(&fluency_of(rb, terms))
                .then_with(|| by_overall(a, b))
        })
    };
    Ok(best.unwrap())
}

/// Beam search that branches only at masked slots.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    /// Surviving full hypotheses (at most `beam_size`), evaluated.
    pub hypotheses: Vec<Hypothesis>,
    pub steps: Vec<BeamStep>,
    /// Texts scored, partial ones included.
    pub evaluations: usize,
}

pub fn beam_search(
    masked: &MaskedText,
    cands: &CandidateSet,
    cfg: BeamConfig,
    energy: &EnergyModel,
) -> Result<BeamOutput> {
    if cfg.beam_size == 0 {
        return Err(Error::Contract("beam size must be >= 1".into()));
    }
    if cands.per_slot.len() != masked.num_slots() {
        return Err(Error::Contract(format!(
            "{} candidate lists for {} slots",
            cands.per_slot.len(),
            masked.num_slots()
        )));
    }
    let mut beams: Vec<(Vec<usize>, Option<EnergyReport>)> = vec![(Vec::new(), None)];
    let mut steps = Vec::with_capacity(masked.num_slots());
    let mut evaluations = 0;
    for (j, slot_cands) in cands.per_slot.iter().enumerate() {
        let expanded: Vec<Vec<usize>> = beams
            .iter()
            .flat_map(|(prefix, _)| {
                (0..slot_cands.len()).map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
        let tokens_of = |choices: &[usize]| -> Vec<String> {
            choices
                .iter()
                .enumerate()
                .map(|(s, &c)| cands.per_slot[s][c].token.clone())
                .collect()
        };
        let mut scored: Vec<(f64, Vec<usize>, Option<EnergyReport>)> = match cfg.scoring {
            BeamScoring::FluencyOnly => expanded
                .into_iter()
                .map(|ch| {
                    let prefix = masked.render_prefix(&tokens_of(&ch));
                    energy.fluency(&prefix).map(|f| (f, ch, None))
                })
                .collect::<Result<_>>()?,
            BeamScoring::OverallEnergy => {
                let texts: Vec<String> = expanded.iter().map(|ch| masked.render(&tokens_of(ch))).collect();
                let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                let reports = energy.evaluate(&refs);
                expanded
                    .into_iter()
                    .zip(reports)
                    .map(|(ch, r)| r.map(|r| (r.overall, ch, Some(r))))
                    .collect::<Result<_>>()?
            }
        };
        evaluations += scored.len();
        let branched = scored.len();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        scored.truncate(cfg.beam_size);
        steps.push(BeamStep {
            slot: j,
            position: masked.slot_indices[j],
            branched,
            kept: scored.len(),
            scores: scored.iter().map(|s| s.0).collect(),
        });
        beams = scored.into_iter().map(|(_, ch, r)| (ch, r)).collect();
    }
    let mut hypotheses: Vec<Hypothesis> = Vec::with_capacity(beams.len());
    let mut pending = Vec::new();
    for (i, (choices, report)) in beams.into_iter().enumerate() {
        let mut h = Hypothesis::build(masked, cands, choices, Origin::Beam);
        h.report = report;
        if h.report.is_none() {
            pending.push(i);
        }
        hypotheses.push(h);
    }
    if !pending.is_empty() {
        let texts: Vec<&str> = pending.iter().map(|&i| hypotheses[i].text.as_str()).collect();
        let reports = energy.evaluate(&texts);
        evaluations += reports.len();
        for (&i, r) in pending.iter().zip(reports) {
            hypotheses[i].report = Some(r?);
        }
    }
    Ok(BeamOutput {
        hypotheses,
        steps,
        evaluations,
    })
}

/// Result of one rerank step.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutput {
    pub best: Hypothesis,
    /// Full hypotheses the selection rule chose from.
    pub considered: usize,
    pub evaluations: usize,
    pub steps: Vec<BeamStep>,
}

pub fn rerank(
    masked: &MaskedText,
    cands: &CandidateSet,
    reranker: Reranker,
    beam_size: usize,
    guard: usize,
    energy: &EnergyModel,
) -> Result<RerankOutput> {
    let (hyps, evaluations, steps) = match reranker.beam_scoring() {
        None => {
            let mut hyps = enumerate_hypotheses(masked, cands, guard)?;
            evaluate_hypotheses(&mut hyps, energy)?;
            let n = hyps.len();
            (hyps, n, Vec::new())
        }
        Some(scoring) => {
            let out = beam_search(
                masked,
                cands,
                BeamConfig {
                    beam_size,
                    scoring,
                },
                energy,
            )?;
            (out.hypotheses, out.evaluations, out.steps)
        }
    };
    let best = select_best(&hyps, energy.terms())?;
    let considered = hyps.len();
    let best = hyps.into_iter().nth(best).unwrap();
    Ok(RerankOutput {
        best,
        considered,
        evaluations,
        steps,
    })
}
