//! Energy terms and their composition.
//!
//! A scorer-backed term turns a logit `g` into `f = -ln sigmoid(g)`; the
//! fluency term is the unnormalized negative log-likelihood of the text under
//! the causal LM. The overall energy is the weighted sum of the terms.
//! Scorer thresholds are configured as probabilities in `(0, 1)` and compared
//! in energy space as `f < -ln(threshold)`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::math::neg_log_sigmoid;
use crate::modeling::{Adapters, CausalLmAdapter, ScorerAdapter};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Scorer,
    Fluency,
}

/// One constraint: its weight, threshold and what computes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTerm {
    pub name: String,
    pub weight: f64,
    /// Score-space threshold for scorer terms, raw energy for the fluency term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub kind: TermKind,
    /// Id of the scorer adapter backing a scorer term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
}

impl EnergyTerm {
    pub fn scorer(name: &str, weight: f64, threshold: f64, scorer_id: &str) -> Self {
        Self {
            name: name.to_string(),
            weight,
            threshold: Some(threshold),
            kind: TermKind::Scorer,
            scorer: Some(scorer_id.to_string()),
        }
    }

    pub fn fluency(name: &str, weight: f64) -> Self {
        Self {
            name: name.to_string(),
            weight,
            threshold: None,
            kind: TermKind::Fluency,
            scorer: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    /// The threshold in energy space: `-ln(threshold)` for scorer terms; the
    /// raw value (default `+inf`) for fluency.
    pub fn energy_threshold(&self) -> f64 {
        match self.kind {
            TermKind::Scorer => -self.threshold.unwrap_or(0.5).ln(),
            TermKind::Fluency => self.threshold.unwrap_or(f64::INFINITY),
        }
    }
}

/// A validated set of terms: unique names, nonnegative weights, exactly one
/// fluency term, scorer thresholds in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TermSet {
    terms: Vec<EnergyTerm>,
    #[serde(skip)]
    fluency: usize,
}

impl TermSet {
    pub fn new(terms: Vec<EnergyTerm>) -> Result<Self> {
        let mut names = BTreeSet::new();
        let mut fluency = None;
        for (i, t) in terms.iter().enumerate() {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Input(format!("duplicate term name `{}`", t.name)));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(Error::Input(format!(
                    "term `{}`: weight must be finite and >= 0, got {}",
                    t.name, t.weight
                )));
            }
            match t.kind {
                TermKind::Fluency => {
                    if fluency.replace(i).is_some() {
                        return Err(Error::Input("more than one fluency term".into()));
                    }
                    if t.scorer.is_some() {
                        return Err(Error::Input(format!(
                            "term `{}`: fluency terms take no scorer",
                            t.name
                        )));
                    }
                    if matches!(t.threshold, Some(x) if x.is_nan()) {
                        return Err(Error::Input(format!("term `{}`: NaN threshold", t.name)));
                    }
                }
                TermKind::Scorer => {
                    match t.threshold {
                        Some(x) if x > 0.0 && x < 1.0 => {}
                        other => {
                            return Err(Error::Input(format!(
                                "term `{}`: scorer threshold must lie in (0, 1), got {other:?}",
                                t.name
                            )))
                        }
                    }
                    if t.scorer.is_none() {
                        return Err(Error::Input(format!("term `{}`: missing scorer id", t.name)));
                    }
                }
            }
        }
        let fluency =
            fluency.ok_or_else(|| Error::Input("term set needs exactly one fluency term".into()))?;
        Ok(Self { terms, fluency })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EnergyTerm> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&EnergyTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn fluency(&self) -> &EnergyTerm {
        &self.terms[self.fluency]
    }

    pub fn constraints(&self) -> impl Iterator<Item = &EnergyTerm> {
        self.terms.iter().filter(|t| t.kind == TermKind::Scorer)
    }

    /// Same terms with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .cloned()
            .map(|mut t| {
                t.weight *= c;
                t
            })
            .collect();
        Self::new(terms)
    }
}

impl<'a> IntoIterator for &'a TermSet {
    type Item = &'a EnergyTerm;
    type IntoIter = std::slice::Iter<'a, EnergyTerm>;

    fn into_iter(self) -> Self::IntoIter {
        self.terms.iter()
    }
}

impl<'de> Deserialize<'de> for TermSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<EnergyTerm>::deserialize(d)?;
        TermSet::new(terms).map_err(serde::de::Error::custom)
    }
}

/// Per-term energies, their weighted sum and satisfaction flags for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub per_term: BTreeMap<String, f64>,
    pub overall: f64,
    pub satisfied: BTreeMap<String, bool>,
}

impl EnergyReport {
    /// Builds a report from per-term energies.
    pub fn from_energies(terms: &TermSet, per_term: BTreeMap<String, f64>) -> Result<Self> {
        let overall = overall_energy(terms, &per_term)?;
        let satisfied = terms
            .iter()
            .map(|t| (t.name.clone(), is_satisfied(t, per_term[&t.name])))
            .collect();
        Ok(Self {
            per_term,
            overall,
            satisfied,
        })
    }

    /// Every term below its threshold, fluency included (its default
    /// threshold is `+inf`, so by default only constraints matter).
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.values().all(|&s| s)
    }

    /// Every scorer-backed term below its threshold; fluency ignored.
    pub fn constraints_satisfied(&self, terms: &TermSet) -> bool {
        terms.constraints().all(|t| self.satisfied[&t.name])
    }

    pub fn energy(&self, name: &str) -> f64 {
        self.per_term[name]
    }
}

/// `-ln sigmoid(g)`.
pub fn score_to_energy(g: f64) -> Result<f64> {
    if !g.is_finite() {
        return Err(Error::Input(format!("scorer logit must be finite, got {g}")));
    }
    Ok(neg_log_sigmoid(g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluencyEnergy {
    pub energy: f64,
    /// The input had no tokens.
    pub degenerate: bool,
}

/// Negative sum of token log-probabilities (no length normalization).
pub fn fluency_energy(token_logprobs: &[f64]) -> Result<FluencyEnergy> {
    if token_logprobs.is_empty() {
        log::warn!("fluency energy of an empty token sequence");
        return Ok(FluencyEnergy {
            energy: 0.0,
            degenerate: true,
        });
    }
    let mut sum = 0.0;
    for &lp in token_logprobs {
        if lp.is_nan() || lp > 1e-12 {
            return Err(Error::Input(format!("log-probability must be <= 0, got {lp}")));
        }
        sum += lp;
    }
    Ok(FluencyEnergy {
        energy: -sum,
        degenerate: false,
    })
}

/// `sum_i w_i f_i`.
pub fn overall_energy(terms: &TermSet, per_term: &BTreeMap<String, f64>) -> Result<f64> {
    terms.iter().try_fold(0.0, |acc, t| {
        per_term
            .get(&t.name)
            .map(|f| acc + t.weight * f)
            .ok_or_else(|| Error::Contract(format!("no energy value for term `{}`", t.name)))
    })
}

pub fn is_satisfied(term: &EnergyTerm, energy: f64) -> bool {
    energy < term.energy_threshold()
}

/// A term set bound to concrete adapters.
#[derive(Clone)]
pub struct EnergyModel {
    terms: TermSet,
    scorers: Vec<Option<Arc<dyn ScorerAdapter>>>,
    lm: Arc<dyn CausalLmAdapter>,
}

impl std::fmt::Debug for EnergyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergyModel")
            .field("terms", &self.terms)
            .field("lm", &self.lm.id())
            .finish()
    }
}

impl EnergyModel {
    pub fn bind(terms: TermSet, adapters: &Adapters) -> Result<Self> {
        let scorers = terms
            .iter()
            .map(|t| match (&t.kind, &t.scorer) {
                (TermKind::Scorer, Some(id)) => adapters
                    .scorers
                    .get(id)
                    .cloned()
                    .map(Some)
                    .ok_or_else(|| Error::Input(format!("term `{}`: no scorer bound as `{id}`", t.name))),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            terms,
            scorers,
            lm: adapters.causal_lm.clone(),
        })
    }

    pub fn terms(&self) -> &TermSet {
        &self.terms
    }

    pub fn causal_lm(&self) -> &Arc<dyn CausalLmAdapter> {
        &self.lm
    }

    pub fn scorer_for(&self, term: &str) -> Option<&Arc<dyn ScorerAdapter>> {
        let i = self.terms.iter().position(|t| t.name == term)?;
        self.scorers[i].as_ref()
    }

    /// Fluency energy of a single text.
    pub fn fluency(&self, text: &str) -> Result<f64> {
        let lp = self.lm.token_logprobs(text)?;
        Ok(fluency_energy(&lp)?.energy)
    }

    pub fn evaluate_one(&self, text: &str) -> Result<EnergyReport> {
        self.evaluate(&[text]).pop().unwrap()
    }

    /// One report per text. Scorer calls are batched per term; if a batch
    /// call fails each text is retried alone so one bad text does not sink
    /// the rest.
    pub fn evaluate(&self, texts: &[&str]) -> Vec<Result<EnergyReport>> {
        let n = texts.len();
        let mut energies: Vec<Result<BTreeMap<String, f64>>> =
            (0..n).map(|_| Ok(BTreeMap::new())).collect();
        for (term, scorer) in self.terms.iter().zip(&self.scorers) {
            let values: Vec<Result<f64>> = match scorer {
                Some(scorer) => {
                    let logits: Vec<Result<f64>> = match scorer.score_batch(texts) {
                        Ok(gs) if gs.len() == n => gs.into_iter().map(Ok).collect(),
                        Ok(gs) => {
                            let msg = format!("returned {} logits for {n} texts", gs.len());
                            (0..n)
                                .map(|_| Err(Error::adapter(scorer.id(), msg.clone())))
                                .collect()
                        }
                        Err(_) => texts
                            .iter()
                            .map(|t| scorer.score_batch(&[t]).map(|g| g[0]))
                            .collect(),
                    };
                    logits
                        .into_iter()
                        .map(|g| g.and_then(score_to_energy))
                        .collect()
                }
                None => texts.iter().map(|t| self.fluency(t)).collect(),
            };
            for (slot, v) in energies.iter_mut().zip(values) {
                if let Ok(map) = slot {
                    match v {
                        Ok(e) => {
                            map.insert(term.name.clone(), e);
                        }
                        Err(err) => *slot = Err(err),
                    }
                }
            }
        }
        energies
            .into_iter()
            .map(|e| e.and_then(|m| EnergyReport::from_energies(&self.terms, m)))
            .collect()
    }
}
