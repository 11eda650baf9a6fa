//! Seeded synthetic corpora: a small detoxification task whose "toxicity"
//! is defined by a word lexicon, and graded-label data for scorer training.
//!
//! Sentences come from a handful of templates. Clean sentences fill them
//! with neutral words; toxic inputs put lexicon words in some of the same
//! positions, so a count-based filler trained on clean text has sensible
//! replacements for every toxic slot.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edit::{build_masked, generate_candidates, CandidateSet, MaskedText};
use crate::energy::{EnergyTerm, TermSet};
use crate::modeling::{Adapters, BagScorer, CountMaskFiller, NGramLm};
use crate::Result;

pub const NEUTRAL_ADJECTIVES: &[&str] = &[
    "kind", "nice", "good", "great", "calm", "quiet", "happy", "clever", "friendly", "gentle",
    "brave", "honest", "funny", "bright", "warm", "polite",
];
pub const NEUTRAL_NOUNS: &[&str] = &[
    "friend", "person", "teacher", "neighbor", "singer", "player", "doctor", "writer", "driver",
    "cook", "guy", "kid",
];
pub const TOXIC_ADJECTIVES: &[(&str, f64)] =
    &[("stupid", -2.5), ("dumb", -2.0), ("ugly", -2.0), ("pathetic", -2.0)];
pub const TOXIC_NOUNS: &[(&str, f64)] =
    &[("moron", -3.0), ("idiot", -3.0), ("jerk", -2.5), ("loser", -2.5)];
/// Mildly negative adjectives with their severity, used only in graded data.
pub const MILD_ADJECTIVES: &[(&str, f64)] = &[
    ("silly", 0.5),
    ("odd", 0.4),
    ("weird", 0.6),
    ("boring", 0.5),
    ("messy", 0.4),
    ("rude", 0.8),
];

pub const LEXICON_BIAS: f64 = 2.0;

const SUBJECTS: &[(&str, &str)] = &[("you", "are"), ("he", "is"), ("she", "is"), ("they", "are")];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Adj,
    Noun,
}

/// A template is a list of fixed words and open slots; the subject pair is
/// inserted where `"{s}"`/`"{be}"` appear.
const TEMPLATES: &[&[&str]] = &[
    &["{s}", "{be}", "a", "{A}", "{N}"],
    &["what", "a", "{A}", "{N}"],
    &["the", "{N}", "was", "{A}", "today"],
    &["{s}", "{be}", "such", "a", "{N}"],
    &["that", "{N}", "is", "so", "{A}"],
    &["i", "think", "{s}", "{be}", "{A}"],
];

/// One rendered template: words plus which of them are open slots.
struct Frame {
    words: Vec<String>,
    slots: Vec<(usize, Slot)>,
}

fn frame(rng: &mut ChaCha8Rng) -> Frame {
    let template = TEMPLATES.choose(rng).unwrap();
    let (s, be) = *SUBJECTS.choose(rng).unwrap();
    let mut words = Vec::new();
    let mut slots = Vec::new();
    for &w in template.iter() {
        match w {
            "{s}" => words.push(s.to_string()),
            "{be}" => words.push(be.to_string()),
            "{A}" => {
                slots.push((words.len(), Slot::Adj));
                words.push(String::new());
            }
            "{N}" => {
                slots.push((words.len(), Slot::Noun));
                words.push(String::new());
            }
            fixed => words.push(fixed.to_string()),
        }
    }
    Frame { words, slots }
}

fn neutral(slot: Slot, rng: &mut ChaCha8Rng) -> &'static str {
    match slot {
        Slot::Adj => NEUTRAL_ADJECTIVES.choose(rng).unwrap(),
        Slot::Noun => NEUTRAL_NOUNS.choose(rng).unwrap(),
    }
}

/// Lexicon of toxic words with their (negative) logit weights.
pub fn toxic_lexicon() -> BTreeMap<String, f64> {
    TOXIC_ADJECTIVES
        .iter()
        .chain(TOXIC_NOUNS)
        .map(|&(w, v)| (w.to_string(), v))
        .collect()
}

/// Clean template sentences.
pub fn clean_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut f = frame(&mut rng);
            for &(i, slot) in &f.slots {
                f.words[i] = neutral(slot, &mut rng).to_string();
            }
            f.words.join(" ")
        })
        .collect()
}

/// Template sentences with at least one toxic word each.
pub fn toxic_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7031_c000);
    (0..n)
        .map(|_| {
            let mut f = frame(&mut rng);
            let forced = rng.gen_range(0..f.slots.len());
            for (j, &(i, slot)) in f.slots.iter().enumerate() {
                let toxic = j == forced || rng.gen_bool(0.4);
                f.words[i] = if toxic {
                    let list = match slot {
                        Slot::Adj => TOXIC_ADJECTIVES,
                        Slot::Noun => TOXIC_NOUNS,
                    };
                    list.choose(&mut rng).unwrap().0.to_string()
                } else {
                    neutral(slot, &mut rng).to_string()
                };
            }
            f.words.join(" ")
        })
        .collect()
}

/// Everything needed to run the toy detoxification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetoxTask {
    pub lexicon: BTreeMap<String, f64>,
    pub bias: f64,
    /// Training text for the mask filler and the language model.
    pub clean_corpus: Vec<String>,
    pub inputs: Vec<String>,
}

impl DetoxTask {
    pub fn generate(inputs: usize, seed: u64) -> Self {
        Self {
            lexicon: toxic_lexicon(),
            bias: LEXICON_BIAS,
            clean_corpus: clean_sentences(600, seed),
            inputs: toxic_sentences(inputs, seed),
        }
    }

    /// Lexicon scorer `toxicity` (word pieces of width 3), count filler and
    /// bigram LM over the clean corpus.
    pub fn adapters(&self, seed: u64) -> Result<Adapters> {
        let scorer = BagScorer::lexicon("toxicity", &self.lexicon, self.bias, 16, 3, seed)?;
        let corpus = self.clean_corpus.iter().map(String::as_str);
        Ok(Adapters {
            scorers: BTreeMap::from([("toxicity".to_string(), Arc::new(scorer) as _)]),
            mask_filler: Arc::new(CountMaskFiller::from_corpus("count-filler", corpus.clone())?),
            causal_lm: Arc::new(NGramLm::from_corpus("bigram", corpus, 2)?),
        })
    }
}

/// A sentence with a continuous "non-toxic" label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedExample {
    pub text: String,
    /// Fraction of ten simulated annotators judging the text acceptable.
    pub label: f64,
    /// `exp(-0.6 * total severity)`, the probability each annotator uses.
    pub true_score: f64,
    /// Byte spans of every word with nonzero severity.
    pub gold_spans: Vec<(usize, usize)>,
}

/// Template sentences whose adjectives and nouns are neutral, mild or
/// severe; labels are binomial annotator fractions.
pub fn graded_examples(n: usize, seed: u64) -> Vec<GradedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x06ad_ed00);
    (0..n)
        .map(|_| {
            let mut f = frame(&mut rng);
            let mut severities = vec![0.0; f.words.len()];
            for &(i, slot) in &f.slots {
                let roll: f64 = rng.gen();
                let (word, sev) = match slot {
                    Slot::Adj if roll < 0.35 => *MILD_ADJECTIVES.choose(&mut rng).unwrap(),
                    Slot::Adj if roll < 0.55 => {
                        let (w, v) = *TOXIC_ADJECTIVES.choose(&mut rng).unwrap();
                        (w, -v)
                    }
                    Slot::Noun if roll < 0.25 => {
                        let (w, v) = *TOXIC_NOUNS.choose(&mut rng).unwrap();
                        (w, -v)
                    }
                    _ => (neutral(slot, &mut rng), 0.0),
                };
                f.words[i] = word.to_string();
                severities[i] = sev;
            }
            let text = f.words.join(" ");
            let mut gold_spans = Vec::new();
            let mut pos = 0;
            for (w, &sev) in f.words.iter().zip(&severities) {
                if sev > 0.0 {
                    gold_spans.push((pos, pos + w.len()));
                }
                pos += w.len() + 1;
            }
            let true_score = (-0.6 * severities.iter().sum::<f64>()).exp();
            let votes = (0..10).filter(|_| rng.gen_bool(true_score)).count();
            GradedExample {
                text,
                label: votes as f64 / 10.0,
                true_score,
                gold_spans,
            }
        })
        .collect()
}

/// A small random editing problem: adapters trained on a random corpus,
/// random term weights, and one masked sentence with its candidates.
pub struct RerankInstance {
    pub adapters: Adapters,
    pub terms: TermSet,
    pub masked: MaskedText,
    pub candidates: CandidateSet,
}

const WORDS: &[&str] = &[
    "the", "a", "cat", "dog", "sat", "ran", "on", "mat", "big", "red", "old", "new", "stupid",
    "moron", "kind", "friend",
];

/// `max_slots` masked positions at most, `max_k` candidates per slot at most.
pub fn rerank_instance(seed: u64, max_slots: usize, max_k: usize) -> Result<RerankInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(3..=7);
        (0..len)
            .map(|_| *WORDS.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let corpus: Vec<String> = (0..40).map(|_| sentence(&mut rng)).collect();
    let mut lexicon = BTreeMap::new();
    for w in WORDS {
        if rng.gen_bool(0.4) {
            lexicon.insert(w.to_string(), rng.gen_range(-3.0..1.0));
        }
    }
    if lexicon.is_empty() {
        lexicon.insert("stupid".to_string(), -2.0);
    }
    let bias = rng.gen_range(-1.0..2.0);
    let scorer = BagScorer::lexicon("s", &lexicon, bias, 8, 3, seed)?;
    let refs = corpus.iter().map(String::as_str);
    let adapters = Adapters {
        scorers: BTreeMap::from([("s".to_string(), Arc::new(scorer) as _)]),
        mask_filler: Arc::new(CountMaskFiller::from_corpus("filler", refs.clone())?),
        causal_lm: Arc::new(NGramLm::from_corpus("lm", refs, 2)?),
    };
    let terms = TermSet::new(vec![
        EnergyTerm::fluency("fluency", rng.gen_range(0.0..1.0)),
        EnergyTerm::scorer("s", rng.gen_range(0.0..1.0), rng.gen_range(0.2..0.9), "s"),
    ])?;
    let text = sentence(&mut rng);
    let view = adapters.mask_filler.tokenize(&text);
    let n_slots = rng.gen_range(1..=max_slots.min(view.len()));
    let mut positions: Vec<usize> = (0..view.len()).collect();
    positions.shuffle(&mut rng);
    positions.truncate(n_slots);
    let masked = build_masked(view, &positions)?;
    let k = rng.gen_range(1..=max_k);
    let candidates = generate_candidates(&masked, k, adapters.mask_filler.as_ref())?;
    Ok(RerankInstance {
        adapters,
        terms,
        masked,
        candidates,
    })
}
