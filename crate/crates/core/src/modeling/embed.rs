use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tokenize::WhitespaceTokenizer;
use super::ScorerAdapter;
use crate::math::{sigmoid, stable_hash};
use crate::Result;

/// Token embeddings for content-preservation scoring.
pub trait EmbeddingAdapter: Send + Sync {
    fn embed_tokens(&self, text: &str) -> Vec<Vec<f64>>;
}

/// Static word vectors: explicit rows where given, seeded random rows otherwise.
#[derive(Debug, Clone)]
pub struct StaticWordVectors {
    dim: usize,
    seed: u64,
    table: HashMap<String, Vec<f64>>,
}

impl StaticWordVectors {
    /// Every word gets a seeded Gaussian-like vector.
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            table: HashMap::new(),
        }
    }

    /// Explicit vectors; words outside the table fall back to hashed rows.
    pub fn from_table(table: HashMap<String, Vec<f64>>, seed: u64) -> Self {
        let dim = table.values().next().map_or(1, Vec::len);
        Self { dim, seed, table }
    }

    /// Mutually orthogonal one-hot rows for the given words.
    pub fn one_hot<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let words: Vec<&str> = words.into_iter().collect();
        let dim = words.len();
        let table = words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut v = vec![0.0; dim];
                v[i] = 1.0;
                (w.to_string(), v)
            })
            .collect();
        Self {
            dim,
            seed: 0,
            table,
        }
    }

    fn vector(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.table.get(word) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(word));
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl EmbeddingAdapter for StaticWordVectors {
    fn embed_tokens(&self, text: &str) -> Vec<Vec<f64>> {
        WhitespaceTokenizer
            .segment(text)
            .iter()
            .map(|(w, _)| self.vector(w))
            .collect()
    }
}

/// An external judge returning a score in `[0, 1]` per text.
pub trait TextClassifier: Send + Sync {
    fn classify(&self, text: &str) -> Result<f64>;
}

/// Turns a scorer into a classifier: `sigmoid(g)`, or `1 - sigmoid(g)` when
/// inverted (e.g. a non-toxicity scorer reporting toxicity).
#[derive(Clone)]
pub struct ScorerClassifier {
    scorer: Arc<dyn ScorerAdapter>,
    invert: bool,
}

impl ScorerClassifier {
    pub fn new(scorer: Arc<dyn ScorerAdapter>, invert: bool) -> Self {
        Self { scorer, invert }
    }
}

impl TextClassifier for ScorerClassifier {
    fn classify(&self, text: &str) -> Result<f64> {
        let g = self.scorer.score_batch(&[text])?[0];
        let p = sigmoid(g);
        Ok(if self.invert { 1.0 - p } else { p })
    }
}
