//! Adapter interfaces for the three model roles and their toy implementations.
//!
//! Every model the edit loop touches sits behind one of three traits:
//! [`ScorerAdapter`] (constraint logits `g`, embedding gradients, attention),
//! [`MaskFillerAdapter`] (per-slot fill distributions) and
//! [`CausalLmAdapter`] (per-token log-probabilities for fluency). Each adapter
//! owns its tokenizer; nothing assumes a shared vocabulary, so texts are
//! exchanged as strings and bridged with character offsets
//! ([`TokenizedView`]).

mod embed;
mod filler;
mod lm;
mod scorer;
mod tokenize;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use embed::{EmbeddingAdapter, ScorerClassifier, StaticWordVectors, TextClassifier};
pub use filler::CountMaskFiller;
pub use lm::{NGramLm, UniformLm};
pub use scorer::{BagScorer, ConstantScorer, UnknownEmbedding, SCORER_FILE_MAGIC};
pub use tokenize::{PieceTokenizer, Vocab, WhitespaceTokenizer};
pub(crate) use tokenize::word_spans;

use crate::Result;

/// One text rendered in one model's tokenization.
///
/// `char_spans` are byte offsets into `text` (always on UTF-8 boundaries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedView {
    pub text: String,
    /// Canonical token strings as the model sees them (e.g. `##on`).
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub char_spans: Vec<(usize, usize)>,
    pub model_id: String,
}

impl TokenizedView {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Surface substring covered by token `i`.
    pub fn surface(&self, i: usize) -> &str {
        let (s, e) = self.char_spans[i];
        &self.text[s..e]
    }

    /// Checks the structural invariants: ordered, non-overlapping, in-bounds spans.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.token_ids.len() || self.char_spans.len() != self.token_ids.len()
        {
            return Err(crate::Error::Contract(format!(
                "view from `{}` has mismatched field lengths",
                self.model_id
            )));
        }
        let mut prev_end = 0;
        for &(s, e) in &self.char_spans {
            if s < prev_end || e < s || e > self.text.len() {
                return Err(crate::Error::Contract(format!(
                    "view from `{}` has invalid span ({s}, {e})",
                    self.model_id
                )));
            }
            prev_end = e;
        }
        Ok(())
    }
}

/// Optional capabilities an adapter may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub gradients: bool,
    pub attention: bool,
    /// Safe to call from several threads at once on a shared instance.
    pub concurrent_safe: bool,
}

/// Attention weights indexed `[layer][head][query][key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub weights: Vec<Vec<Vec<Vec<f64>>>>,
}

impl AttentionMaps {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }
}

/// A constraint model producing a logit `g` for "the constraint holds".
pub trait ScorerAdapter: Send + Sync {
    fn id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn tokenize(&self, text: &str) -> TokenizedView;

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>>;

    /// Per-token gradients of `f = -log sigmoid(g)` with respect to the input
    /// embeddings, aligned with the returned view.
    fn embedding_gradients(&self, _text: &str) -> Result<(TokenizedView, Vec<Vec<f64>>)> {
        Err(crate::Error::capability(self.id(), "embedding gradients"))
    }

    fn attention_maps(&self, _text: &str) -> Result<(TokenizedView, AttentionMaps)> {
        Err(crate::Error::capability(self.id(), "attention maps"))
    }
}

/// A masked language model.
pub trait MaskFillerAdapter: Send + Sync {
    fn id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn tokenize(&self, text: &str) -> TokenizedView;

    /// Id used in place of masked tokens in the sequence given to [`fill`](Self::fill).
    fn mask_id(&self) -> u32;

    fn mask_symbol(&self) -> &str;

    /// Number of fillable tokens; distributions returned by `fill` have this length.
    fn vocab_size(&self) -> usize;

    /// Surface string inserted into the text for fill token `id`.
    fn token_str(&self, id: u32) -> &str;

    /// One probability distribution over the fill vocabulary per mask
    /// position, in left-to-right order.
    fn fill(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>>;
}

/// An autoregressive language model used for the fluency energy and perplexity.
pub trait CausalLmAdapter: Send + Sync {
    fn id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn tokenize(&self, text: &str) -> TokenizedView;

    /// `log P(token_t | token_<t)` for every token of `text`.
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>>;
}

/// The set of bound adapters a run needs.
#[derive(Clone)]
pub struct Adapters {
    /// Scorer adapters keyed by the id used in term definitions.
    pub scorers: BTreeMap<String, Arc<dyn ScorerAdapter>>,
    pub mask_filler: Arc<dyn MaskFillerAdapter>,
    pub causal_lm: Arc<dyn CausalLmAdapter>,
}

impl Adapters {
    pub fn concurrent_safe(&self) -> bool {
        self.scorers
            .values()
            .all(|s| s.capabilities().concurrent_safe)
            && self.mask_filler.capabilities().concurrent_safe
            && self.causal_lm.capabilities().concurrent_safe
    }
}
