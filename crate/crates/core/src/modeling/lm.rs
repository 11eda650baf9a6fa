use std::collections::HashMap;

use super::tokenize::{Vocab, WhitespaceTokenizer};
use super::{Capabilities, CausalLmAdapter, TokenizedView};
use crate::{Error, Result};

const BOS: u32 = u32::MAX;
const UNK: &str = "<unk>";

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Add-one smoothed word n-gram model.
///
/// `P(w | h) = (c(h, w) + 1) / (c(h) + |V|)` where `h` is the previous
/// `order - 1` words (sentence start padded) and `V` is the corpus
/// vocabulary plus `<unk>`.
#[derive(Debug, Clone)]
pub struct NGramLm {
    id: String,
    order: usize,
    vocab: Vocab,
    counts: HashMap<Box<[u32]>, ContextCounts>,
}

impl NGramLm {
    pub fn from_corpus<'a, I>(id: &str, sentences: I, order: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if order == 0 {
            return Err(Error::Input("n-gram order must be at least 1".into()));
        }
        let sentences: Vec<Vec<String>> = sentences
            .into_iter()
            .map(|s| WhitespaceTokenizer.segment(s).into_iter().map(|(t, _)| t).collect())
            .filter(|s: &Vec<String>| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::Input("language-model corpus is empty".into()));
        }
        let mut words: Vec<String> = sentences.iter().flatten().cloned().collect();
        words.push(UNK.to_string());
        let vocab = Vocab::from_tokens(words);
        let mut lm = Self {
            id: id.to_string(),
            order,
            vocab,
            counts: HashMap::new(),
        };
        for sent in &sentences {
            let ids = lm.ids(sent.iter().map(String::as_str));
            let hist = lm.padded(&ids);
            for (t, &w) in ids.iter().enumerate() {
                let ctx: Box<[u32]> = hist[t..t + order - 1].into();
                let entry = lm.counts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(w).or_insert(0) += 1;
            }
        }
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary size including `<unk>`.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn ids<'a>(&self, words: impl Iterator<Item = &'a str>) -> Vec<u32> {
        let unk = self.vocab.get(UNK).unwrap();
        words.map(|w| self.vocab.get(w).unwrap_or(unk)).collect()
    }

    fn padded(&self, ids: &[u32]) -> Vec<u32> {
        let mut hist = vec![BOS; self.order - 1];
        hist.extend_from_slice(ids);
        hist
    }

    /// Smoothed conditional probability of `word` after `context` (most recent last).
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let ids = self.ids(context.iter().copied());
        let mut ctx = vec![BOS; self.order - 1];
        ctx.extend(ids);
        let ctx = &ctx[ctx.len() - (self.order - 1)..];
        let w = self.ids(std::iter::once(word))[0];
        self.prob_ids(ctx, w)
    }

    fn prob_ids(&self, ctx: &[u32], w: u32) -> f64 {
        let v = self.vocab.len() as f64;
        match self.counts.get(ctx) {
            Some(c) => (c.next.get(&w).copied().unwrap_or(0) as f64 + 1.0) / (c.total as f64 + v),
            None => 1.0 / v,
        }
    }
}

impl CausalLmAdapter for NGramLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: false,
            attention: false,
            concurrent_safe: true,
        }
    }

    fn tokenize(&self, text: &str) -> TokenizedView {
        let unk = self.vocab.get(UNK).unwrap();
        self.vocab
            .view(text, WhitespaceTokenizer.segment(text), &self.id, unk)
    }

    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        let view = self.tokenize(text);
        let hist = self.padded(&view.token_ids);
        Ok(view
            .token_ids
            .iter()
            .enumerate()
            .map(|(t, &w)| self.prob_ids(&hist[t..t + self.order - 1], w).ln())
            .collect())
    }
}

/// Assigns probability `1 / size` to every token.
#[derive(Debug, Clone)]
pub struct UniformLm {
    id: String,
    size: usize,
}

impl UniformLm {
    pub fn new(id: &str, size: usize) -> Self {
        assert!(size > 0, "uniform LM needs a nonempty vocabulary");
        Self {
            id: id.to_string(),
            size,
        }
    }
}

impl CausalLmAdapter for UniformLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: false,
            attention: false,
            concurrent_safe: true,
        }
    }

    fn tokenize(&self, text: &str) -> TokenizedView {
        Vocab::default().view(text, WhitespaceTokenizer.segment(text), &self.id, 0)
    }

    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        let n = WhitespaceTokenizer.segment(text).len();
        Ok(vec![-(self.size as f64).ln(); n])
    }
}
