use std::collections::HashMap;

use super::tokenize::{Vocab, WhitespaceTokenizer};
use super::{Capabilities, MaskFillerAdapter, TokenizedView};
use crate::{Error, Result};

const BOS: u32 = u32::MAX;
const EOS: u32 = u32::MAX - 1;

/// Count-based word filler.
///
/// A masked slot's distribution is the empirical distribution of words seen
/// between its nearest unmasked left and right neighbours in the corpus
/// (sentence boundaries count as neighbours), backing off to unigram
/// frequencies for unseen contexts. Slots never condition on each other, so
/// masking every located token at once hides all of them from every slot.
#[derive(Debug, Clone)]
pub struct CountMaskFiller {
    id: String,
    vocab: Vocab,
    contexts: HashMap<(u32, u32), HashMap<u32, u32>>,
    unigram: Vec<f64>,
}

impl CountMaskFiller {
    pub const MASK_SYMBOL: &'static str = "<mask>";

    pub fn from_corpus<'a, I>(id: &str, sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let sentences: Vec<Vec<String>> = sentences
            .into_iter()
            .map(|s| WhitespaceTokenizer.segment(s).into_iter().map(|(t, _)| t).collect())
            .filter(|s: &Vec<String>| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::Input("mask-filler corpus is empty".into()));
        }
        let vocab = Vocab::from_tokens(sentences.iter().flatten().cloned());
        let mut contexts: HashMap<(u32, u32), HashMap<u32, u32>> = HashMap::new();
        let mut unigram = vec![0.0; vocab.len()];
        for sent in &sentences {
            let ids: Vec<u32> = sent.iter().map(|t| vocab.get(t).unwrap()).collect();
            for (j, &w) in ids.iter().enumerate() {
                let left = if j == 0 { BOS } else { ids[j - 1] };
                let right = ids.get(j + 1).copied().unwrap_or(EOS);
                *contexts.entry((left, right)).or_default().entry(w).or_insert(0) += 1;
                unigram[w as usize] += 1.0;
            }
        }
        let total: f64 = unigram.iter().sum();
        unigram.iter_mut().for_each(|c| *c /= total);
        Ok(Self {
            id: id.to_string(),
            vocab,
            contexts,
            unigram,
        })
    }

    fn unk_id(&self) -> u32 {
        self.vocab.len() as u32 + 1
    }

    fn distribution(&self, left: u32, right: u32) -> Vec<f64> {
        match self.contexts.get(&(left, right)) {
            Some(counts) => {
                let total: u32 = counts.values().sum();
                let mut dist = vec![0.0; self.vocab.len()];
                for (&w, &c) in counts {
                    dist[w as usize] = c as f64 / total as f64;
                }
                dist
            }
            None => self.unigram.clone(),
        }
    }
}

impl MaskFillerAdapter for CountMaskFiller {
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
        let mut view = self
            .vocab
            .view(text, WhitespaceTokenizer.segment(text), &self.id, self.unk_id());
        // The mask symbol maps to the mask id even though it is not fillable.
        for (tok, id) in view.tokens.iter().zip(view.token_ids.iter_mut()) {
            if tok == Self::MASK_SYMBOL {
                *id = self.mask_id();
            }
        }
        view
    }

    fn mask_id(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn mask_symbol(&self) -> &str {
        Self::MASK_SYMBOL
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn token_str(&self, id: u32) -> &str {
        self.vocab.token(id)
    }

    fn fill(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let mask = self.mask_id();
        let mut out = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            if id != mask {
                continue;
            }
            let left = ids[..i].iter().rev().find(|&&x| x != mask).copied().unwrap_or(BOS);
            let right = ids[i + 1..].iter().find(|&&x| x != mask).copied().unwrap_or(EOS);
            out.push(self.distribution(left, right));
        }
        Ok(out)
    }
}
