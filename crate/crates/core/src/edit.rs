//! Masking located tokens and proposing replacements.

use serde::{Deserialize, Serialize};

use crate::modeling::{MaskFillerAdapter, TokenizedView};
use crate::{Error, Result};

/// A text in the mask filler's tokenization with some tokens masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedText {
    pub view: TokenizedView,
    /// Strictly increasing token positions.
    pub slot_indices: Vec<usize>,
    /// Surface strings displaced at each slot.
    pub original_tokens: Vec<String>,
}

impl MaskedText {
    pub fn num_slots(&self) -> usize {
        self.slot_indices.len()
    }

    /// Token ids with every slot replaced by `mask_id`, all in one pass.
    pub fn masked_ids(&self, mask_id: u32) -> Vec<u32> {
        let mut ids = self.view.token_ids.clone();
        for &s in &self.slot_indices {
            ids[s] = mask_id;
        }
        ids
    }

    /// The text with slot `j` replaced by `fills[j]`; everything else is
    /// copied byte for byte. `fills` may be shorter than the slot count, in
    /// which case the remaining slots keep their original tokens.
    pub fn render<S: AsRef<str>>(&self, fills: &[S]) -> String {
        let text = &self.view.text;
        let mut out = String::with_capacity(text.len() + 16);
        let mut pos = 0;
        for (j, &slot) in self.slot_indices.iter().enumerate() {
            let (s, e) = self.view.char_spans[slot];
            out.push_str(&text[pos..s]);
            match fills.get(j) {
                Some(f) => out.push_str(f.as_ref()),
                None => out.push_str(&text[s..e]),
            }
            pos = e;
        }
        out.push_str(&text[pos..]);
        out
    }

    /// The text up to and including slot `fills.len() - 1`, filled in.
    pub fn render_prefix<S: AsRef<str>>(&self, fills: &[S]) -> String {
        assert!(!fills.is_empty() && fills.len() <= self.num_slots());
        let text = &self.view.text;
        let mut out = String::new();
        let mut pos = 0;
        for (j, f) in fills.iter().enumerate() {
            let (s, e) = self.view.char_spans[self.slot_indices[j]];
            out.push_str(&text[pos..s]);
            out.push_str(f.as_ref());
            pos = e;
        }
        out
    }

    /// Byte spans of the slots in the original text.
    pub fn slot_spans(&self) -> Vec<(usize, usize)> {
        self.slot_indices
            .iter()
            .map(|&s| self.view.char_spans[s])
            .collect()
    }
}

pub fn build_masked(view: TokenizedView, slots: &[usize]) -> Result<MaskedText> {
    if slots.is_empty() {
        return Err(Error::Contract("no slots to mask".into()));
    }
    let mut slot_indices = slots.to_vec();
    slot_indices.sort_unstable();
    slot_indices.dedup();
    if let Some(&bad) = slot_indices.iter().find(|&&s| s >= view.len()) {
        return Err(Error::Contract(format!(
            "slot {bad} out of range for {} tokens",
            view.len()
        )));
    }
    let original_tokens = slot_indices
        .iter()
        .map(|&s| view.surface(s).to_string())
        .collect();
    Ok(MaskedText {
        view,
        slot_indices,
        original_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token_id: u32,
    pub token: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Per slot, descending by probability, ties by ascending token id.
    pub per_slot: Vec<Vec<Candidate>>,
    /// The filler vocabulary had fewer than `k` tokens.
    pub short_list: bool,
}

impl CandidateSet {
    /// Number of full hypotheses, saturating at `u128::MAX`.
    pub fn product(&self) -> u128 {
        self.per_slot
            .iter()
            .fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_slot.iter().map(Vec::len).collect()
    }
}

/// Indices of the `k` largest entries, ties by ascending index.
pub fn top_k(dist: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn generate_candidates(
    masked: &MaskedText,
    k: usize,
    filler: &dyn MaskFillerAdapter,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::Contract("candidates per slot must be >= 1".into()));
    }
    let dists = filler.fill(&masked.masked_ids(filler.mask_id()))?;
    if dists.len() != masked.num_slots() {
        return Err(Error::adapter(
            filler.id(),
            format!("{} distributions for {} slots", dists.len(), masked.num_slots()),
        ));
    }
    let vocab = filler.vocab_size();
    let mut per_slot = Vec::with_capacity(dists.len());
    for dist in &dists {
        if dist.len() != vocab {
            return Err(Error::adapter(
                filler.id(),
                format!("distribution of length {} for vocabulary {vocab}", dist.len()),
            ));
        }
        if let Some(p) = dist.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::adapter(filler.id(), format!("invalid probability {p}")));
        }
        per_slot.push(
            top_k(dist, k)
                .into_iter()
                .map(|i| Candidate {
                    token_id: i as u32,
                    token: filler.token_str(i as u32).to_string(),
                    prob: dist[i],
                })
                .collect(),
        );
    }
    Ok(CandidateSet {
        per_slot,
        short_list: vocab < k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modeling::CountMaskFiller;

    fn filler() -> CountMaskFiller {
        CountMaskFiller::from_corpus("f", ["a good day", "a nice day", "a nice day", "the bad cat"])
            .unwrap()
    }

    #[test]
    fn mask_one_slot() {
        let f = filler();
        let m = build_masked(f.tokenize("a bad day"), &[1]).unwrap();
        assert_eq!(m.original_tokens, vec!["bad"]);
        let ids = m.masked_ids(f.mask_id());
        assert_eq!(ids[1], f.mask_id());
        assert_eq!(ids[0], m.view.token_ids[0]);
        assert_eq!(m.render(&["good"]), "a good day");
        assert_eq!(m.render_prefix(&["good"]), "a good");
        assert!(build_masked(f.tokenize("a bad day"), &[]).is_err());
        assert!(build_masked(f.tokenize("a bad day"), &[3]).is_err());
    }

    #[test]
    fn unmask_with_originals_is_identity() {
        let f = filler();
        let text = "  a  bad\tday ";
        let m = build_masked(f.tokenize(text), &[0, 1, 2]).unwrap();
        assert_eq!(m.render(&m.original_tokens), text);
        assert_eq!(m.render::<&str>(&[]), text);
        assert!(m.masked_ids(f.mask_id()).iter().all(|&i| i == f.mask_id()));
    }

    #[test]
    fn candidates_ranked_with_id_ties() {
        let f = filler();
        let m = build_masked(f.tokenize("a bad day"), &[1]).unwrap();
        let c = generate_candidates(&m, 2, &f).unwrap();
        let toks: Vec<&str> = c.per_slot[0].iter().map(|c| c.token.as_str()).collect();
        assert_eq!(toks, vec!["nice", "good"]);
        assert!((c.per_slot[0][0].prob - 2.0 / 3.0).abs() < 1e-12);
        assert!(!c.short_list);
        let all = generate_candidates(&m, 100, &f).unwrap();
        assert!(all.short_list);
        assert_eq!(all.per_slot[0].len(), f.vocab_size());
        // zero-probability tail sorted by id
        let tail: Vec<u32> = all.per_slot[0][2..].iter().map(|c| c.token_id).collect();
        let mut sorted = tail.clone();
        sorted.sort_unstable();
        assert_eq!(tail, sorted);
    }

    #[test]
    fn simultaneous_masking_differs_from_sequential() {
        let f = CountMaskFiller::from_corpus("f", ["x a b y", "x c b q", "x a d y"]).unwrap();
        // both masked: slot 1 sees (x, y)
        let both = build_masked(f.tokenize("x a b y"), &[1, 2]).unwrap();
        let sim = f.fill(&both.masked_ids(f.mask_id())).unwrap();
        // one at a time: slot 1 sees (x, b)
        let one = build_masked(f.tokenize("x a b y"), &[1]).unwrap();
        let seq = f.fill(&one.masked_ids(f.mask_id())).unwrap();
        assert_ne!(sim[0], seq[0]);
    }

    #[test]
    fn top_k_orders_by_prob_then_id() {
        assert_eq!(top_k(&[0.1, 0.4, 0.4, 0.1], 3), vec![1, 2, 0]);
        assert_eq!(top_k(&[0.5], 3), vec![0]);
    }
}
