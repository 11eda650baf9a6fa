use std::collections::{BTreeSet, HashMap};

use super::TokenizedView;

/// Maximal non-whitespace runs of `text` as byte spans.
pub(crate) fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Splits text on whitespace; one token per word.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl WhitespaceTokenizer {
    pub fn segment(&self, text: &str) -> Vec<(String, (usize, usize))> {
        word_spans(text)
            .into_iter()
            .map(|(s, e)| (text[s..e].to_string(), (s, e)))
            .collect()
    }
}

/// Splits every word into fixed-width character pieces. Continuation pieces
/// carry a `##` prefix, so `moron` becomes `mor`, `##on` at width 3.
#[derive(Debug, Clone, Copy)]
pub struct PieceTokenizer {
    pub width: usize,
}

impl PieceTokenizer {
    pub const CONTINUATION: &'static str = "##";

    pub fn new(width: usize) -> Self {
        assert!(width > 0, "piece width must be positive");
        Self { width }
    }

    pub fn segment(&self, text: &str) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for (ws, we) in word_spans(text) {
            let word = &text[ws..we];
            let bounds: Vec<usize> = word
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(word.len()))
                .collect();
            let nchars = bounds.len() - 1;
            let mut c = 0;
            while c < nchars {
                let end = (c + self.width).min(nchars);
                let (s, e) = (bounds[c], bounds[end]);
                let piece = &word[s..e];
                let token = if c == 0 {
                    piece.to_string()
                } else {
                    format!("{}{piece}", Self::CONTINUATION)
                };
                out.push((token, (ws + s, ws + e)));
                c = end;
            }
        }
        out
    }
}

/// Bidirectional token/id table with ids assigned in sorted token order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        Self::from_ordered(set)
    }

    /// Keeps the given order; duplicates after the first occurrence are dropped.
    pub fn from_ordered<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::default();
        for t in tokens {
            let t = t.into();
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len() as u32);
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Builds a view from segmented text, mapping unknown tokens to `unk`.
    pub(crate) fn view(
        &self,
        text: &str,
        segments: Vec<(String, (usize, usize))>,
        model_id: &str,
        unk: u32,
    ) -> TokenizedView {
        let mut tokens = Vec::with_capacity(segments.len());
        let mut token_ids = Vec::with_capacity(segments.len());
        let mut char_spans = Vec::with_capacity(segments.len());
        for (tok, span) in segments {
            token_ids.push(self.get(&tok).unwrap_or(unk));
            tokens.push(tok);
            char_spans.push(span);
        }
        TokenizedView {
            text: text.to_string(),
            tokens,
            token_ids,
            char_spans,
            model_id: model_id.to_string(),
        }
    }
}
