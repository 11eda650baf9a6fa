use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tokenize::{PieceTokenizer, Vocab, WhitespaceTokenizer};
use super::{AttentionMaps, Capabilities, ScorerAdapter, TokenizedView};
use crate::math::{dot, sigmoid, softmax_in_place, stable_hash};
use crate::{Error, Result};

/// First line of a serialized [`BagScorer`].
pub const SCORER_FILE_MAGIC: &str = "locedit-bag-scorer v1";

const ATTENTION_LAYERS: usize = 2;
const ATTENTION_HEADS: usize = 2;

/// Per-token readout nonlinearity `phi(z) = z + z|z|/2`.
fn readout(z: f64) -> f64 {
    z + 0.5 * z * z.abs()
}

fn readout_slope(z: f64) -> f64 {
    1.0 + z.abs()
}

/// Inverse of [`readout`].
fn readout_inverse(v: f64) -> f64 {
    v.signum() * ((1.0 + 2.0 * v.abs()).sqrt() - 1.0)
}

/// How pieces missing from the vocabulary are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownEmbedding {
    /// The zero vector: unknown pieces contribute nothing.
    Zero,
    /// A seeded pseudo-random vector orthogonal to the unit readout.
    Hashed,
}

/// Bag-of-embeddings regressor over word pieces:
/// `g(y) = bias + sum_t phi(readout . e_t)`.
///
/// The readout nonlinearity makes the embedding gradient depend on each
/// token's own contribution, so gradient norms rank tokens by how much they
/// move the logit. A fixed two-layer attention stack derived from the seed
/// provides attention maps.
#[derive(Debug, Clone)]
pub struct BagScorer {
    id: String,
    tokenizer: PieceTokenizer,
    vocab: Vocab,
    pub(crate) embeddings: Vec<Vec<f64>>,
    pub(crate) readout: Vec<f64>,
    pub(crate) bias: f64,
    dim: usize,
    unknown: UnknownEmbedding,
    seed: u64,
    attention: Option<AttentionStack>,
}

#[derive(Debug, Clone)]
struct AttentionStack {
    /// `[layer][head]` -> d x d projection.
    query: Vec<Vec<Vec<Vec<f64>>>>,
    key: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[layer][head]` gain on the key token's |readout . e|.
    gain: Vec<Vec<f64>>,
}

impl AttentionStack {
    fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e_4710_u64);
        let scale = 1.0 / (dim as f64).sqrt();
        let matrix = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..dim)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect())
                .collect()
        };
        let mut query = Vec::new();
        let mut key = Vec::new();
        let mut gain = Vec::new();
        for layer in 0..ATTENTION_LAYERS {
            let mut q = Vec::new();
            let mut k = Vec::new();
            let mut g = Vec::new();
            for _ in 0..ATTENTION_HEADS {
                q.push(matrix(&mut rng));
                k.push(matrix(&mut rng));
                // The penultimate layer attends toward high-contribution tokens.
                g.push(if layer + 2 == ATTENTION_LAYERS {
                    rng.gen_range(1.0..3.0)
                } else {
                    0.0
                });
            }
            query.push(q);
            key.push(k);
            gain.push(g);
        }
        Self { query, key, gain }
    }
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn hashed_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(token));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    v[0] = 0.0;
    v
}

impl BagScorer {
    /// Builds a scorer whose logit is `bias + sum of lexicon weights` of the
    /// words present: the word-initial piece of each lexicon word carries the
    /// full weight; every other piece contributes zero.
    pub fn lexicon(
        id: &str,
        lexicon: &BTreeMap<String, f64>,
        bias: f64,
        dim: usize,
        piece_width: usize,
        seed: u64,
    ) -> Result<Self> {
        if lexicon.is_empty() {
            return Err(Error::Input("lexicon is empty".into()));
        }
        if dim < 2 {
            return Err(Error::Input("lexicon scorer needs dim >= 2".into()));
        }
        let tokenizer = PieceTokenizer::new(piece_width);
        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for (word, &w) in lexicon {
            if !w.is_finite() {
                return Err(Error::Input(format!("lexicon weight for `{word}` is not finite")));
            }
            let Some((first, _)) = tokenizer.segment(word).into_iter().next() else {
                return Err(Error::Input("lexicon contains an empty word".into()));
            };
            *weights.entry(first).or_insert(0.0) += w;
        }
        let vocab = Vocab::from_tokens(weights.keys().cloned());
        let embeddings = vocab
            .tokens()
            .iter()
            .map(|piece| {
                let mut e = hashed_vector(piece, dim, seed);
                e[0] = readout_inverse(weights[piece]);
                e
            })
            .collect();
        let mut unit = vec![0.0; dim];
        unit[0] = 1.0;
        Ok(Self {
            id: id.to_string(),
            tokenizer,
            vocab,
            embeddings,
            readout: unit,
            bias,
            dim,
            unknown: UnknownEmbedding::Hashed,
            seed,
            attention: Some(AttentionStack::seeded(dim, seed)),
        })
    }

    /// A randomly initialized scorer whose vocabulary covers every piece of `texts`.
    pub fn trainable<'a, I>(id: &str, texts: I, dim: usize, piece_width: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        assert!(dim >= 1, "dim must be positive");
        let tokenizer = PieceTokenizer::new(piece_width);
        let vocab = Vocab::from_tokens(
            texts
                .into_iter()
                .flat_map(|t| tokenizer.segment(t).into_iter().map(|(p, _)| p)),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..vocab.len())
            .map(|_| (0..dim).map(|_| rng.gen_range(-0.1..0.1)).collect())
            .collect();
        let readout = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self {
            id: id.to_string(),
            tokenizer,
            vocab,
            embeddings,
            readout,
            bias: 0.0,
            dim,
            unknown: UnknownEmbedding::Zero,
            seed,
            attention: Some(AttentionStack::seeded(dim, seed)),
        }
    }

    /// Drops the attention capability (gradient-only scorer).
    pub fn without_attention(mut self) -> Self {
        self.attention = None;
        self
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn unk_id(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn embedding_of(&self, view: &TokenizedView, i: usize) -> Vec<f64> {
        let id = view.token_ids[i];
        if id < self.unk_id() {
            return self.embeddings[id as usize].clone();
        }
        match self.unknown {
            UnknownEmbedding::Zero => vec![0.0; self.dim],
            UnknownEmbedding::Hashed => hashed_vector(&view.tokens[i], self.dim, self.seed),
        }
    }

    /// Input embeddings of `text`, one row per token.
    pub fn embed(&self, text: &str) -> (TokenizedView, Vec<Vec<f64>>) {
        let view = ScorerAdapter::tokenize(self, text);
        let rows = (0..view.len()).map(|i| self.embedding_of(&view, i)).collect();
        (view, rows)
    }

    /// The forward pass from (possibly perturbed) input embeddings.
    pub fn logit_from_embeddings(&self, embeddings: &[Vec<f64>]) -> f64 {
        self.bias
            + embeddings
                .iter()
                .map(|e| readout(dot(&self.readout, e)))
                .sum::<f64>()
    }

    pub fn logit(&self, text: &str) -> f64 {
        let (_, rows) = self.embed(text);
        self.logit_from_embeddings(&rows)
    }

    /// `d g / d e_t` for every row.
    pub(crate) fn logit_gradients(&self, embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
        embeddings
            .iter()
            .map(|e| {
                let slope = readout_slope(dot(&self.readout, e));
                self.readout.iter().map(|w| slope * w).collect()
            })
            .collect()
    }

    /// Per-token logit contribution `phi(readout . e_t)`.
    pub fn contributions(&self, text: &str) -> (TokenizedView, Vec<f64>) {
        let (view, rows) = self.embed(text);
        let c = rows.iter().map(|e| readout(dot(&self.readout, e))).collect();
        (view, c)
    }

    pub(crate) fn token_rows(&self, text: &str) -> Vec<Option<usize>> {
        let view = ScorerAdapter::tokenize(self, text);
        view.token_ids
            .iter()
            .map(|&id| (id < self.unk_id()).then_some(id as usize))
            .collect()
    }

    fn attention_from_embeddings(&self, stack: &AttentionStack, rows: &[Vec<f64>]) -> AttentionMaps {
        let n = rows.len();
        let scale = 1.0 / (self.dim as f64).sqrt();
        let salience: Vec<f64> = rows.iter().map(|e| dot(&self.readout, e).abs()).collect();
        let mut hidden = rows.to_vec();
        let mut weights = Vec::with_capacity(ATTENTION_LAYERS);
        for layer in 0..ATTENTION_LAYERS {
            let mut layer_maps = Vec::with_capacity(ATTENTION_HEADS);
            let mut update = vec![vec![0.0; self.dim]; n];
            for head in 0..ATTENTION_HEADS {
                let q: Vec<Vec<f64>> = hidden
                    .iter()
                    .map(|h| mat_vec(&stack.query[layer][head], h))
                    .collect();
                let k: Vec<Vec<f64>> = hidden
                    .iter()
                    .map(|h| mat_vec(&stack.key[layer][head], h))
                    .collect();
                let gain = stack.gain[layer][head];
                let mut map = Vec::with_capacity(n);
                for qi in &q {
                    let mut row: Vec<f64> = k
                        .iter()
                        .zip(&salience)
                        .map(|(kj, s)| dot(qi, kj) * scale + gain * s)
                        .collect();
                    softmax_in_place(&mut row);
                    map.push(row);
                }
                for (t, row) in map.iter().enumerate() {
                    for (a, h) in row.iter().zip(&hidden) {
                        for (u, x) in update[t].iter_mut().zip(h) {
                            *u += a * x / ATTENTION_HEADS as f64;
                        }
                    }
                }
                layer_maps.push(map);
            }
            for (h, u) in hidden.iter_mut().zip(&update) {
                for (x, du) in h.iter_mut().zip(u) {
                    *x += du;
                }
            }
            weights.push(layer_maps);
        }
        AttentionMaps { weights }
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let fmt_row = |row: &[f64]| {
            let mut s = String::new();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{v}").unwrap();
            }
            s
        };
        writeln!(out, "{SCORER_FILE_MAGIC}")?;
        writeln!(out, "id {}", self.id)?;
        writeln!(out, "dim {}", self.dim)?;
        writeln!(out, "piece_width {}", self.tokenizer.width)?;
        writeln!(out, "bias {}", self.bias)?;
        writeln!(out, "seed {}", self.seed)?;
        let unknown = match self.unknown {
            UnknownEmbedding::Zero => "zero",
            UnknownEmbedding::Hashed => "hashed",
        };
        writeln!(out, "unknown {unknown}")?;
        writeln!(out, "attention {}", self.attention.is_some())?;
        writeln!(out, "vocab {}", self.vocab.len())?;
        writeln!(out, "readout {}", fmt_row(&self.readout))?;
        for (tok, row) in self.vocab.tokens().iter().zip(&self.embeddings) {
            writeln!(out, "{tok} {}", fmt_row(row))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Format(format!("unexpected end of file, expected {what}")))
        };
        let magic = next("header")?;
        if magic.trim() != SCORER_FILE_MAGIC {
            return Err(Error::Format(format!("bad header `{magic}`")));
        }
        fn field(line: &str, key: &str) -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Format(format!("expected `{key}`, found `{line}`")))
        }
        fn num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad value `{s}` for `{key}`")))
        }
        fn row(s: &str, dim: usize) -> Result<Vec<f64>> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|x| num(x, "weight"))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::Format(format!("row has {} values, expected {dim}", v.len())));
            }
            Ok(v)
        }
        let id = field(&next("id")?, "id")?;
        let dim: usize = num(&field(&next("dim")?, "dim")?, "dim")?;
        let width: usize = num(&field(&next("piece_width")?, "piece_width")?, "piece_width")?;
        let bias: f64 = num(&field(&next("bias")?, "bias")?, "bias")?;
        let seed: u64 = num(&field(&next("seed")?, "seed")?, "seed")?;
        let unknown = match field(&next("unknown")?, "unknown")?.as_str() {
            "zero" => UnknownEmbedding::Zero,
            "hashed" => UnknownEmbedding::Hashed,
            other => return Err(Error::Format(format!("unknown embedding mode `{other}`"))),
        };
        let attention: bool = num(&field(&next("attention")?, "attention")?, "attention")?;
        let n: usize = num(&field(&next("vocab")?, "vocab")?, "vocab")?;
        if dim == 0 || width == 0 {
            return Err(Error::Format("dim and piece_width must be positive".into()));
        }
        let readout = row(&field(&next("readout")?, "readout")?, dim)?;
        let mut tokens = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        for _ in 0..n {
            let line = next("embedding row")?;
            let (tok, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("bad embedding row `{line}`")))?;
            tokens.push(tok.to_string());
            embeddings.push(row(rest, dim)?);
        }
        let vocab = Vocab::from_ordered(tokens);
        if vocab.len() != n {
            return Err(Error::Format("duplicate tokens in vocabulary".into()));
        }
        Ok(Self {
            id,
            tokenizer: PieceTokenizer::new(width),
            vocab,
            embeddings,
            readout,
            bias,
            dim,
            unknown,
            seed,
            attention: attention.then(|| AttentionStack::seeded(dim, seed)),
        })
    }
}

impl ScorerAdapter for BagScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            attention: self.attention.is_some(),
            concurrent_safe: true,
        }
    }

    fn tokenize(&self, text: &str) -> TokenizedView {
        self.vocab
            .view(text, self.tokenizer.segment(text), &self.id, self.unk_id())
    }

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>> {
        Ok(texts.iter().map(|t| self.logit(t)).collect())
    }

    fn embedding_gradients(&self, text: &str) -> Result<(TokenizedView, Vec<Vec<f64>>)> {
        let (view, rows) = self.embed(text);
        // d(-log sigmoid g)/dg = sigmoid(g) - 1
        let outer = sigmoid(self.logit_from_embeddings(&rows)) - 1.0;
        let grads = self
            .logit_gradients(&rows)
            .into_iter()
            .map(|g| g.into_iter().map(|x| outer * x).collect())
            .collect();
        Ok((view, grads))
    }

    fn attention_maps(&self, text: &str) -> Result<(TokenizedView, AttentionMaps)> {
        let stack = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::capability(&self.id, "attention maps"))?;
        let (view, rows) = self.embed(text);
        Ok((view, self.attention_from_embeddings(stack, &rows)))
    }
}

/// A scorer whose logit ignores its input.
#[derive(Debug, Clone)]
pub struct ConstantScorer {
    id: String,
    logit: f64,
}

impl ConstantScorer {
    pub fn new(id: &str, logit: f64) -> Self {
        Self {
            id: id.to_string(),
            logit,
        }
    }
}

impl ScorerAdapter for ConstantScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            attention: false,
            concurrent_safe: true,
        }
    }

    fn tokenize(&self, text: &str) -> TokenizedView {
        Vocab::default().view(text, WhitespaceTokenizer.segment(text), &self.id, 0)
    }

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>> {
        Ok(vec![self.logit; texts.len()])
    }

    fn embedding_gradients(&self, text: &str) -> Result<(TokenizedView, Vec<Vec<f64>>)> {
        let view = self.tokenize(text);
        let grads = vec![vec![0.0]; view.len()];
        Ok((view, grads))
    }
}
