//! Locating the tokens that drive a constraint's energy.
//!
//! Saliency comes either from the L2 norm of `d f / d e_t` (gradient norm) or
//! from the penultimate layer's attention of the first token (max over
//! heads). Tokens strictly above the within-sequence mean are kept, capped at
//! `min(floor(2L/3), m)` highest values, then widened to whole
//! whitespace-delimited words.

use serde::{Deserialize, Serialize};

use crate::math::l2_norm;
use crate::modeling::{ScorerAdapter, TokenizedView};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    GradientNorm,
    Attention,
}

impl SaliencyMethod {
    pub fn name(self) -> &'static str {
        match self {
            SaliencyMethod::GradientNorm => "gradient_norm",
            SaliencyMethod::Attention => "attention",
        }
    }
}

impl std::str::FromStr for SaliencyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient_norm" => Ok(SaliencyMethod::GradientNorm),
            "attention" => Ok(SaliencyMethod::Attention),
            other => Err(Error::Input(format!(
                "unknown locator `{other}` (expected gradient_norm or attention)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyProfile {
    pub view: TokenizedView,
    pub values: Vec<f64>,
    pub method: SaliencyMethod,
}

/// Tokens picked by [`select_salient`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Sorted token indices.
    pub indices: Vec<usize>,
    /// No token exceeded the mean; the single argmax was taken instead.
    pub fallback: bool,
}

/// Located spans after word completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedSpans {
    /// Every token of the source view covered by `char_spans`, sorted.
    pub token_indices: Vec<usize>,
    /// Merged byte intervals aligned to word boundaries.
    pub char_spans: Vec<(usize, usize)>,
    pub word_count: usize,
}

pub fn gradient_saliency(text: &str, scorer: &dyn ScorerAdapter) -> Result<SaliencyProfile> {
    if !scorer.capabilities().gradients {
        return Err(Error::capability(scorer.id(), "embedding gradients"));
    }
    let (view, grads) = scorer.embedding_gradients(text)?;
    if grads.len() != view.len() {
        return Err(Error::adapter(
            scorer.id(),
            format!("{} gradient rows for {} tokens", grads.len(), view.len()),
        ));
    }
    let values = grads.iter().map(|g| l2_norm(g)).collect();
    finish(view, values, SaliencyMethod::GradientNorm, scorer.id())
}

pub fn attention_saliency(text: &str, scorer: &dyn ScorerAdapter) -> Result<SaliencyProfile> {
    if !scorer.capabilities().attention {
        return Err(Error::capability(scorer.id(), "attention maps"));
    }
    let (view, maps) = scorer.attention_maps(text)?;
    let layers = maps.num_layers();
    if layers < 2 {
        return Err(Error::capability(
            scorer.id(),
            format!("attention locating needs >= 2 layers, model has {layers}"),
        ));
    }
    let penultimate = &maps.weights[layers - 2];
    let values = (0..view.len())
        .map(|t| {
            penultimate
                .iter()
                .map(|head| head[0][t])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    finish(view, values, SaliencyMethod::Attention, scorer.id())
}

pub fn saliency(text: &str, scorer: &dyn ScorerAdapter, method: SaliencyMethod) -> Result<SaliencyProfile> {
    match method {
        SaliencyMethod::GradientNorm => gradient_saliency(text, scorer),
        SaliencyMethod::Attention => attention_saliency(text, scorer),
    }
}

fn finish(
    view: TokenizedView,
    values: Vec<f64>,
    method: SaliencyMethod,
    adapter: &str,
) -> Result<SaliencyProfile> {
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::adapter(adapter, format!("invalid saliency value {v}")));
    }
    Ok(SaliencyProfile {
        view,
        values,
        method,
    })
}

/// Above-mean tokens, at most `min(floor(2L/3), m)` of the highest. A
/// constant profile yields the lowest-index argmax.
pub fn select_salient(values: &[f64], m: usize) -> Result<Selection> {
    if values.is_empty() {
        return Err(Error::Contract("cannot select from an empty profile".into()));
    }
    if m == 0 {
        return Err(Error::Contract("max edit tokens must be >= 1".into()));
    }
    let len = values.len();
    let mean = values.iter().sum::<f64>() / len as f64;
    let mut above: Vec<usize> = (0..len).filter(|&i| values[i] > mean).collect();
    if above.is_empty() {
        let best = (0..len).fold(0, |b, i| if values[i] > values[b] { i } else { b });
        return Ok(Selection {
            indices: vec![best],
            fallback: true,
        });
    }
    let cap = (2 * len / 3).min(m);
    above.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    above.truncate(cap);
    above.sort_unstable();
    Ok(Selection {
        indices: above,
        fallback: false,
    })
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Widens each selected token to the whole word(s) it touches and merges
/// runs of consecutive selected words into one span.
pub fn complete_words(indices: &[usize], view: &TokenizedView) -> Result<LocatedSpans> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= view.len()) {
        return Err(Error::Contract(format!(
            "token index {bad} out of range for {} tokens",
            view.len()
        )));
    }
    let words = crate::modeling::word_spans(&view.text);
    let mut picked = vec![false; words.len()];
    for &i in indices {
        let span = view.char_spans[i];
        for (w, &ws) in words.iter().enumerate() {
            // zero-width or whitespace-only tokens touch no word
            if overlaps(span, ws) {
                picked[w] = true;
            }
        }
    }
    let mut char_spans: Vec<(usize, usize)> = Vec::new();
    let mut prev_picked = false;
    for (w, &ws) in words.iter().enumerate() {
        if picked[w] {
            match char_spans.last_mut() {
                Some(last) if prev_picked => last.1 = ws.1,
                _ => char_spans.push(ws),
            }
        }
        prev_picked = picked[w];
    }
    let token_indices = (0..view.len())
        .filter(|&t| char_spans.iter().any(|&s| overlaps(view.char_spans[t], s)))
        .collect();
    Ok(LocatedSpans {
        token_indices,
        char_spans,
        word_count: picked.iter().filter(|&&p| p).count(),
    })
}

/// Every token of `target` whose span overlaps a located span.
pub fn map_spans(spans: &LocatedSpans, source_text: &str, target: &TokenizedView) -> Result<Vec<usize>> {
    if source_text != target.text {
        return Err(Error::Contract(
            "located spans and target view refer to different texts".into(),
        ));
    }
    Ok((0..target.len())
        .filter(|&t| spans.char_spans.iter().any(|&s| overlaps(target.char_spans[t], s)))
        .collect())
}

/// Everything one locate step produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Located {
    pub profile: SaliencyProfile,
    pub selection: Selection,
    pub spans: LocatedSpans,
}

pub fn locate(
    text: &str,
    scorer: &dyn ScorerAdapter,
    method: SaliencyMethod,
    max_tokens: usize,
) -> Result<Located> {
    let profile = saliency(text, scorer, method)?;
    let selection = select_salient(&profile.values, max_tokens)?;
    let spans = complete_words(&selection.indices, &profile.view)?;
    Ok(Located {
        profile,
        selection,
        spans,
    })
}
