use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use locedit::controller::read_records;
use locedit::locate::{locate, SaliencyMethod};
use locedit::modeling::ScorerAdapter;

use super::{open_input, open_output};
use crate::config::{LoadedConfig, Overrides};

#[derive(Debug, Clone, Args)]
pub struct LocateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// A single text; otherwise every record of --input is located.
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `gradient_norm` or `attention`; defaults to the configured locator.
    #[arg(long)]
    pub method: Option<SaliencyMethod>,
    /// Scorer id; defaults to the primary term's scorer.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub max_edit_tokens: Option<usize>,
}

/// One output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub method: SaliencyMethod,
    pub tokens: Vec<String>,
    pub values: Vec<f64>,
    pub selected: Vec<usize>,
    pub fallback: bool,
    pub char_spans: Vec<(usize, usize)>,
    /// The located spans as they appear in `text`.
    pub words: Vec<String>,
}

pub fn locate_one(
    id: Option<String>,
    text: &str,
    scorer: &dyn ScorerAdapter,
    method: SaliencyMethod,
    max_tokens: usize,
) -> Result<LocateRecord> {
    let located = locate(text, scorer, method, max_tokens)?;
    Ok(LocateRecord {
        id,
        text: text.to_string(),
        method,
        tokens: located.profile.view.tokens.clone(),
        values: located.profile.values,
        selected: located.selection.indices,
        fallback: located.selection.fallback,
        words: located
            .spans
            .char_spans
            .iter()
            .map(|&(s, e)| text[s..e].to_string())
            .collect(),
        char_spans: located.spans.char_spans,
    })
}

fn scorer_id(loaded: &LoadedConfig, flag: Option<&String>) -> Result<String> {
    if let Some(id) = flag {
        return Ok(id.clone());
    }
    let terms = loaded.terms()?;
    let primary = terms
        .get(&loaded.config.primary_term)
        .ok_or_else(|| anyhow!("primary term `{}` is not defined", loaded.config.primary_term))?;
    Ok(primary
        .scorer
        .clone()
        .unwrap_or_else(|| primary.name.clone()))
}

fn inputs(args: &LocateArgs, loaded: &LoadedConfig) -> Result<Vec<(Option<String>, String)>> {
    if let Some(t) = &args.text {
        return Ok(vec![(None, t.clone())]);
    }
    let path = super::input_path(loaded, args.input.as_ref())?;
    let (records, skipped) = read_records(open_input(&path)?).with_context(|| format!("{}", path.display()))?;
    for e in &skipped {
        log::warn!("{}:{}: skipped: {}", path.display(), e.line, e.message);
    }
    Ok(records.into_iter().map(|r| (Some(r.id), r.text)).collect())
}

pub fn execute(args: &LocateArgs) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config, &Overrides::default())?;
    let method = args.method.unwrap_or(loaded.config.controller.locator);
    let max_tokens = args
        .max_edit_tokens
        .unwrap_or(loaded.config.controller.max_edit_tokens);
    if max_tokens == 0 {
        bail!("--max-edit-tokens must be >= 1");
    }
    let id = scorer_id(&loaded, args.scorer.as_ref())?;
    let scorers = loaded.build_scorers()?;
    let scorer = scorers
        .get(&id)
        .ok_or_else(|| anyhow!("no scorer with id `{id}`"))?;
    let mut w = open_output(args.output.as_deref())?;
    for (rid, text) in inputs(args, &loaded)? {
        let rec = locate_one(rid.clone(), &text, scorer.as_ref(), method, max_tokens)
            .with_context(|| match &rid {
                Some(r) => format!("record `{r}`"),
                None => "--text".to_string(),
            })?;
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
