//! Run configuration: TOML file, `LOCEDIT_` environment overrides, flags.
//!
//! Precedence is flag > environment > file. Environment keys map onto the
//! config tree by lowercasing and splitting on `__`; numeric segments index
//! arrays, so `LOCEDIT_TERMS__1__THRESHOLD=0.8` sets the second term's
//! threshold. Values are parsed as TOML literals and fall back to strings.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::Value;

use locedit::controller::ControllerConfig;
use locedit::energy::{EnergyTerm, TermKind, TermSet};
use locedit::modeling::{
    Adapters, BagScorer, CausalLmAdapter, ConstantScorer, CountMaskFiller, MaskFillerAdapter,
    NGramLm, ScorerAdapter, StaticWordVectors, UniformLm,
};

pub const ENV_PREFIX: &str = "LOCEDIT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    #[serde(default)]
    pub seed: u64,
    pub primary_term: String,
    pub terms: Vec<EnergyTerm>,
    pub controller: ControllerConfig,
    pub adapters: AdapterConfig,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub scorers: Vec<ScorerConfig>,
    pub mask_filler: FillerConfig,
    pub causal_lm: LmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Lexicon file with `word<TAB>weight` lines.
    ToyLexicon {
        id: String,
        path: PathBuf,
        bias: f64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_piece_width")]
        piece_width: usize,
        #[serde(default = "default_true")]
        attention: bool,
    },
    /// A scorer written by `train-energy`.
    BagFile { id: String, path: PathBuf },
    Constant { id: String, logit: f64 },
}

impl ScorerConfig {
    pub fn id(&self) -> &str {
        match self {
            ScorerConfig::ToyLexicon { id, .. }
            | ScorerConfig::BagFile { id, .. }
            | ScorerConfig::Constant { id, .. } => id,
        }
    }
}

fn default_dim() -> usize {
    16
}

fn default_piece_width() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_order() -> usize {
    2
}

fn default_n() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FillerConfig {
    /// Corpus file, one sentence per line.
    ToyCount { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LmConfig {
    ToyNgram {
        path: PathBuf,
        #[serde(default = "default_order")]
        order: usize,
    },
    Uniform { size: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Scorer whose `sigmoid(g)` (or `1 - sigmoid(g)` when inverted) is the
    /// constraint probability column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
    #[serde(default)]
    pub invert: bool,
    /// Scorer whose `sigmoid(g) >= 0.5` counts a text as acceptable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptability: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingConfig>,
    #[serde(default = "default_n")]
    pub distinct_n: usize,
    #[serde(default = "default_n")]
    pub rep_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hashed {
        dim: usize,
    },
    /// `word v1 v2 ...` lines; words outside the table are hashed.
    Table {
        path: PathBuf,
    },
}

/// Command-line values that take precedence over file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trace: bool,
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
}

fn parse_env_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value, var: &str) -> Result<()> {
    let (head, rest) = path.split_first().unwrap();
    let slot: &mut Value = match root {
        Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.clone(), value);
                return Ok(());
            }
            t.entry(head.clone())
                .or_insert_with(|| Value::Table(toml::Table::new()))
        }
        Value::Array(a) => {
            let i: usize = head
                .parse()
                .map_err(|_| anyhow!("{var}: `{head}` is not an array index"))?;
            let len = a.len();
            let item = a
                .get_mut(i)
                .ok_or_else(|| anyhow!("{var}: index {i} out of range (array has {len})"))?;
            if rest.is_empty() {
                *item = value;
                return Ok(());
            }
            item
        }
        _ => bail!("{var}: cannot descend into a scalar at `{head}`"),
    };
    set_path(slot, rest, value, var)
}

/// Applies `LOCEDIT_*` variables from `vars` onto `root`.
pub fn apply_env<I>(root: &mut Value, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        // flag-only settings such as LOCEDIT_WORKERS live outside the file
        if path.len() == 1 && matches!(path[0].as_str(), "workers" | "log") {
            continue;
        }
        if path.iter().any(String::is_empty) {
            bail!("{key}: empty key segment");
        }
        set_path(root, &path, parse_env_value(&raw), &key)?;
    }
    Ok(())
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        Self::load_with_env(path, overrides, std::env::vars())
    }

    pub fn load_with_env<I>(path: &Path, overrides: &Overrides, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut root: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .with_context(|| format!("config {}: invalid TOML", path.display()))?;
        apply_env(&mut root, env).with_context(|| format!("config {}", path.display()))?;
        let mut config: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| anyhow!("config {}: {}", path.display(), e.message()))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(input) = &overrides.input {
            config.io.input = Some(input.clone());
        }
        if let Some(output) = &overrides.output {
            config.io.output = Some(output.clone());
        }
        config.io.trace |= overrides.trace;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let loaded = Self {
            config,
            path: path.to_path_buf(),
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Checks every module precondition without touching any asset.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let at = self.path.display();
        let terms = self.terms()?;
        c.controller
            .validate()
            .with_context(|| format!("config {at}: [controller]"))?;
        match terms.get(&c.primary_term) {
            Some(t) if t.kind == TermKind::Scorer => {}
            Some(_) => bail!("config {at}: primary_term `{}` names the fluency term", c.primary_term),
            None => bail!("config {at}: primary_term `{}` is not a defined term", c.primary_term),
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, s) in c.adapters.scorers.iter().enumerate() {
            if !ids.insert(s.id()) {
                bail!("config {at}: adapters.scorers[{i}]: duplicate id `{}`", s.id());
            }
        }
        for (i, t) in terms.iter().enumerate() {
            if let Some(id) = &t.scorer {
                if !ids.contains(id.as_str()) {
                    bail!("config {at}: terms[{i}].scorer: no adapter with id `{id}`");
                }
            }
        }
        if let Some(ev) = &c.evaluation {
            for (key, id) in [("classifier", &ev.classifier), ("acceptability", &ev.acceptability)] {
                if let Some(id) = id {
                    if !ids.contains(id.as_str()) {
                        bail!("config {at}: evaluation.{key}: no adapter with id `{id}`");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn terms(&self) -> Result<TermSet> {
        TermSet::new(self.config.terms.clone())
            .map_err(|e| anyhow!("config {}: terms: {e}", self.path.display()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn asset(&self, key: &str, p: &Path) -> Result<PathBuf> {
        let full = self.resolve(p);
        if !full.exists() {
            bail!(
                "config {}: {key}: asset {} not found",
                self.path.display(),
                full.display()
            );
        }
        Ok(full)
    }

    pub fn build_scorers(&self) -> Result<BTreeMap<String, Arc<dyn ScorerAdapter>>> {
        let mut out = BTreeMap::new();
        for (i, s) in self.config.adapters.scorers.iter().enumerate() {
            let key = format!("adapters.scorers[{i}]");
            let scorer: Arc<dyn ScorerAdapter> = match s {
                ScorerConfig::ToyLexicon {
                    id,
                    path,
                    bias,
                    dim,
                    piece_width,
                    attention,
                } => {
                    let lexicon = read_lexicon(&self.asset(&key, path)?)?;
                    let scorer = BagScorer::lexicon(id, &lexicon, *bias, *dim, *piece_width, self.config.seed)
                        .with_context(|| key.clone())?;
                    Arc::new(if *attention { scorer } else { scorer.without_attention() })
                }
                ScorerConfig::BagFile { id, path } => {
                    let file = self.asset(&key, path)?;
                    let reader = std::io::BufReader::new(fs::File::open(&file)?);
                    let scorer = BagScorer::load(reader)
                        .with_context(|| format!("{key}: {}", file.display()))?;
                    Arc::new(scorer.with_id(id))
                }
                ScorerConfig::Constant { id, logit } => Arc::new(ConstantScorer::new(id, *logit)),
            };
            out.insert(s.id().to_string(), scorer);
        }
        Ok(out)
    }

    pub fn build_filler(&self) -> Result<Arc<dyn MaskFillerAdapter>> {
        match &self.config.adapters.mask_filler {
            FillerConfig::ToyCount { path } => {
                let lines = read_lines(&self.asset("adapters.mask_filler.path", path)?)?;
                Ok(Arc::new(CountMaskFiller::from_corpus(
                    "count-filler",
                    lines.iter().map(String::as_str),
                )?))
            }
        }
    }

    pub fn build_lm(&self) -> Result<Arc<dyn CausalLmAdapter>> {
        match &self.config.adapters.causal_lm {
            LmConfig::ToyNgram { path, order } => {
                let lines = read_lines(&self.asset("adapters.causal_lm.path", path)?)?;
                Ok(Arc::new(NGramLm::from_corpus(
                    "ngram",
                    lines.iter().map(String::as_str),
                    *order,
                )?))
            }
            LmConfig::Uniform { size } => {
                if *size == 0 {
                    bail!("config {}: adapters.causal_lm.size must be >= 1", self.path.display());
                }
                Ok(Arc::new(UniformLm::new("uniform", *size)))
            }
        }
    }

    pub fn build_adapters(&self) -> Result<Adapters> {
        Ok(Adapters {
            scorers: self.build_scorers()?,
            mask_filler: self.build_filler()?,
            causal_lm: self.build_lm()?,
        })
    }

    pub fn build_embeddings(&self, cfg: &EmbeddingConfig) -> Result<StaticWordVectors> {
        match cfg {
            EmbeddingConfig::Hashed { dim } => Ok(StaticWordVectors::hashed(*dim, self.config.seed)),
            EmbeddingConfig::Table { path } => {
                let file = self.asset("evaluation.embeddings.path", path)?;
                let mut table = std::collections::HashMap::new();
                let mut dim = None;
                for (i, line) in read_lines(&file)?.iter().enumerate() {
                    let mut parts = line.split_whitespace();
                    let word = parts.next().unwrap().to_string();
                    let v: Vec<f64> = parts
                        .map(|x| x.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .with_context(|| format!("{}:{}: bad number", file.display(), i + 1))?;
                    if *dim.get_or_insert(v.len()) != v.len() {
                        bail!("{}:{}: expected {} values", file.display(), i + 1, dim.unwrap());
                    }
                    table.insert(word, v);
                }
                Ok(StaticWordVectors::from_table(table, self.config.seed))
            }
        }
    }
}

/// Nonempty lines, trimmed.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

/// `word<TAB>weight` lines (any whitespace separates).
pub fn read_lexicon(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let mut parts = line.split_whitespace();
        let (Some(word), Some(weight), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("{}:{}: expected `word weight`", path.display(), i + 1);
        };
        let weight: f64 = weight
            .parse()
            .with_context(|| format!("{}:{}: bad weight `{weight}`", path.display(), i + 1))?;
        out.insert(word.to_string(), weight);
    }
    if out.is_empty() {
        bail!("{}: lexicon is empty", path.display());
    }
    Ok(out)
}
