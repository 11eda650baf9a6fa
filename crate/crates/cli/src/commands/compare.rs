use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use locedit::controller::{read_records, BatchRecord, ControllerConfig, Editor};
use locedit::metrics::edited_char_fraction;
use locedit::modeling::Adapters;
use locedit::rerank::Reranker;

use super::{input_path, open_input, open_output};
use crate::config::{LoadedConfig, Overrides};

/// A beam width, or `full` for `k^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamWidth {
    Fixed(usize),
    Full,
}

impl BeamWidth {
    pub fn resolve(self, k: usize, m: usize) -> usize {
        match self {
            BeamWidth::Fixed(b) => b,
            BeamWidth::Full => k.saturating_pow(m as u32),
        }
    }
}

impl FromStr for BeamWidth {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(BeamWidth::Full);
        }
        match s.parse::<usize>() {
            Ok(b) if b >= 1 => Ok(BeamWidth::Fixed(b)),
            _ => Err(format!("beam width must be a positive integer or `full`, got `{s}`")),
        }
    }
}

impl fmt::Display for BeamWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BeamWidth::Fixed(b) => write!(f, "{b}"),
            BeamWidth::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// TSV destination; stdout if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Candidates per slot; defaults to the configured value.
    #[arg(long = "k", value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Maximum edited tokens; defaults to the configured value.
    #[arg(long = "m", value_delimiter = ',')]
    pub m: Vec<usize>,
    /// Beam widths, `full` meaning `k^m`; defaults to the configured value.
    #[arg(long = "b", value_delimiter = ',')]
    pub b: Vec<BeamWidth>,
    #[arg(long, env = "LOCEDIT_WORKERS", default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    pub b: Vec<BeamWidth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub reranker: Reranker,
    pub k: usize,
    pub m: usize,
    /// `None` for the exhaustive reranker, which has no beam.
    pub b: Option<BeamWidth>,
    /// `ok`, or `refused` when `k^m` exceeds the explosion guard.
    pub status: String,
    pub satisfaction_rate: Option<f64>,
    pub mean_overall: Option<f64>,
    pub mean_fluency: Option<f64>,
    pub energy_evaluations: Option<usize>,
    pub mean_edited_fraction: Option<f64>,
}

pub const HEADER: &str = "reranker\tk\tm\tb\tstatus\tsatisfaction_rate\tmean_overall\tmean_fluency\tenergy_evaluations\tmean_edited_fraction";

impl CompareRow {
    pub fn to_tsv(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.reranker.name(),
            self.k,
            self.m,
            self.b.map_or("-".to_string(), |b| b.to_string()),
            self.status,
            f(self.satisfaction_rate),
            f(self.mean_overall),
            f(self.mean_fluency),
            self.energy_evaluations.map_or("n/a".to_string(), |v| v.to_string()),
            f(self.mean_edited_fraction),
        )
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn run_cell(
    loaded: &LoadedConfig,
    adapters: &Adapters,
    records: &[BatchRecord],
    config: ControllerConfig,
    workers: usize,
) -> Result<CompareRow> {
    let reranker = config.reranker;
    let (k, m) = (config.candidates_per_slot, config.max_edit_tokens);
    let editor = Editor::new(config, loaded.terms()?, &loaded.config.primary_term, adapters)?;
    let batch = editor.run_batch(records, workers)?;
    let fluency = editor.terms().fluency().name.clone();
    let reports = || batch.outcomes.iter().filter_map(|o| o.best_report.as_ref());
    Ok(CompareRow {
        reranker,
        k,
        m,
        b: None,
        status: "ok".to_string(),
        satisfaction_rate: Some(batch.summary.satisfaction_rate),
        mean_overall: mean(reports().map(|r| r.overall)),
        mean_fluency: mean(reports().map(|r| r.energy(&fluency))),
        energy_evaluations: Some(batch.outcomes.iter().map(|o| o.energy_evaluations).sum()),
        mean_edited_fraction: mean(
            batch
                .outcomes
                .iter()
                .map(|o| edited_char_fraction(&o.y0, &o.best_text)),
        ),
    })
}

/// Every reranker over the grid, in a fixed order: reranker, then k, m, b.
pub fn compare(
    loaded: &LoadedConfig,
    records: &[BatchRecord],
    grid: &Grid,
    workers: usize,
) -> Result<Vec<CompareRow>> {
    let adapters = loaded.build_adapters()?;
    let base = &loaded.config.controller;
    let mut rows = Vec::new();
    for reranker in [Reranker::Exhaustive, Reranker::BeamFluency, Reranker::BeamOverall] {
        for &k in &grid.k {
            for &m in &grid.m {
                let widths: Vec<Option<BeamWidth>> = match reranker {
                    Reranker::Exhaustive => vec![None],
                    _ => grid.b.iter().copied().map(Some).collect(),
                };
                for width in widths {
                    let space = k.saturating_pow(m as u32);
                    if reranker == Reranker::Exhaustive && space > base.explosion_guard {
                        rows.push(CompareRow {
                            reranker,
                            k,
                            m,
                            b: None,
                            status: "refused".to_string(),
                            satisfaction_rate: None,
                            mean_overall: None,
                            mean_fluency: None,
                            energy_evaluations: None,
                            mean_edited_fraction: None,
                        });
                        continue;
                    }
                    let config = ControllerConfig {
                        candidates_per_slot: k,
                        max_edit_tokens: m,
                        beam_size: width.map_or(base.beam_size, |w| w.resolve(k, m)),
                        reranker,
                        ..base.clone()
                    };
                    let mut row = run_cell(loaded, &adapters, records, config, workers)
                        .with_context(|| format!("{} k={k} m={m}", reranker.name()))?;
                    row.b = width;
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

pub fn execute(args: &CompareArgs) -> Result<()> {
    let overrides = Overrides {
        input: args.input.clone(),
        ..Overrides::default()
    };
    let loaded = LoadedConfig::load(&args.config, &overrides)?;
    let base = &loaded.config.controller;
    let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    let grid = Grid {
        k: or(&args.k, base.candidates_per_slot),
        m: or(&args.m, base.max_edit_tokens),
        b: if args.b.is_empty() {
            vec![BeamWidth::Fixed(base.beam_size)]
        } else {
            args.b.clone()
        },
    };
    if grid.k.contains(&0) || grid.m.contains(&0) {
        bail!("--k and --m values must be >= 1");
    }
    let input = input_path(&loaded, None)?;
    let (records, skipped) = read_records(open_input(&input)?)?;
    for e in &skipped {
        log::warn!("{}:{}: skipped: {}", input.display(), e.line, e.message);
    }
    let rows = compare(&loaded, &records, &grid, args.workers)?;
    let mut w = open_output(args.output.as_deref())?;
    writeln!(w, "{HEADER}")?;
    for r in &rows {
        writeln!(w, "{}", r.to_tsv())?;
    }
    w.flush()?;
    Ok(())
}
