use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use locedit::controller::{read_records, BatchSummary, Editor, IterationRecord, LineError};
use locedit::energy::TermKind;

use super::{input_path, open_input, open_output, output_path, sidecar, write_json};
use crate::config::LoadedConfig;
use crate::CommonArgs;

/// Hyperparameters echoed before a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub task: String,
    pub seed: u64,
    pub primary_term: String,
    pub max_iterations: usize,
    pub max_edit_tokens: usize,
    pub candidates_per_slot: usize,
    pub beam_size: usize,
    pub reranker: String,
    pub locator: String,
    pub explosion_guard: usize,
    pub terms: Vec<TermEcho>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEcho {
    pub name: String,
    pub kind: TermKind,
    pub weight: f64,
    /// `None` for the fluency term's default of no threshold.
    pub threshold: Option<f64>,
}

impl RunHeader {
    pub fn from_config(loaded: &LoadedConfig) -> Self {
        let c = &loaded.config;
        let ctl = &c.controller;
        Self {
            task: c.task.clone(),
            seed: c.seed,
            primary_term: c.primary_term.clone(),
            max_iterations: ctl.max_iterations,
            max_edit_tokens: ctl.max_edit_tokens,
            candidates_per_slot: ctl.candidates_per_slot,
            beam_size: ctl.beam_size,
            reranker: ctl.reranker.name().to_string(),
            locator: ctl.locator.name().to_string(),
            explosion_guard: ctl.explosion_guard,
            terms: c
                .terms
                .iter()
                .map(|t| TermEcho {
                    name: t.name.clone(),
                    kind: t.kind,
                    weight: t.weight,
                    threshold: match t.kind {
                        TermKind::Scorer => Some(t.threshold.unwrap_or(0.5)),
                        TermKind::Fluency => t.threshold,
                    },
                })
                .collect(),
        }
    }
}

/// One line of the output JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub y0: String,
    pub y_star: String,
    pub early_stopped: bool,
    pub iterations: usize,
    pub satisfied: bool,
    pub energies: BTreeMap<String, f64>,
    pub overall: Option<f64>,
    pub initial_energies: BTreeMap<String, f64>,
    pub initial_overall: Option<f64>,
    pub energy_evaluations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub header: RunHeader,
    pub summary: BatchSummary,
    pub skipped_lines: Vec<LineError>,
}

pub fn execute(args: &CommonArgs) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config, &args.overrides())?;
    let header = RunHeader::from_config(&loaded);
    if args.dry_run {
        println!("{}", toml::to_string_pretty(&loaded.config)?);
        println!("# header: {}", serde_json::to_string(&header)?);
        return Ok(());
    }
    let input = input_path(&loaded, args.input.as_ref())?;
    let output = output_path(&loaded, args.output.as_ref());
    let adapters = loaded.build_adapters()?;
    let editor = Editor::new(
        loaded.config.controller.clone(),
        loaded.terms()?,
        &loaded.config.primary_term,
        &adapters,
    )
    .with_context(|| format!("config {}", loaded.path.display()))?;
    let (records, skipped) = read_records(open_input(&input)?)
        .with_context(|| format!("reading {}", input.display()))?;
    for e in &skipped {
        log::warn!("{}:{}: skipped: {}", input.display(), e.line, e.message);
    }
    let batch = editor.run_batch(&records, args.workers)?;
    let trace = loaded.config.io.trace;
    let mut w = open_output(output.as_deref())?;
    for (rec, out) in records.iter().zip(&batch.outcomes) {
        let energies = |r: &Option<locedit::energy::EnergyReport>| {
            r.as_ref().map(|r| r.per_term.clone()).unwrap_or_default()
        };
        let line = OutputRecord {
            id: rec.id.clone(),
            prompt: rec.prompt.clone(),
            y0: out.y0.clone(),
            y_star: out.best_text.clone(),
            early_stopped: out.early_stopped,
            iterations: out.iterations_run,
            satisfied: out.satisfied(editor.terms()),
            energies: energies(&out.best_report),
            overall: out.best_report.as_ref().map(|r| r.overall),
            initial_energies: energies(&out.initial_report),
            initial_overall: out.initial_report.as_ref().map(|r| r.overall),
            energy_evaluations: out.energy_evaluations,
            error: out.error.clone(),
            warnings: out.warnings.clone(),
            trace: trace.then(|| out.trace.clone()),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    let summary = RunSummary {
        header,
        summary: batch.summary,
        skipped_lines: skipped,
    };
    let s = &summary.summary;
    let text = format!(
        "records {} | failed {} | skipped lines {} | satisfied {:.4} | mean iterations {:.3} | toks/s {:.2}",
        s.records,
        s.failed,
        summary.skipped_lines.len(),
        s.satisfaction_rate,
        s.mean_iterations,
        s.tokens_per_second
    );
    let header = format!("header {}", serde_json::to_string(&summary.header)?);
    match &output {
        Some(path) => {
            write_json(&sidecar(path, "summary.json"), &summary)?;
            println!("{header}\n{text}");
        }
        None => eprintln!("{header}\n{text}"),
    }
    Ok(())
}
