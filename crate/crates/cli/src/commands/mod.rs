pub mod compare;
pub mod evaluate;
pub mod locate;
pub mod run;
pub mod train;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::LoadedConfig;

/// The configured input file, resolved against the config directory unless
/// it came from a flag.
pub(crate) fn input_path(loaded: &LoadedConfig, flag: Option<&PathBuf>) -> Result<PathBuf> {
    match (flag, &loaded.config.io.input) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) => Ok(loaded.resolve(p)),
        (None, None) => anyhow::bail!(
            "config {}: no input; set io.input or pass --input",
            loaded.path.display()
        ),
    }
}

pub(crate) fn output_path(loaded: &LoadedConfig, flag: Option<&PathBuf>) -> Option<PathBuf> {
    match (flag, &loaded.config.io.output) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(p)) => Some(loaded.resolve(p)),
        (None, None) => None,
    }
}

pub(crate) fn open_input(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open input {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// A file writer, or stdout when no path is given.
pub(crate) fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("cannot create {}", dir.display()))?;
            }
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// `out.jsonl` -> `out.jsonl.<suffix>`.
pub(crate) fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = open_output(Some(path))?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
