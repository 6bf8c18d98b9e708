//! Reading and writing run artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lpbo_core::meta_ga::{decode, GenomeFile, TrainCheckpoint};
use lpbo_core::policy::PolicyCheckpoint;
use lpbo_core::{Genome, PolicyConfig, PolicyParams, FORMAT_VERSION};
use serde::Serialize;

use crate::CliError;

/// Anything `eval`, `compare` and `decode` accept as a trained optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedOptimizer {
    Genome(PolicyConfig, Genome),
    Params(PolicyParams),
}

impl LoadedOptimizer {
    pub fn params(&self) -> Result<PolicyParams, CliError> {
        match self {
            LoadedOptimizer::Genome(cfg, g) => Ok(decode(g, *cfg)?),
            LoadedOptimizer::Params(p) => Ok(p.clone()),
        }
    }

    pub fn genome(&self) -> Option<(PolicyConfig, &Genome)> {
        match self {
            LoadedOptimizer::Genome(cfg, g) => Some((*cfg, g)),
            LoadedOptimizer::Params(_) => None,
        }
    }
}

fn parse_error(path: &Path, text: &str, err: serde_json::Error) -> CliError {
    let (line, column) = (err.line(), err.column());
    let offset: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    CliError::Parse {
        path: path.to_path_buf(),
        offset: offset.min(text.len()),
        message: err.to_string(),
    }
}

fn check_version(found: u32) -> Result<(), CliError> {
    if found != FORMAT_VERSION {
        return Err(lpbo_core::Error::FormatVersion {
            found,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    Ok(())
}

/// Loads a genome file, a training checkpoint (its best genome), or a raw
/// parameter checkpoint.
pub fn load_optimizer(path: &Path) -> Result<LoadedOptimizer, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_error(path, &text, e))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CliError::Usage(format!("{}: missing format_version", path.display())))?;
    check_version(u32::try_from(version).unwrap_or(u32::MAX))?;
    let shape = |e: serde_json::Error| CliError::Usage(format!("{}: {e}", path.display()));
    if value.get("flat_params").is_some() {
        let ckpt: PolicyCheckpoint = serde_json::from_value(value).map_err(shape)?;
        Ok(LoadedOptimizer::Params(ckpt.into_params()?))
    } else if value.get("population").is_some() {
        let ckpt: TrainCheckpoint = serde_json::from_value(value).map_err(shape)?;
        Ok(LoadedOptimizer::Genome(ckpt.policy_config, ckpt.best))
    } else if value.get("genome").is_some() {
        let file: GenomeFile = serde_json::from_value(value).map_err(shape)?;
        Ok(LoadedOptimizer::Genome(file.policy_config, file.genome))
    } else {
        Err(CliError::Usage(format!(
            "{}: not a genome, training checkpoint or parameter file",
            path.display()
        )))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(lpbo_core::Error::from)?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> lpbo_core::Result<()>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub format_version: u32,
    pub command: &'a str,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: &'a crate::config::RunConfig,
}
