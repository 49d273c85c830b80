//! Artifact writers.
//!
//! Every run produces a JSON document carrying the resolved config, the
//! tool version, and the seed next to the results, so an artifact alone
//! is enough to rerun the experiment. Files are written to a temporary
//! name and renamed into place; readers never observe a partial file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;
use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub report: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'a str, seed: u64, config: &'a ExperimentConfig, report: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            report,
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
    let mut tmp = PathBuf::from(path);
    tmp.set_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("cannot rename to {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, doc: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Io(format!("serialization: {e}")))?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// A CSV table built row by row. Floats go through `Display`, which is
/// shortest-roundtrip, so equal runs produce byte-equal files.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "{}", header.join(","));
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "csv row width mismatch");
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn write(self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        write_atomic(&path, self.text.as_bytes())?;
        Ok(path)
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
