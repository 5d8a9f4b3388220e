//! Reading telemetry from files and directories.

use std::fs;
use std::path::{Path, PathBuf};

use qtrap_core::TelemetryRecord;
use thiserror::Error;

use crate::schema::{parse_csv, parse_jsonl, Parsed, SchemaError};

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Schema { path: PathBuf, source: SchemaError },
    #[error("{0}: unsupported extension (expected .jsonl or .csv)")]
    Format(PathBuf),
}

impl InputError {
    pub fn is_io(&self) -> bool {
        matches!(self, InputError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

pub fn format_of(path: &Path) -> Option<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => Some(Format::Jsonl),
        Some("csv") => Some(Format::Csv),
        _ => None,
    }
}

/// Expands directories to the telemetry files they contain (not recursive)
/// and returns every path sorted lexicographically.
pub fn expand_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>, InputError> {
    let mut out = Vec::new();
    for p in paths {
        let meta = fs::metadata(p).map_err(|source| InputError::Io {
            path: p.clone(),
            source,
        })?;
        if meta.is_dir() {
            let entries = fs::read_dir(p).map_err(|source| InputError::Io {
                path: p.clone(),
                source,
            })?;
            for entry in entries {
                let entry = entry.map_err(|source| InputError::Io {
                    path: p.clone(),
                    source,
                })?;
                let path = entry.path();
                if path.is_file() && format_of(&path).is_some() {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Loads one file, picking the parser from its extension.
pub fn load_file(path: &Path) -> Result<Parsed, InputError> {
    let format = format_of(path).ok_or_else(|| InputError::Format(path.to_path_buf()))?;
    let text = fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = match format {
        Format::Jsonl => parse_jsonl(&text),
        Format::Csv => parse_csv(&text),
    };
    parsed.map_err(|source| InputError::Schema {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub files: Vec<PathBuf>,
    pub records: Vec<TelemetryRecord>,
    pub warnings: Vec<String>,
}

/// Loads every file under `paths` in lexicographic path order, records in
/// file order. Fails on the first bad file.
pub fn load_all(paths: &[PathBuf]) -> Result<Loaded, InputError> {
    let files = expand_paths(paths)?;
    let mut out = Loaded::default();
    for f in &files {
        let parsed = load_file(f)?;
        out.records.extend(parsed.records);
        out.warnings.extend(
            parsed
                .warnings
                .into_iter()
                .map(|w| format!("{}: {w}", f.display())),
        );
    }
    if files.is_empty() {
        out.warnings.push("no telemetry files found".into());
    }
    out.files = files;
    Ok(out)
}
