//! Per-recording CSV files, one column per channel, described by a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variation::ModalityLayout;

use super::RawRecording;

/// Subject or label as written in the manifest: a string or an integer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ident {
    Num(u64),
    Name(String),
}

impl std::fmt::Display for Ident {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ident::Num(n) => write!(f, "{n}"),
            Ident::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestModality {
    pub name: String,
    /// Consecutive columns belonging to this modality.
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the data directory.
    pub path: PathBuf,
    pub subject: Ident,
    pub label: Ident,
    pub sample_rate: f64,
    #[serde(default)]
    pub modalities: Vec<ManifestModality>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        detail: e.to_string(),
    })
}

/// Class index of a manifest label. Names are looked up in `classes`;
/// integers must be below its length.
fn resolve_label(label: &Ident, classes: &[String]) -> Option<usize> {
    match label {
        Ident::Num(n) => (*n as usize).lt(&classes.len()).then_some(*n as usize),
        Ident::Name(s) => classes.iter().position(|c| c == s),
    }
}

fn layout_of(entry: &ManifestEntry, channels: usize) -> Result<Option<ModalityLayout>> {
    if entry.modalities.is_empty() {
        return Ok(None);
    }
    let mut start = 0;
    let mut groups = Vec::new();
    for m in &entry.modalities {
        groups.push((m.name.clone(), start..start + m.channels));
        start += m.channels;
    }
    if start != channels {
        return Err(Error::invalid(format!(
            "{}: modalities cover {start} columns, file has {channels}",
            entry.path.display()
        )));
    }
    ModalityLayout::new(groups).map(Some)
}

fn parse_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            ::csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                detail: format!("{other:?}"),
            },
        })?;
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail: e.to_string(),
        })?;
        if i == 0 && row.iter().all(|cell| cell.parse::<f64>().is_err()) {
            // Header row.
            continue;
        }
        if channels.is_empty() {
            channels = vec![Vec::new(); row.len()];
        }
        if row.len() != channels.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                detail: format!("ragged row: {} columns, expected {}", row.len(), channels.len()),
            });
        }
        for (c, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                detail: format!("column {}: non-numeric value {cell:?}", c + 1),
            })?;
            channels[c].push(v);
        }
    }
    if channels.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: "file has no rows".into(),
        });
    }
    Ok(channels)
}

/// Parses every manifest entry under `dir`, in manifest order. A first row
/// with no numeric cell is taken as a header and skipped. Files are
/// read in parallel.
pub fn load_csv(dir: &Path, manifest: &[ManifestEntry], classes: &[String]) -> Result<Vec<RawRecording>> {
    manifest
        .par_iter()
        .map(|entry| {
            let label = resolve_label(&entry.label, classes).ok_or_else(|| {
                Error::invalid(format!(
                    "{}: label {} is not one of the declared classes {classes:?}",
                    entry.path.display(),
                    entry.label
                ))
            })?;
            let path = dir.join(&entry.path);
            let channels = parse_file(&path)?;
            let layout = layout_of(entry, channels.len())?;
            RawRecording::new(entry.subject.to_string(), label, entry.sample_rate, channels, layout)
        })
        .collect()
}

/// Class names of a manifest in first-seen order, for manifests that do
/// not come with a declared class list.
pub fn manifest_classes(manifest: &[ManifestEntry]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in manifest {
        let s = e.label.to_string();
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}
