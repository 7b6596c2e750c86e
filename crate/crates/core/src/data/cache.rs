//! Binary cache of a windowed dataset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::variation::ModalityLayout;

use super::WindowedDataset;

const MAGIC: &[u8; 4] = b"EEDS";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    num_classes: usize,
    labels: Vec<usize>,
    subjects: Vec<String>,
    layout: ModalityLayout,
    /// Free-form provenance, e.g. the generator config.
    #[serde(default)]
    meta: serde_json::Value,
}

/// Writes `ds` with 64-bit little-endian windows.
pub fn save_dataset(ds: &WindowedDataset, path: &Path, meta: serde_json::Value) -> Result<()> {
    let header = Header {
        shape: ds.windows.shape().to_vec(),
        num_classes: ds.num_classes,
        labels: ds.labels.clone(),
        subjects: ds.subjects.clone(),
        layout: ds.layout.clone(),
        meta,
    };
    container::write(path, MAGIC, &header, &f64::to_le_bytes_vec(ds.windows.data()))
}

/// Reads a dataset and the metadata stored with it.
pub fn load_dataset(path: &Path) -> Result<(WindowedDataset, serde_json::Value)> {
    let (h, payload): (Header, Vec<u8>) = container::read(path, MAGIC)?;
    let corrupt = |detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let numel: usize = h.shape.iter().product();
    if payload.len() != numel * 8 {
        return Err(corrupt(format!("payload is {} bytes, shape needs {}", payload.len(), numel * 8)));
    }
    let n = h.shape.first().copied().unwrap_or(0);
    if h.shape.len() != 3 || h.labels.len() != n || h.subjects.len() != n {
        return Err(corrupt("label or subject count does not match the window count".into()));
    }
    if h.labels.iter().any(|&l| l >= h.num_classes) {
        return Err(corrupt("label outside the class count".into()));
    }
    let windows = Tensor::new(h.shape, f64::from_le_bytes_slice(&payload))?;
    Ok((
        WindowedDataset {
            windows,
            labels: h.labels,
            subjects: h.subjects,
            num_classes: h.num_classes,
            layout: h.layout,
        },
        h.meta,
    ))
}
