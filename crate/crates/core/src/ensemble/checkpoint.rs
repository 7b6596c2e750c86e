//! Checkpoint files. BL and EE bundles are one file; PE and ME bundles are
//! one file per member (`name.model0.ckpt`, `name.model1.ckpt`, ...).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::{Element, Precision, Tensor};

use super::bundle::{build, ModelBundle};
use super::spec::{ArchitectureSpec, EnsembleMode};

const MAGIC: &[u8; 4] = b"EECK";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: ArchitectureSpec,
    precision: Precision,
    model_index: usize,
    model_count: usize,
    tensors: Vec<TensorEntry>,
}

/// Path of member `i` of a multi-file checkpoint rooted at `path`.
pub fn member_path(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.model{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}.model{i}"),
    };
    path.with_file_name(name)
}

fn is_multi_file(mode: EnsembleMode) -> bool {
    matches!(mode, EnsembleMode::Pure | EnsembleMode::Merge)
}

/// Writes the bundle; returns every file written.
pub fn save_checkpoint<T: Element>(bundle: &ModelBundle<T>, path: &Path) -> Result<Vec<PathBuf>> {
    let count = bundle.models.len();
    let mut written = Vec::with_capacity(count);
    for (i, model) in bundle.models.iter().enumerate() {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (j, p) in model.params().iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("param{j}"),
                shape: p.shape().to_vec(),
            });
            payload.extend(T::to_le_bytes_vec(p.data()));
        }
        for (j, b) in model.buffers().iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("buffer{j}"),
                shape: vec![b.len()],
            });
            payload.extend(T::to_le_bytes_vec(b));
        }
        let header = Header {
            spec: bundle.spec.clone(),
            precision: T::PRECISION,
            model_index: i,
            model_count: count,
            tensors,
        };
        let target = if is_multi_file(bundle.mode()) {
            member_path(path, i)
        } else {
            path.to_path_buf()
        };
        container::write(&target, MAGIC, &header, &payload)?;
        written.push(target);
    }
    Ok(written)
}

fn decode<T: Element>(bytes: &[u8], precision: Precision) -> Vec<T> {
    match precision {
        Precision::F32 => f32::from_le_bytes_slice(bytes).into_iter().map(|v| T::from_f64(v as f64)).collect(),
        Precision::F64 => f64::from_le_bytes_slice(bytes).into_iter().map(T::from_f64).collect(),
    }
}

/// Loads a checkpoint written by [`save_checkpoint`]. With `expected`, the
/// stored spec must match it.
pub fn load_checkpoint<T: Element>(path: &Path, expected: Option<&ArchitectureSpec>) -> Result<ModelBundle<T>> {
    let first = if path.exists() {
        path.to_path_buf()
    } else {
        let m0 = member_path(path, 0);
        if !m0.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        m0
    };
    let (header, payload): (Header, Vec<u8>) = container::read(&first, MAGIC)?;
    if let Some(exp) = expected {
        if exp != &header.spec {
            return Err(Error::StructuralMismatch(format!(
                "checkpoint holds a {} N={} spec, expected {} N={}",
                header.spec.ensemble_mode, header.spec.n, exp.ensemble_mode, exp.n
            )));
        }
    }
    let spec = header.spec.clone();
    let mut bundle: ModelBundle<T> = build(&spec, 0)?;
    if bundle.models.len() != header.model_count {
        return Err(Error::StructuralMismatch(format!(
            "checkpoint has {} models, spec builds {}",
            header.model_count,
            bundle.models.len()
        )));
    }
    let mut pending = Some((header, payload));
    for i in 0..bundle.models.len() {
        let (h, bytes) = match pending.take() {
            Some(hp) if hp.0.model_index == i => hp,
            _ => container::read(&member_path(path, i), MAGIC)?,
        };
        if h.spec != spec || h.model_index != i {
            return Err(Error::StructuralMismatch(format!("member file {i} belongs to a different bundle")));
        }
        fill_model(&mut bundle, i, &h, &bytes, &first)?;
    }
    Ok(bundle)
}

/// Element precision a checkpoint was written at.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let first = if path.exists() { path.to_path_buf() } else { member_path(path, 0) };
    let (header, _): (Header, Vec<u8>) = container::read(&first, MAGIC)?;
    Ok(header.precision)
}

fn fill_model<T: Element>(bundle: &mut ModelBundle<T>, i: usize, h: &Header, bytes: &[u8], path: &Path) -> Result<()> {
    let width = h.precision.byte_width();
    let model = &mut bundle.models[i];
    let n_params = model.params().len();
    let n_buffers = model.buffers().len();
    if h.tensors.len() != n_params + n_buffers {
        return Err(Error::StructuralMismatch(format!(
            "checkpoint lists {} tensors, model has {}",
            h.tensors.len(),
            n_params + n_buffers
        )));
    }
    let total: usize = h.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if total * width != bytes.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("payload is {} bytes, header describes {}", bytes.len(), total * width),
        });
    }
    let mut offset = 0;
    let mut take = |n: usize| {
        let v = decode::<T>(&bytes[offset..offset + n * width], h.precision);
        offset += n * width;
        v
    };
    for (entry, p) in h.tensors[..n_params].iter().zip(model.params_mut()) {
        if entry.shape != p.shape() {
            return Err(Error::StructuralMismatch(format!(
                "{}: stored shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                p.shape()
            )));
        }
        *p = Tensor::new(entry.shape.clone(), take(entry.shape.iter().product()))?;
    }
    for (entry, b) in h.tensors[n_params..].iter().zip(model.buffers_mut()) {
        if entry.shape != [b.len()] {
            return Err(Error::StructuralMismatch(format!("{}: buffer length mismatch", entry.name)));
        }
        *b = take(b.len());
    }
    Ok(())
}
