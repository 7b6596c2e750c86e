//! Sensor recordings, preprocessing into labeled windows, subject-wise
//! splits, and a synthetic stand-in dataset.

mod cache;
mod csv;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_SPLIT};
use crate::tensor::Tensor;
use crate::variation::ModalityLayout;

pub use self::cache::{load_dataset, save_dataset};
pub use self::csv::{load_csv, manifest_classes, read_manifest, Ident, ManifestEntry, ManifestModality};
pub use self::synth::{synth_generate, synth_windows, SynthConfig, SYNTH_SEED};

/// One measurement file: equal-length waveforms sharing subject and label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub subject: String,
    pub label: usize,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    /// One buffer per channel, all of equal length.
    pub channels: Vec<Vec<f64>>,
    pub layout: ModalityLayout,
}

impl RawRecording {
    pub fn new(
        subject: impl Into<String>,
        label: usize,
        sample_rate: f64,
        channels: Vec<Vec<f64>>,
        layout: Option<ModalityLayout>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if channels.is_empty() {
            return Err(Error::invalid("recording has no channels"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("recording channels differ in length"));
        }
        let layout = layout.unwrap_or_else(|| ModalityLayout::single(channels.len()));
        if layout.channels() != channels.len() {
            return Err(Error::invalid(format!(
                "modality layout covers {} channels, recording has {}",
                layout.channels(),
                channels.len()
            )));
        }
        Ok(Self {
            subject: subject.into(),
            label,
            sample_rate,
            channel_names: (0..channels.len()).map(|i| format!("ch{i}")).collect(),
            channels,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }
}

/// Drops `round(seconds * rate)` samples from both ends. Returns `None`
/// (with a warning) when nothing would be left.
pub fn trim_edges(rec: &RawRecording, seconds: f64) -> Option<RawRecording> {
    let cut = (seconds * rec.sample_rate).round() as usize;
    if cut == 0 {
        return Some(rec.clone());
    }
    if rec.len() <= 2 * cut {
        log::warn!(
            "skipping recording of subject {} (label {}): {} samples, trim needs more than {}",
            rec.subject,
            rec.label,
            rec.len(),
            2 * cut
        );
        return None;
    }
    let mut out = rec.clone();
    for c in &mut out.channels {
        *c = c[cut..c.len() - cut].to_vec();
    }
    Some(out)
}

/// Start offsets of `floor((len - window) / stride) + 1` windows.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || stride == 0 || len < window {
        return Vec::new();
    }
    (0..=(len - window) / stride).map(|i| i * stride).collect()
}

/// Windows of one recording as `(window, channels, width)` rows.
pub fn sliding_window(rec: &RawRecording, window: usize, stride: usize) -> Vec<Vec<f64>> {
    window_offsets(rec.len(), window, stride)
        .into_iter()
        .map(|off| {
            let mut w = Vec::with_capacity(rec.channel_count() * window);
            for c in &rec.channels {
                w.extend_from_slice(&c[off..off + window]);
            }
            w
        })
        .collect()
}

/// Labeled windows of uniform shape.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub windows: Tensor<f64>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    pub num_classes: usize,
    pub layout: ModalityLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub trim_seconds: f64,
    pub window: usize,
    pub stride: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            trim_seconds: 2.0,
            window: 256,
            stride: 256,
        }
    }
}

impl WindowedDataset {
    /// Trims and windows every recording. Recordings too short for the trim
    /// or a single window contribute nothing.
    pub fn from_recordings(recs: &[RawRecording], num_classes: usize, prep: &Preprocess) -> Result<Self> {
        let first = recs.first().ok_or_else(|| Error::invalid("no recordings"))?;
        let channels = first.channel_count();
        let layout = first.layout.clone();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        for rec in recs {
            if rec.channel_count() != channels {
                return Err(Error::invalid(format!(
                    "recording of subject {} has {} channels, expected {channels}",
                    rec.subject,
                    rec.channel_count()
                )));
            }
            if rec.label >= num_classes {
                return Err(Error::invalid(format!("label {} outside {num_classes} classes", rec.label)));
            }
            let Some(trimmed) = trim_edges(rec, prep.trim_seconds) else {
                continue;
            };
            for w in sliding_window(&trimmed, prep.window, prep.stride) {
                data.extend(w);
                labels.push(rec.label);
                subjects.push(rec.subject.clone());
            }
        }
        let n = labels.len();
        Ok(Self {
            windows: Tensor::new(vec![n, channels, prep.window], data)?,
            labels,
            subjects,
            num_classes,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.windows.shape()[2]
    }

    /// Distinct subject identifiers in sorted order.
    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            windows: self.windows.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            subjects: rows.iter().map(|&i| self.subjects[i].clone()).collect(),
            num_classes: self.num_classes,
            layout: self.layout.clone(),
        }
    }

    pub fn of_subjects(&self, ids: &BTreeSet<String>) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| ids.contains(&self.subjects[i])).collect();
        self.select(&rows)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
}

/// Draws `n_train` and `n_test` disjoint subjects.
pub fn split_subjects(ids: &[String], n_train: usize, n_test: usize, seed: u64) -> Result<SubjectSplit> {
    let mut ids: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("train and test splits both need at least one subject"));
    }
    if n_train + n_test > ids.len() {
        return Err(Error::invalid(format!(
            "split needs {} subjects, dataset has {}",
            n_train + n_test,
            ids.len()
        )));
    }
    ids.shuffle(&mut stream(seed, &[TAG_SPLIT]));
    Ok(SubjectSplit {
        train_subjects: ids[..n_train].iter().cloned().collect(),
        test_subjects: ids[n_train..n_train + n_test].iter().cloned().collect(),
    })
}

/// Train and test datasets over disjoint random subject sets.
pub fn subject_split(
    ds: &WindowedDataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(WindowedDataset, WindowedDataset, SubjectSplit)> {
    let split = split_subjects(&ds.subject_ids(), n_train, n_test, seed)?;
    let train = ds.of_subjects(&split.train_subjects);
    let test = ds.of_subjects(&split.test_subjects);
    Ok((train, test, split))
}

/// Per-channel affine fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// 1.0 for channels left unscaled.
    pub std: Vec<f64>,
    /// Channels with zero variance, which are left untouched.
    pub constant: Vec<usize>,
}

impl Standardizer {
    pub fn fit(train: &WindowedDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("cannot fit standardization on an empty dataset"));
        }
        let (n, c, w) = train.windows.dims3("standardize")?;
        let count = (n * w) as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![1.0; c];
        let mut constant = Vec::new();
        let x = train.windows.data();
        for ch in 0..c {
            let rows = (0..n).map(|i| &x[(i * c + ch) * w..][..w]);
            let m = rows.clone().flatten().sum::<f64>() / count;
            let v = rows.flatten().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            if v > 0.0 {
                mean[ch] = m;
                std[ch] = v.sqrt();
            } else {
                log::warn!("channel {ch} has zero variance in the training set; leaving it unscaled");
                constant.push(ch);
            }
        }
        Ok(Self { mean, std, constant })
    }

    pub fn apply(&self, ds: &WindowedDataset) -> Result<WindowedDataset> {
        let (_, c, w) = ds.windows.dims3("standardize")?;
        if c != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "standardize",
                left: ds.windows.shape().to_vec(),
                right: vec![self.mean.len()],
            });
        }
        let mut out = ds.clone();
        if w > 0 {
            for (k, row) in out.windows.data_mut().chunks_exact_mut(w).enumerate() {
                let ch = k % c;
                if self.constant.contains(&ch) {
                    continue;
                }
                let (m, s) = (self.mean[ch], self.std[ch]);
                row.iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }
}

/// Standardizes both sets with statistics of `train` only.
pub fn standardize(
    train: &WindowedDataset,
    test: &WindowedDataset,
) -> Result<(WindowedDataset, WindowedDataset, Standardizer)> {
    let s = Standardizer::fit(train)?;
    Ok((s.apply(train)?, s.apply(test)?, s))
}
