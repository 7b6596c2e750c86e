//! Synthetic activity-like recordings.
//!
//! Each class is a periodic waveform family: a base frequency, a mix of
//! second and third harmonics, and an amplitude envelope. Every subject
//! carries its own tempo, gain, sensor orientation and harmonic phases, so
//! test subjects are never seen in training. The same temporal pattern is
//! projected onto all axes of a triplet with subject-specific gains and
//! signs, which keeps axis shuffles and sign flips label-preserving.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng, TAG_SYNTH};
use crate::variation::ModalityLayout;

use super::{Preprocess, RawRecording, WindowedDataset};

/// Seed of the reference synthetic dataset.
pub const SYNTH_SEED: u64 = 20240601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub classes: usize,
    pub channels: usize,
    pub width: usize,
    pub windows_per_recording: usize,
    pub sample_rate: f64,
    pub trim_seconds: f64,
    /// Lowest class base frequency in Hz.
    pub base_frequency: f64,
    /// Base frequency step between class pairs in Hz.
    pub frequency_step: f64,
    /// Relative spread of a subject's tempo around the class frequency.
    pub tempo_jitter: f64,
    /// Relative spread of a subject's signal amplitude.
    pub gain_jitter: f64,
    /// Spread of the class harmonic weights across subjects.
    pub harmonic_jitter: f64,
    /// Standard deviation of additive sensor noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subjects: 16,
            classes: 6,
            channels: 3,
            width: 256,
            windows_per_recording: 12,
            sample_rate: 100.0,
            trim_seconds: 2.0,
            base_frequency: 1.0,
            frequency_step: 0.9,
            tempo_jitter: 0.08,
            gain_jitter: 0.35,
            harmonic_jitter: 0.1,
            noise: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if self.num_subjects == 0 || self.channels == 0 || self.width == 0 || self.windows_per_recording == 0 {
            return Err(Error::invalid("synthetic counts must be positive"));
        }
        if !(self.sample_rate > 0.0) || self.trim_seconds < 0.0 || self.noise < 0.0 {
            return Err(Error::invalid("synthetic rates and magnitudes must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.tempo_jitter) || !(0.0..1.0).contains(&self.gain_jitter) {
            return Err(Error::invalid("jitter fractions must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            trim_seconds: self.trim_seconds,
            window: self.width,
            stride: self.width,
        }
    }

    pub fn layout(&self) -> ModalityLayout {
        if self.channels % 3 == 0 {
            let names: Vec<String> = (0..self.channels / 3).map(|i| format!("sensor{i}")).collect();
            ModalityLayout::triaxial(&names.iter().map(String::as_str).collect::<Vec<_>>())
        } else {
            ModalityLayout::single(self.channels)
        }
    }

    pub fn recording_len(&self) -> usize {
        self.windows_per_recording * self.width + 2 * (self.trim_seconds * self.sample_rate).round() as usize
    }
}

/// Waveform family of one class.
#[derive(Debug, Clone, Copy)]
struct Family {
    freq: f64,
    h2: f64,
    h3: f64,
    env_depth: f64,
    env_freq: f64,
}

/// Classes come in pairs sharing a base frequency; the members of a pair
/// differ in harmonic content and envelope only.
fn family(cfg: &SynthConfig, class: usize) -> Family {
    let freq = cfg.base_frequency + cfg.frequency_step * (class / 2) as f64;
    if class % 2 == 0 {
        Family {
            freq,
            h2: 0.0,
            h3: 0.45,
            env_depth: 0.0,
            env_freq: 0.0,
        }
    } else {
        Family {
            freq,
            h2: 0.55,
            h3: 0.0,
            env_depth: 0.5,
            env_freq: 0.35 * freq,
        }
    }
}

fn spread(rng: &mut Rng, frac: f64) -> f64 {
    if frac == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - frac..=1.0 + frac)
    }
}

/// Unit gain vector per triplet: a random orientation of the sensor.
fn orientation(rng: &mut Rng, channels: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(channels);
    while g.len() + 3 <= channels {
        let v: [f64; 3] = UnitSphere.sample(rng);
        // Keep every axis visibly involved.
        g.extend(v.iter().map(|a| a.signum() * (0.3 + 0.7 * a.abs())));
    }
    while g.len() < channels {
        g.push(if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    }
    g
}

/// One recording per subject and class, `subj00`, `subj01`, ...
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<RawRecording>> {
    cfg.validate()?;
    let len = cfg.recording_len();
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::invalid(e.to_string()))?;
    let layout = cfg.layout();
    let mut out = Vec::with_capacity(cfg.num_subjects * cfg.classes);
    for s in 0..cfg.num_subjects {
        let mut srng = stream(seed, &[TAG_SYNTH, s as u64]);
        let tempo = spread(&mut srng, cfg.tempo_jitter);
        let gain = spread(&mut srng, cfg.gain_jitter);
        let axes = orientation(&mut srng, cfg.channels);
        for c in 0..cfg.classes {
            let mut rng = stream(seed, &[TAG_SYNTH, s as u64, c as u64 + 1]);
            let fam = family(cfg, c);
            let f = fam.freq * tempo * spread(&mut rng, cfg.tempo_jitter / 2.0);
            let h2 = (fam.h2 + rng.random_range(-cfg.harmonic_jitter..=cfg.harmonic_jitter)).max(0.0);
            let h3 = (fam.h3 + rng.random_range(-cfg.harmonic_jitter..=cfg.harmonic_jitter)).max(0.0);
            let (p1, p2, p3, pe): (f64, f64, f64, f64) = (
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            );
            let mut channels = vec![Vec::with_capacity(len); cfg.channels];
            for i in 0..len {
                let t = i as f64 / cfg.sample_rate;
                let w = TAU * f * t;
                let env = 1.0 + fam.env_depth * (TAU * fam.env_freq * tempo * t + pe).sin();
                let v = gain * env * ((w + p1).sin() + h2 * (2.0 * w + p2).sin() + h3 * (3.0 * w + p3).sin());
                for (ch, a) in channels.iter_mut().zip(&axes) {
                    let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    ch.push(a * v + n);
                }
            }
            out.push(RawRecording::new(
                format!("subj{s:02}"),
                c,
                cfg.sample_rate,
                channels,
                Some(layout.clone()),
            )?);
        }
    }
    Ok(out)
}

/// Generated recordings, trimmed and windowed.
pub fn synth_windows(cfg: &SynthConfig, seed: u64) -> Result<WindowedDataset> {
    WindowedDataset::from_recordings(&synth_generate(cfg, seed)?, cfg.classes, &cfg.preprocess())
}
