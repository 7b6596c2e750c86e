//! Training, evaluation, multi-seed trials and the ME/EE equivalence check.

mod adam;
mod equivalence;
mod trials;

use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::ensemble::{ArchitectureSpec, EnsembleMode, ForwardOptions, ModelBundle};
use crate::error::{Error, Result};
use crate::layers::argmax_rows;
use crate::rng::{stream, TAG_AUGMENT, TAG_SHUFFLE};
use crate::tape::Tape;
use crate::tensor::{Element, Precision, Tensor};
use crate::variation::{rotation_augment, MaskTensor, Variationer};

pub use self::adam::{adam_step, AdamConfig, AdamState};
pub use self::equivalence::{equivalence_check, EquivalenceReport, FamilyDeviation};
pub use self::trials::{
    run_ablation, run_trials, run_trials_with_threads, summarize, thread_cap, write_results_csv, write_summary_json,
    AblationEntry, Summary, TrialSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::invalid(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Input pipeline. Without one, the input is repeated to fill the
    /// model's input channels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Variationer>,
    /// Random axis shuffles and sign flips of every 3-axis triplet.
    #[serde(default = "default_true")]
    pub rotation: bool,
    pub ensemble: ArchitectureSpec,
    /// Trials at or below this test accuracy count as not converged.
    pub convergence_floor: f64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
}

fn default_true() -> bool {
    true
}

fn default_precision() -> Precision {
    Precision::F32
}

impl TrainConfig {
    pub fn preset(preset: Preset, ensemble: ArchitectureSpec) -> Self {
        let (epochs, batch_size) = match preset {
            Preset::Desk => (30, 128),
            Preset::Paper => (500, 1000),
        };
        Self {
            learning_rate: 1e-3,
            epochs,
            batch_size,
            seed: 0,
            augmentation: None,
            rotation: true,
            ensemble,
            convergence_floor: 0.5,
            precision: Precision::F32,
        }
    }

    /// Desk-scale VGG-8 at half width for `channels`-channel windows.
    pub fn desk_spec(channels: usize, width: usize, classes: usize) -> ArchitectureSpec {
        ArchitectureSpec::vgg8(channels, width, classes).with_filter_multiplier(0.5)
    }

    pub fn variationer(&self) -> Variationer {
        match &self.augmentation {
            Some(v) => v.clone(),
            None => Variationer::repeat(self.ensemble.model_input_channels() / self.ensemble.input_channels.max(1)),
        }
    }

    /// Checks the config against windows with `channels` raw channels.
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.convergence_floor) {
            return Err(Error::invalid("convergence floor must lie in [0, 1]"));
        }
        self.ensemble.validate()?;
        let var = self.variationer();
        var.validate()?;
        let produced = var.output_channels(channels);
        let wanted = self.ensemble.model_input_channels();
        if produced != wanted {
            return Err(Error::invalid(format!(
                "input pipeline turns {channels} channels into {produced}, but the {} model expects {wanted}",
                self.ensemble.ensemble_mode
            )));
        }
        if var.has_mask() && self.ensemble.ensemble_mode != EnsembleMode::Easy {
            return Err(Error::Unsupported(format!(
                "input masking is implemented for EE only, not {}",
                self.ensemble.ensemble_mode
            )));
        }
        if self.rotation && channels % 3 != 0 {
            return Err(Error::invalid(format!(
                "rotation needs 3-axis triplets but the data has {channels} channels; disable rotation"
            )));
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub seed: u64,
    pub mode: EnsembleMode,
    #[serde(rename = "N")]
    pub n: usize,
    pub params: usize,
    /// Epochs completed.
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub test_accuracy: f64,
    pub converged: bool,
    pub seconds: f64,
    pub backward_passes: usize,
}

/// Owns the optimizer state of one bundle and performs update steps.
pub struct Trainer<'a, T> {
    pub bundle: &'a mut ModelBundle<T>,
    pub adam: AdamConfig,
    states: Vec<AdamState<T>>,
    /// Total backward passes so far.
    pub backward_passes: usize,
}

impl<'a, T: Element> Trainer<'a, T> {
    pub fn new(bundle: &'a mut ModelBundle<T>, lr: f64) -> Self {
        let n_states = if bundle.mode() == EnsembleMode::Pure {
            bundle.models.len()
        } else {
            1
        };
        Self {
            bundle,
            adam: AdamConfig::new(lr),
            states: (0..n_states).map(|_| AdamState::new()).collect(),
            backward_passes: 0,
        }
    }

    /// One update on a prepared batch. PE takes one loss and one backward
    /// pass per member; every other mode takes a single loss on the merged
    /// logits. Returns the (mean) loss. A non-finite loss leaves the
    /// parameters untouched.
    pub fn step(&mut self, x: &Tensor<T>, labels: &[usize], mask: Option<&MaskTensor>, lambda: Option<f64>) -> Result<f64> {
        if self.bundle.mode() == EnsembleMode::Pure {
            return self.step_pure(x, labels);
        }
        let mask_t = mask.map(MaskTensor::to_tensor::<T>);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let opts = ForwardOptions {
            training: true,
            trainable: true,
            feature_mask: mask_t.as_ref(),
            lambda,
            trace: false,
        };
        let f = self.bundle.forward(&mut tape, xv, &opts)?;
        let loss_v = tape.cross_entropy(f.logits, labels)?;
        let loss = tape.value(loss_v).item().as_f64();
        if !loss.is_finite() {
            return Ok(loss);
        }
        tape.backward(loss_v)?;
        self.backward_passes += 1;
        let grads: Vec<Vec<T>> = f
            .models
            .iter()
            .flat_map(|m| m.params.iter())
            .map(|&v| tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()]))
            .collect();
        let mut params: Vec<&mut Tensor<T>> = self.bundle.models.iter_mut().flat_map(|m| m.params_mut()).collect();
        let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
        adam_step(&mut params, &grad_refs, &mut self.states[0], &self.adam)?;
        Ok(loss)
    }

    fn step_pure(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let c = self.bundle.spec.input_channels;
        let n = self.bundle.models.len();
        let mut total = 0.0;
        for p in 0..n {
            let mut tape = Tape::new();
            let xp = if n == 1 { x.clone() } else { x.channel_slice(p * c, (p + 1) * c)? };
            let xv = tape.constant(xp);
            let opts = ForwardOptions {
                training: true,
                trainable: true,
                lambda: Some(1.0),
                ..Default::default()
            };
            let model = &mut self.bundle.models[p];
            let f = model.forward(&mut tape, xv, &opts)?;
            let loss_v = tape.cross_entropy(f.logits, labels)?;
            let loss = tape.value(loss_v).item().as_f64();
            if !loss.is_finite() {
                return Ok(loss);
            }
            tape.backward(loss_v)?;
            self.backward_passes += 1;
            let grads: Vec<Vec<T>> = f
                .params
                .iter()
                .map(|&v| tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()]))
                .collect();
            let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(&mut model.params_mut(), &grad_refs, &mut self.states[p], &self.adam)?;
            total += loss;
        }
        Ok(total / n as f64)
    }
}

/// Windows `rows` of `ds` as a training batch: cast, rotated, varied.
pub fn training_batch<T: Element>(
    ds: &WindowedDataset,
    rows: &[usize],
    cfg: &TrainConfig,
    var: &Variationer,
    epoch: usize,
    batch: usize,
) -> Result<(Tensor<T>, Vec<usize>, Option<MaskTensor>)> {
    let mut rng = stream(cfg.seed, &[TAG_AUGMENT, epoch as u64, batch as u64]);
    let mut x = ds.windows.select_rows(rows).cast::<T>();
    if cfg.rotation {
        x = rotation_augment(&x, &mut rng)?;
    }
    let varied = var.apply(&x, true, &mut rng)?;
    let labels = rows.iter().map(|&i| ds.labels[i]).collect();
    Ok((varied.x, labels, varied.mask))
}

/// Shuffled window order of one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[TAG_SHUFFLE, epoch as u64]));
    idx
}

/// Trains `bundle` on `train` and scores it on `test`.
pub fn train<T: Element>(
    bundle: &mut ModelBundle<T>,
    train: &WindowedDataset,
    test: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrialResult> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    cfg.validate(train.channels())?;
    if bundle.spec != cfg.ensemble {
        return Err(Error::StructuralMismatch("bundle was not built from the config's ensemble spec".into()));
    }
    let start = Instant::now();
    let var = cfg.variationer();
    let lambda = var.training_lambda();
    let params = bundle.param_count();
    let mut trainer = Trainer::new(bundle, cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;
    'epochs: for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0;
        for (bi, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels, mask) = training_batch::<T>(train, rows, cfg, &var, epoch, bi)?;
            let loss = trainer.step(&x, &labels, mask.as_ref(), lambda)?;
            if !loss.is_finite() {
                log::warn!("seed {}: non-finite loss in epoch {epoch}; aborting", cfg.seed);
                diverged = true;
                epoch_losses.push(loss);
                break 'epochs;
            }
            sum += loss * rows.len() as f64;
            count += rows.len();
        }
        epoch_losses.push(sum / count as f64);
        log::debug!("seed {} epoch {epoch}: loss {:.4}", cfg.seed, sum / count as f64);
    }
    let backward_passes = trainer.backward_passes;
    let test_accuracy = if diverged { 0.0 } else { evaluate_accuracy(bundle, test, &var)? };
    Ok(TrialResult {
        trial_id: 0,
        seed: cfg.seed,
        mode: cfg.ensemble.ensemble_mode,
        n: cfg.ensemble.n,
        params,
        epochs: epoch_losses.len(),
        epoch_losses,
        test_accuracy,
        converged: !diverged && test_accuracy > cfg.convergence_floor,
        seconds: start.elapsed().as_secs_f64(),
        backward_passes,
    })
}

const EVAL_BATCH: usize = 256;

/// Inference logits for every window of `ds`, with the pipeline in
/// evaluation mode (augmentations and masks become repeats).
pub fn predict_dataset<T: Element>(bundle: &mut ModelBundle<T>, ds: &WindowedDataset, var: &Variationer) -> Result<Tensor<T>> {
    let mut rng = stream(0, &[TAG_AUGMENT]);
    let mut out = Vec::new();
    let mut k = 0;
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(EVAL_BATCH) {
        let x = ds.windows.select_rows(chunk).cast::<T>();
        let varied = var.apply(&x, false, &mut rng)?;
        let logits = bundle.predict(&varied.x)?;
        k = logits.shape()[1];
        out.extend_from_slice(logits.data());
    }
    Tensor::new(vec![ds.len(), k], out)
}

/// Fraction of argmax-correct rows.
pub fn accuracy_from_logits<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let pred = argmax_rows(logits);
    if pred.len() != labels.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

pub fn evaluate_accuracy<T: Element>(bundle: &mut ModelBundle<T>, ds: &WindowedDataset, var: &Variationer) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let logits = predict_dataset(bundle, ds, var)?;
    accuracy_from_logits(&logits, &ds.labels)
}
