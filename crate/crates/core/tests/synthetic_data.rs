//! The reference synthetic dataset is learnable by the baseline network and
//! out of reach of a linear classifier on raw windows.

use easyens::data::{standardize, subject_split, synth_windows, SynthConfig, WindowedDataset, SYNTH_SEED};
use easyens::ensemble::build;
use easyens::layers::Dense;
use easyens::train::{accuracy_from_logits, adam_step, train, AdamConfig, AdamState, Preset, TrainConfig};
use easyens::Tape;

fn reference() -> (WindowedDataset, WindowedDataset) {
    let ds = synth_windows(&SynthConfig::default(), SYNTH_SEED).unwrap();
    let (tr, te, _) = subject_split(&ds, 8, 8, 7).unwrap();
    let (tr, te, _) = standardize(&tr, &te).unwrap();
    (tr, te)
}

#[test]
fn baseline_reaches_ninety_percent_on_average() {
    let (tr, te) = reference();
    let spec = TrainConfig::desk_spec(3, 256, 6);
    let mut accs = Vec::new();
    for seed in 0..3 {
        let mut cfg = TrainConfig::preset(Preset::Desk, spec.clone());
        cfg.seed = seed;
        let mut bundle = build::<f32>(&spec, seed).unwrap();
        accs.push(train(&mut bundle, &tr, &te, &cfg).unwrap().test_accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean >= 0.90, "baseline accuracies {accs:?}");
}

#[test]
fn linear_classifier_stays_below_seventy_percent() {
    let (tr, te) = reference();
    let d = tr.channels() * tr.width();
    let xtr = tr.windows.reshape(&[tr.len(), d]).unwrap();
    let xte = te.windows.reshape(&[te.len(), d]).unwrap();
    let mut lin = Dense::<f64>::new(d, 6);
    let mut state = AdamState::new();
    let adam = AdamConfig::new(1e-3);
    for _ in 0..300 {
        let mut tape = Tape::new();
        let x = tape.constant(xtr.clone());
        let w = tape.param(lin.weight.clone());
        let b = tape.param(lin.bias.clone());
        let z = tape.dense(x, w, Some(b)).unwrap();
        let loss = tape.cross_entropy(z, &tr.labels).unwrap();
        tape.backward(loss).unwrap();
        let gw = tape.take_grad(w).unwrap();
        let gb = tape.take_grad(b).unwrap();
        adam_step(&mut [&mut lin.weight, &mut lin.bias], &[&gw, &gb], &mut state, &adam).unwrap();
    }
    let mut tape = Tape::new();
    let x = tape.constant(xte);
    let w = tape.constant(lin.weight.clone());
    let b = tape.constant(lin.bias.clone());
    let z = tape.dense(x, w, Some(b)).unwrap();
    let acc = accuracy_from_logits(tape.value(z), &te.labels).unwrap();
    assert!(acc < 0.7, "linear test accuracy {acc}");
}
