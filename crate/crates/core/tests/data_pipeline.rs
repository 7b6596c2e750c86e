use std::collections::BTreeSet;
use std::fs;

use easyens::data::{
    load_csv, load_dataset, manifest_classes, read_manifest, save_dataset, split_subjects, standardize, subject_split,
    synth_windows, Preprocess, SynthConfig, WindowedDataset,
};
use easyens::Error;

fn small_cfg() -> SynthConfig {
    SynthConfig {
        windows_per_recording: 2,
        ..SynthConfig::default()
    }
}

#[test]
fn identical_seeds_give_byte_identical_caches() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    save_dataset(&synth_windows(&small_cfg(), 42).unwrap(), &a, serde_json::json!({"seed": 42})).unwrap();
    save_dataset(&synth_windows(&small_cfg(), 42).unwrap(), &b, serde_json::json!({"seed": 42})).unwrap();
    save_dataset(&synth_windows(&small_cfg(), 43).unwrap(), &c, serde_json::json!({"seed": 42})).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let (ds, meta) = load_dataset(&a).unwrap();
    assert_eq!(ds, synth_windows(&small_cfg(), 42).unwrap());
    assert_eq!(meta["seed"], 42);
}

#[test]
fn random_splits_never_share_subjects() {
    let ds = synth_windows(&small_cfg(), 1).unwrap();
    for seed in 0..100 {
        let (train, test, split) = subject_split(&ds, 8, 8, seed).unwrap();
        assert!(split.train_subjects.is_disjoint(&split.test_subjects));
        let tr: BTreeSet<String> = train.subject_ids().into_iter().collect();
        let te: BTreeSet<String> = test.subject_ids().into_iter().collect();
        assert!(tr.is_disjoint(&te), "seed {seed}");
        assert_eq!((tr.len(), te.len()), (8, 8));
        assert_eq!(train.len() + test.len(), ds.len());
    }
    assert_eq!(split_subjects(&ds.subject_ids(), 8, 8, 5).unwrap(), split_subjects(&ds.subject_ids(), 8, 8, 5).unwrap());
    assert!(split_subjects(&ds.subject_ids(), 10, 8, 5).is_err());
}

#[test]
fn standardization_uses_training_statistics_only() {
    let ds = synth_windows(&small_cfg(), 2).unwrap();
    let (train, test, _) = subject_split(&ds, 8, 8, 0).unwrap();
    let (tr, te, s) = standardize(&train, &test).unwrap();
    let (n, c, w) = tr.windows.dims3("t").unwrap();
    for ch in 0..c {
        let vals: Vec<f64> = (0..n).flat_map(|i| tr.windows.data()[(i * c + ch) * w..][..w].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
    }
    // Refitting on the test set would change the statistics.
    let (_, _, s_test) = standardize(&test, &train).unwrap();
    assert_ne!(s.mean, s_test.mean);
    assert_eq!(te.windows.shape(), test.windows.shape());
}

fn write_csv_fixture(dir: &std::path::Path) {
    let rows = |len: usize, phase: f64| -> String {
        let mut s = String::from("ax,ay,az\n");
        for i in 0..len {
            let t = i as f64 * 0.1 + phase;
            s.push_str(&format!("{},{},{}\n", t.sin(), t.cos(), 0.5 * t.sin()));
        }
        s
    };
    fs::write(dir.join("s1_walk.csv"), rows(1000, 0.0)).unwrap();
    fs::write(dir.join("s2_walk.csv"), rows(1000, 1.0)).unwrap();
    fs::write(dir.join("s1_stay.csv"), rows(300, 2.0)).unwrap();
    let manifest = serde_json::json!([
        {"path": "s1_walk.csv", "subject": 1, "label": "walk", "sample_rate": 100.0,
         "modalities": [{"name": "acc", "channels": 3}]},
        {"path": "s2_walk.csv", "subject": "2", "label": "walk", "sample_rate": 100.0},
        {"path": "s1_stay.csv", "subject": 1, "label": "stay", "sample_rate": 100.0}
    ]);
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn csv_recordings_become_windows() {
    let dir = tempfile::tempdir().unwrap();
    write_csv_fixture(dir.path());
    let manifest = read_manifest(&dir.path().join("manifest.json")).unwrap();
    let classes = manifest_classes(&manifest);
    assert_eq!(classes.len(), 2);
    let recs = load_csv(dir.path(), &manifest, &classes).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!((recs[0].channel_count(), recs[0].len()), (3, 1000));

    // 1000 samples trimmed to 600 give two windows; the 300-sample
    // recording is dropped by the trim.
    let ds = WindowedDataset::from_recordings(&recs, classes.len(), &Preprocess::default()).unwrap();
    assert_eq!(ds.windows.shape(), &[4, 3, 256]);
    assert_eq!(ds.subject_ids().len(), 2);
}

#[test]
fn csv_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    write_csv_fixture(dir.path());
    let manifest = read_manifest(&dir.path().join("manifest.json")).unwrap();
    let only_walk = vec!["walk".to_string()];
    assert!(load_csv(dir.path(), &manifest, &only_walk).is_err());

    fs::write(dir.path().join("s2_walk.csv"), "ax,ay,az\n1,2,3\n4,5\n").unwrap();
    let classes = manifest_classes(&manifest);
    match load_csv(dir.path(), &manifest, &classes) {
        Err(Error::Parse { path, line, .. }) => {
            assert!(path.ends_with("s2_walk.csv"));
            assert_eq!(line, 3);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}
