use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::ensemble::{build, AblationCode, EnsembleMode};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, TAG_TRIAL};
use crate::tensor::{Element, Precision};

use super::{train, TrainConfig, TrialResult};

/// Mean, median and normal-approximation 95% interval over converged trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: serde_json::Value,
    pub n_trials: usize,
    pub n_excluded: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
    /// Every trial was excluded.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub results: Vec<TrialResult>,
    pub summary: Summary,
}

/// Non-converged trials are excluded from the statistics but still counted.
pub fn summarize(config: serde_json::Value, results: &[TrialResult]) -> Summary {
    let mut acc: Vec<f64> = results.iter().filter(|r| r.converged).map(|r| r.test_accuracy).collect();
    let n = acc.len();
    let n_excluded = results.len() - n;
    if n == 0 {
        return Summary {
            config,
            n_trials: results.len(),
            n_excluded,
            mean: None,
            median: None,
            ci95_low: None,
            ci95_high: None,
            failed: true,
        };
    }
    acc.sort_by(f64::total_cmp);
    let mean = acc.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        acc[n / 2]
    } else {
        (acc[n / 2 - 1] + acc[n / 2]) / 2.0
    };
    let half = if n > 1 {
        let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        config,
        n_trials: results.len(),
        n_excluded,
        mean: Some(mean),
        median: Some(median),
        ci95_low: Some(mean - half),
        ci95_high: Some(mean + half),
        failed: false,
    }
}

/// Trial parallelism cap from `EASYENS_THREADS`.
pub fn thread_cap() -> Option<usize> {
    std::env::var("EASYENS_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn run_one<T: Element>(cfg: &TrainConfig, train_ds: &WindowedDataset, test_ds: &WindowedDataset, trial: usize) -> Result<TrialResult> {
    let seed = derive_seed(cfg.seed, &[TAG_TRIAL, trial as u64]);
    let tcfg = TrainConfig { seed, ..cfg.clone() };
    let mut bundle = build::<T>(&tcfg.ensemble, seed)?;
    let mut r = train(&mut bundle, train_ds, test_ds, &tcfg)?;
    r.trial_id = trial;
    log::info!(
        "{} N={} trial {trial}: accuracy {:.4} in {:.1}s",
        r.mode,
        r.n,
        r.test_accuracy,
        r.seconds
    );
    Ok(r)
}

/// Runs `num_trials` trials that differ only in their seed, derived from
/// `cfg.seed` and the trial index, on at most `threads` worker threads.
pub fn run_trials_with_threads(
    cfg: &TrainConfig,
    train_ds: &WindowedDataset,
    test_ds: &WindowedDataset,
    num_trials: usize,
    threads: Option<usize>,
) -> Result<TrialSet> {
    if num_trials == 0 {
        return Err(Error::invalid("num_trials must be at least 1"));
    }
    cfg.validate(train_ds.channels())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<TrialResult> = pool.install(|| {
        (0..num_trials)
            .into_par_iter()
            .map(|i| match cfg.precision {
                Precision::F32 => run_one::<f32>(cfg, train_ds, test_ds, i),
                Precision::F64 => run_one::<f64>(cfg, train_ds, test_ds, i),
            })
            .collect::<Result<_>>()
    })?;
    let summary = summarize(serde_json::to_value(cfg)?, &results);
    Ok(TrialSet { results, summary })
}

/// [`run_trials_with_threads`] capped by `EASYENS_THREADS`.
pub fn run_trials(cfg: &TrainConfig, train_ds: &WindowedDataset, test_ds: &WindowedDataset, num_trials: usize) -> Result<TrialSet> {
    run_trials_with_threads(cfg, train_ds, test_ds, num_trials, thread_cap())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    trial_id: usize,
    mode: &'a str,
    #[serde(rename = "N")]
    n: usize,
    params: usize,
    epochs: usize,
    test_accuracy: f64,
    converged: bool,
    seconds: f64,
}

/// One row per trial, excluded trials included.
pub fn write_results_csv(path: &Path, results: &[TrialResult]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in results {
        w.serialize(CsvRow {
            trial_id: r.trial_id,
            mode: r.mode.code(),
            n: r.n,
            params: r.params,
            epochs: r.epochs,
            test_accuracy: r.test_accuracy,
            converged: r.converged,
            seconds: r.seconds,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_json<S: Serialize>(path: &Path, summary: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub code: AblationCode,
    pub params: usize,
    pub results: Vec<TrialResult>,
    pub summary: Summary,
}

/// Trials for every ablation code on the EE spec of `cfg`.
pub fn run_ablation(
    cfg: &TrainConfig,
    codes: &[AblationCode],
    train_ds: &WindowedDataset,
    test_ds: &WindowedDataset,
    num_trials: usize,
) -> Result<Vec<AblationEntry>> {
    codes
        .iter()
        .map(|&code| {
            let mut c = cfg.clone();
            c.ensemble.ensemble_mode = EnsembleMode::Easy;
            c.ensemble.ablation = (code != AblationCode::GGN).then_some(code);
            let params = crate::ensemble::closed_form_params(&c.ensemble);
            let set = run_trials(&c, train_ds, test_ds, num_trials)?;
            Ok(AblationEntry {
                code,
                params,
                results: set.results,
                summary: set.summary,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(acc: f64, converged: bool) -> TrialResult {
        TrialResult {
            trial_id: 0,
            seed: 0,
            mode: EnsembleMode::Baseline,
            n: 1,
            params: 10,
            epochs: 1,
            epoch_losses: vec![1.0],
            test_accuracy: acc,
            converged,
            seconds: 0.0,
            backward_passes: 1,
        }
    }

    #[test]
    fn single_trial_summary_is_the_trial() {
        let s = summarize(serde_json::Value::Null, &[result(0.8, true)]);
        assert_eq!((s.mean, s.median, s.ci95_low, s.ci95_high), (Some(0.8), Some(0.8), Some(0.8), Some(0.8)));
    }

    #[test]
    fn exclusion_and_failure() {
        let s = summarize(serde_json::Value::Null, &[result(0.9, true), result(0.4, false), result(0.7, true)]);
        assert_eq!((s.n_trials, s.n_excluded), (3, 1));
        assert!((s.mean.unwrap() - 0.8).abs() < 1e-12);
        assert!((s.median.unwrap() - 0.8).abs() < 1e-12);
        let f = summarize(serde_json::Value::Null, &[result(0.3, false)]);
        assert!(f.failed && f.mean.is_none());
    }
}
