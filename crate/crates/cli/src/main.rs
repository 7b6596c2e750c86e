use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use easyens::data::{
    load_csv, load_dataset, manifest_classes, read_manifest, save_dataset, standardize, subject_split, synth_windows,
    Preprocess, SynthConfig, WindowedDataset,
};
use easyens::ensemble::{build, checkpoint_precision, load_checkpoint, save_checkpoint, AblationCode, ArchitectureSpec, EnsembleMode};
use easyens::train::{
    equivalence_check, evaluate_accuracy, run_ablation, run_trials, train, write_results_csv, write_summary_json, Preset,
    TrainConfig,
};
use easyens::variation::{Stage, Variationer};
use easyens::{Element, Precision};

#[derive(Parser)]
#[command(name = "easyens", version, about = "Grouped-convolution deep ensembles for sensor time series")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset and write it as a dataset cache.
    SynthData(SynthArgs),
    /// Train one bundle and save its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the test subjects of a dataset.
    Eval(EvalArgs),
    /// Run seeded trials and write per-trial CSV and summary JSON.
    Trials(TrialsArgs),
    /// Transplant ME into EE and compare outputs and gradients.
    EquivalenceCheck(EquivArgs),
    /// Run trials for each ablation code.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = easyens::data::SYNTH_SEED)]
    seed: u64,
    /// Generator settings as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    windows_per_recording: Option<usize>,
    /// Also write one CSV per recording plus manifest.json into this directory.
    #[arg(long)]
    export_csv: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset cache written by `synth-data`.
    #[arg(long, conflicts_with = "manifest")]
    data: Option<PathBuf>,
    /// JSON manifest of CSV recordings; paths are relative to its directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated class names for manifest labels (default: first-seen order).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long, default_value_t = 8)]
    n_train: usize,
    #[arg(long, default_value_t = 8)]
    n_test: usize,
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
    /// Seconds trimmed from both ends of each CSV recording.
    #[arg(long, default_value_t = 2.0)]
    trim: f64,
    #[arg(long, default_value_t = 256)]
    window: usize,
    #[arg(long, default_value_t = 256)]
    stride: usize,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Full training config as JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    /// bl, pe, me or ee.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// vgg8 or vgg-blocks-D.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    filter_multiplier: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    /// Input pipeline as a JSON list, e.g. '["mod", {"repeat": 4}]'.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    no_rotation: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint path; PE and ME write one file per member next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training config used for the checkpoint, when it had an input pipeline.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrialsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value = "results.csv")]
    out_csv: PathBuf,
    #[arg(long, default_value = "summary.json")]
    out_json: PathBuf,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value = "vgg8")]
    arch: String,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// layer, group or batch.
    #[arg(long, default_value = "layer")]
    norm: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "GGN,CGN,GG1,GLN,CL1")]
    codes: Vec<String>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value = "ablation.csv")]
    out_csv: PathBuf,
    #[arg(long, default_value = "ablation.json")]
    out_json: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Trials(a) => trials_cmd(a),
        Command::EquivalenceCheck(a) => equivalence_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.subjects {
        cfg.num_subjects = s;
    }
    if let Some(w) = a.windows_per_recording {
        cfg.windows_per_recording = w;
    }
    let ds = synth_windows(&cfg, a.seed)?;
    let meta = serde_json::json!({ "generator": cfg, "seed": a.seed });
    save_dataset(&ds, &a.out, meta)?;
    println!(
        "wrote {}: {} windows of shape ({}, {}), {} subjects, {} classes",
        a.out.display(),
        ds.len(),
        ds.channels(),
        ds.width(),
        ds.subject_ids().len(),
        ds.num_classes
    );
    if let Some(dir) = a.export_csv {
        export_csv(&cfg, a.seed, &dir)?;
        println!("exported CSV recordings and manifest.json to {}", dir.display());
    }
    Ok(())
}

fn export_csv(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let recs = easyens::data::synth_generate(cfg, seed)?;
    let mut manifest = Vec::new();
    for r in &recs {
        let name = format!("{}_class{}.csv", r.subject, r.label);
        let mut text = String::new();
        for i in 0..r.len() {
            let row: Vec<String> = r.channels.iter().map(|c| c[i].to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(dir.join(&name), text)?;
        manifest.push(serde_json::json!({
            "path": name,
            "subject": r.subject,
            "label": format!("class{}", r.label),
            "sample_rate": r.sample_rate,
            "modalities": r.layout.groups.iter()
                .map(|g| serde_json::json!({"name": g.name, "channels": g.channels.len()}))
                .collect::<Vec<_>>(),
        }));
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads the full dataset, splits by subject and standardizes with
/// training statistics.
fn load_split(d: &DataArgs) -> Result<(WindowedDataset, WindowedDataset)> {
    let ds = match (&d.data, &d.manifest) {
        (Some(p), None) => load_dataset(p).with_context(|| format!("loading dataset {}", p.display()))?.0,
        (None, Some(m)) => {
            let manifest = read_manifest(m)?;
            let classes = d.classes.clone().unwrap_or_else(|| manifest_classes(&manifest));
            let dir = m.parent().unwrap_or(Path::new("."));
            let recs = load_csv(dir, &manifest, &classes)?;
            let prep = Preprocess {
                trim_seconds: d.trim,
                window: d.window,
                stride: d.stride,
            };
            WindowedDataset::from_recordings(&recs, classes.len(), &prep)?
        }
        _ => bail!("pass either --data <cache> or --manifest <manifest.json>"),
    };
    if ds.is_empty() {
        bail!("dataset has no windows");
    }
    let (tr, te, split) = subject_split(&ds, d.n_train, d.n_test, d.split_seed)?;
    log::info!(
        "train subjects {:?}, test subjects {:?}",
        split.train_subjects,
        split.test_subjects
    );
    let (tr, te, _) = standardize(&tr, &te)?;
    Ok((tr, te))
}

fn parse_precision(s: &str) -> Result<Precision> {
    match s.to_ascii_lowercase().as_str() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => bail!("unknown precision {other:?} (expected f32 or f64)"),
    }
}

/// Config from `--config` or the preset, with flag overrides applied and
/// the architecture fitted to the data shape.
fn train_config(m: &ModelArgs, data: &WindowedDataset) -> Result<TrainConfig> {
    let preset: Preset = m.preset.parse()?;
    let (c, w, k) = (data.channels(), data.width(), data.num_classes);
    let mut cfg = match &m.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => {
            let mut spec = ArchitectureSpec::named(m.arch.as_deref().unwrap_or("vgg8"), c, w, k)?;
            if preset == Preset::Desk {
                spec = spec.with_filter_multiplier(0.5);
            }
            TrainConfig::preset(preset, spec)
        }
    };
    if let Some(arch) = &m.arch {
        let mut spec = ArchitectureSpec::named(arch, c, w, k)?;
        spec.filter_multiplier = cfg.ensemble.filter_multiplier;
        spec.ensemble_mode = cfg.ensemble.ensemble_mode;
        spec.n = cfg.ensemble.n;
        cfg.ensemble = spec;
    }
    if let Some(f) = m.filter_multiplier {
        cfg.ensemble.filter_multiplier = f;
    }
    if let Some(s) = &m.stages {
        let stages: Vec<Stage> = serde_json::from_str(s).context("parsing --stages")?;
        let layout = stages.contains(&Stage::Mod).then(|| data.layout.clone());
        cfg.augmentation = Some(Variationer::compose(stages, Default::default(), layout)?);
    }
    let mode = match &m.mode {
        Some(s) => s.parse::<EnsembleMode>()?,
        None => cfg.ensemble.ensemble_mode,
    };
    let piped_n = cfg.augmentation.as_ref().map(Variationer::total_n);
    let n = match (m.n, piped_n, mode) {
        (_, _, EnsembleMode::Baseline) => 1,
        (Some(n), Some(p), _) if n != p => bail!("--n {n} disagrees with the input pipeline, which produces N = {p}"),
        (Some(n), _, _) => n,
        (None, Some(p), _) => p,
        (None, None, _) if m.mode.is_some() || m.config.is_none() => 4,
        (None, None, _) => cfg.ensemble.n,
    };
    cfg.ensemble = cfg.ensemble.clone().with_mode(mode, n);
    cfg.ensemble.input_channels = match &cfg.augmentation {
        Some(v) if v.stages.first() == Some(&Stage::Mod) => data.layout.uniform_width,
        _ => c,
    };
    cfg.ensemble.input_width = w;
    cfg.ensemble.num_classes = k;
    if let Some(e) = m.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = m.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = m.lr {
        cfg.learning_rate = lr;
    }
    if let Some(s) = m.seed {
        cfg.seed = s;
    }
    if let Some(p) = &m.precision {
        cfg.precision = parse_precision(p)?;
    }
    if m.no_rotation {
        cfg.rotation = false;
    }
    cfg.validate(c).context("invalid configuration")?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (tr, te) = load_split(&a.data)?;
    let cfg = train_config(&a.model, &tr)?;
    match cfg.precision {
        Precision::F32 => train_and_save::<f32>(&cfg, &tr, &te, &a.out),
        Precision::F64 => train_and_save::<f64>(&cfg, &tr, &te, &a.out),
    }
}

fn train_and_save<T: Element>(cfg: &TrainConfig, tr: &WindowedDataset, te: &WindowedDataset, out: &Path) -> Result<()> {
    let mut bundle = build::<T>(&cfg.ensemble, cfg.seed)?;
    let result = train(&mut bundle, tr, te, cfg)?;
    let files = save_checkpoint(&bundle, out)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (_, te) = load_split(&a.data)?;
    let var = match &a.config {
        Some(p) => read_json::<TrainConfig>(p)?.variationer(),
        None => Variationer::identity(),
    };
    let acc = match checkpoint_precision(&a.checkpoint)? {
        Precision::F32 => eval_with::<f32>(&a.checkpoint, &te, var)?,
        Precision::F64 => eval_with::<f64>(&a.checkpoint, &te, var)?,
    };
    println!("test accuracy {acc:.4} on {} windows", te.len());
    Ok(())
}

fn eval_with<T: Element>(path: &Path, te: &WindowedDataset, var: Variationer) -> Result<f64> {
    let mut bundle = load_checkpoint::<T>(path, None)?;
    let var = if var.stages.is_empty() {
        Variationer::repeat(bundle.spec.model_input_channels() / bundle.spec.input_channels.max(1))
    } else {
        var
    };
    Ok(evaluate_accuracy(&mut bundle, te, &var)?)
}

fn trials_cmd(a: TrialsArgs) -> Result<()> {
    let (tr, te) = load_split(&a.data)?;
    let cfg = train_config(&a.model, &tr)?;
    let set = run_trials(&cfg, &tr, &te, a.trials)?;
    write_results_csv(&a.out_csv, &set.results)?;
    write_summary_json(&a.out_json, &set.summary)?;
    let s = &set.summary;
    println!(
        "{} N={}: {} trials, {} excluded, mean {}, 95% CI [{}, {}]",
        cfg.ensemble.ensemble_mode,
        cfg.ensemble.n,
        s.n_trials,
        s.n_excluded,
        fmt_opt(s.mean),
        fmt_opt(s.ci95_low),
        fmt_opt(s.ci95_high)
    );
    println!("wrote {} and {}", a.out_csv.display(), a.out_json.display());
    if s.failed {
        bail!("no trial converged (accuracy above {})", cfg.convergence_floor);
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn equivalence_cmd(a: EquivArgs) -> Result<()> {
    let norm = match a.norm.to_ascii_lowercase().as_str() {
        "layer" => easyens::layers::NormKind::Layer,
        "group" => easyens::layers::NormKind::Group,
        "batch" => easyens::layers::NormKind::Batch,
        other => bail!("unknown normalization {other:?} (expected layer, group or batch)"),
    };
    let spec = ArchitectureSpec::named(&a.arch, a.channels, a.width, a.classes)?.with_norm(norm);
    let report = equivalence_check(&spec, a.n, a.trials, a.tol, a.seed)?;
    println!("{report}");
    if !report.passed {
        bail!("deviation exceeds tolerance {:e}", a.tol);
    }
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let codes: Vec<AblationCode> = a.codes.iter().map(|c| c.parse()).collect::<Result<_, _>>()?;
    let (tr, te) = load_split(&a.data)?;
    let mut model = a.model.clone();
    model.mode = Some("ee".into());
    let cfg = train_config(&model, &tr)?;
    let entries = run_ablation(&cfg, &codes, &tr, &te, a.trials)?;
    let mut rows = Vec::new();
    println!("{:<5} {:>8} {:>8} {:>8} {:>17}", "code", "params", "trials", "mean", "95% CI");
    for e in &entries {
        let s = &e.summary;
        println!(
            "{:<5} {:>8} {:>8} {:>8} {:>17}",
            e.code.to_string(),
            e.params,
            s.n_trials,
            fmt_opt(s.mean),
            format!("[{}, {}]", fmt_opt(s.ci95_low), fmt_opt(s.ci95_high))
        );
        rows.extend(e.results.iter().cloned());
    }
    write_results_csv(&a.out_csv, &rows)?;
    let summaries: Vec<_> = entries
        .iter()
        .map(|e| serde_json::json!({"code": e.code, "params": e.params, "summary": e.summary}))
        .collect();
    write_summary_json(&a.out_json, &summaries)?;
    println!("wrote {} and {}", a.out_csv.display(), a.out_json.display());
    Ok(())
}
