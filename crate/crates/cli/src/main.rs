//! `sfdm`: corpus synthesis, denoiser and classifier training, generation,
//! evaluation and the labeled-proportion experiment.
//!
//! Exit codes: 0 success, 2 configuration or checkpoint mismatch, 3 data or
//! I/O error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sfdm_core::classifier::Classifier;
use sfdm_core::config::{self, Config};
use sfdm_core::denoiser::Denoiser;
use sfdm_core::diffusion::generate;
use sfdm_core::error::{Error, Result};
use sfdm_core::eval::{accuracy, json_f32_array, macro_f1, per_class_f1};
use sfdm_core::experiment::run_experiment;
use sfdm_core::fsutil::write_atomic;
use sfdm_core::rng;
use sfdm_core::signal::{self, SplitSets, SyntheticCorpusSpec, Window};
use sfdm_core::statfeat::{conditioner_batch, ConditionerMode};
use sfdm_core::trainer::{self, BatchAudit};

#[derive(Parser)]
#[command(name = "sfdm", version, about = "Feature-guided diffusion pretraining for activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (`key=value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of recording CSVs.
    #[arg(long)]
    data: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `split.labeled_fraction` (and, for `experiment`, the
    /// proportion list).
    #[arg(long)]
    labeled_fraction: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as one CSV per subject.
    SynthData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on the train split.
    TrainDm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate windows per class from real conditioners.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain on generated windows and fine-tune, or train the real-only
    /// baseline.
    TrainClf {
        #[command(flatten)]
        common: Common,
        /// Denoiser checkpoint used for pretraining.
        #[arg(long, required_unless_present = "baseline")]
        dm: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, macro-F1 and confusion matrix on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Also write the metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full proportion sweep across variants, seeds and folds.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        return 4;
    }
    match e {
        Error::Data(_) | Error::Io { .. } => 3,
        _ => 2,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_config(common: &Common, experiment: bool) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::parse(&read_text(p)?)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(f) = common.labeled_fraction {
        cfg.set("split.labeled_fraction", &f.to_string())?;
        if experiment {
            cfg.set("experiment.proportions", &f.to_string())?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_windows(cfg: &Config, dir: &Path) -> Result<Vec<Window>> {
    let recordings = signal::load_csv_dir(dir)?;
    signal::window_all(&recordings, cfg.window, cfg.stride())
}

fn load_sets(cfg: &Config, dir: &Path) -> Result<SplitSets> {
    let windows = load_windows(cfg, dir)?;
    let sets = signal::subject_split(&windows, &cfg.split, cfg.seed)?;
    if sets.train.is_empty() {
        return Err(sfdm_core::error::DataError::Invalid(format!(
            "{}: no windows for the train subjects {:?}",
            dir.display(),
            cfg.split.train_subjects
        ))
        .into());
    }
    Ok(sets)
}

fn read_ckpt(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth_data(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => config::parse_corpus_spec(&read_text(p)?)?,
        None => SyntheticCorpusSpec::desk_default(),
    };
    for rec in signal::make_synthetic_corpus(&spec)? {
        write_atomic(&out.join(format!("{}.csv", rec.subject_id)), signal::recording_to_csv(&rec).as_bytes())?;
    }
    println!("wrote {} subjects x {} samples to {}", spec.n_subjects, spec.samples_per_subject(), out.display());
    Ok(())
}

fn train_dm(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common, false)?;
    let sets = load_sets(&cfg, &common.data)?;
    // Label-conditioned training can only use windows whose labels are available.
    let train = match cfg.conditioner {
        ConditionerMode::StatFeatures => &sets.train,
        ConditionerMode::ClassOneHot => &sets.labeled,
    };
    let schedule = cfg.schedule()?;
    let (dm, record) = trainer::train_diffusion(
        train,
        &sets.val,
        cfg.denoiser_config(),
        &schedule,
        &cfg.dm_train(),
        cfg.n_classes,
        &BatchAudit::default(),
    )?;
    write_atomic(out, &dm.to_checkpoint()?)?;
    write_atomic(&sidecar(out, ".ndjson"), record.to_ndjson().as_bytes())?;
    let best = record.best_epoch.and_then(|b| record.epochs.get(b));
    println!("config fingerprint {}", cfg.fingerprint());
    println!(
        "trained on {} windows; best epoch {}; validation MAE {}",
        train.len(),
        best.map_or("-".into(), |e| e.epoch.to_string()),
        best.map_or("-".into(), |e| format!("{:.6}", e.val_metric))
    );
    Ok(())
}

fn generate_cmd(
    ckpt: &Path,
    data: &Path,
    per_class: usize,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => Config::parse(&read_text(p)?)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dm = Denoiser::from_checkpoint(&read_ckpt(ckpt)?)?;
    let w = dm.config().window;
    let n_classes = match dm.mode() {
        ConditionerMode::ClassOneHot => dm.config().cond_channels,
        ConditionerMode::StatFeatures => cfg.n_classes,
    };
    let recordings = signal::load_csv_dir(data)?;
    let windows = signal::window_all(&recordings, w, if cfg.stride == 0 { w } else { cfg.stride })?;
    let schedule = cfg.schedule()?;

    let mut text = format!(
        "{{\"W\":{w},\"n_c\":{n_classes},\"mode\":\"{}\",\"seed\":{}}}\n",
        dm.mode().as_str(),
        cfg.seed
    );
    let mut missing = Vec::new();
    for c in 0..n_classes as u32 {
        let pool: Vec<&Window> = windows.iter().filter(|x| x.label == Some(c)).collect();
        if pool.is_empty() {
            missing.push(c);
            continue;
        }
        let mut pick = rng::stream(cfg.seed, "generate-pick", c as u64);
        let chosen: Vec<&Window> =
            (0..per_class).map(|_| pool[rng::index(&mut pick, pool.len())]).collect();
        if chosen.is_empty() {
            continue;
        }
        let cond = conditioner_batch(&chosen, dm.mode(), n_classes)?;
        let mut r = rng::stream(cfg.seed, "generate", c as u64);
        let synthetic = generate(cfg.generation, &dm, &cond, &schedule, &mut r)?;
        for row in synthetic.data().chunks(w) {
            text.push_str(&format!("{{\"class\":{c},\"values\":{}}}\n", json_f32_array(row)));
        }
    }
    if !missing.is_empty() {
        eprintln!("warning: no windows for classes {missing:?}; skipped");
    }
    write_atomic(out, text.as_bytes())?;
    println!("wrote {} rows to {}", text.lines().count() - 1, out.display());
    Ok(())
}

fn check_window(cfg: &Config, what: &str, ckpt_window: usize) -> Result<()> {
    if ckpt_window != cfg.window {
        return Err(Error::Checkpoint(format!(
            "{what} was trained with window {ckpt_window} but the config uses data.window={}",
            cfg.window
        )));
    }
    Ok(())
}

fn train_clf(common: &Common, dm: Option<&Path>, baseline: bool, out: &Path) -> Result<()> {
    let cfg = load_config(common, false)?;
    let sets = load_sets(&cfg, &common.data)?;
    let tcfg = cfg.clf_train();
    let audit = BatchAudit::default();
    let init = trainer::init_classifier(cfg.classifier_config(), cfg.seed)?;
    let (start, mode) = if baseline {
        (init, None)
    } else {
        let path = dm.ok_or_else(|| Error::Argument("--dm is required unless --baseline is given".into()))?;
        let dm = Denoiser::from_checkpoint(&read_ckpt(path)?)?;
        check_window(&cfg, "the denoiser checkpoint", dm.config().window)?;
        let (clf, record) =
            trainer::pretrain_classifier(init, &dm, &sets.labeled, &sets.val, &cfg.schedule()?, &tcfg, &audit)?;
        write_atomic(&sidecar(out, ".pretrain.ndjson"), record.to_ndjson().as_bytes())?;
        (clf, Some(dm.mode()))
    };
    let (clf, record) = trainer::finetune_classifier(start, &sets.labeled, &sets.val, &tcfg, &audit)?;
    write_atomic(out, &clf.to_checkpoint(mode)?)?;
    write_atomic(&sidecar(out, ".ndjson"), record.to_ndjson().as_bytes())?;
    println!("config fingerprint {}", cfg.fingerprint());
    println!("{} labeled windows; {} gradient batches", sets.labeled.len(), audit.batches());
    Ok(())
}

fn eval_cmd(common: &Common, ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common, false)?;
    let clf = Classifier::from_checkpoint(&read_ckpt(ckpt)?)?;
    check_window(&cfg, "the classifier checkpoint", clf.config().window)?;
    if clf.config().n_classes != cfg.n_classes {
        return Err(Error::Checkpoint(format!(
            "the classifier checkpoint has {} classes but the config uses data.classes={}",
            clf.config().n_classes,
            cfg.n_classes
        )));
    }
    let sets = load_sets(&cfg, &common.data)?;
    let cm = trainer::confusion(&clf, &sets.test)?;
    let (acc, f1, per) = (accuracy(&cm)?, macro_f1(&cm)?, per_class_f1(&cm)?);
    println!("config fingerprint {}", cfg.fingerprint());
    println!("test windows {}\naccuracy {acc:.4}\nmacro F1 {f1:.4}", cm.total());
    println!("per-class F1 {}", per.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
    print!("confusion (rows true, cols predicted)\n{cm}");
    if let Some(path) = out {
        let json = serde_json::json!({
            "accuracy": acc,
            "macro_f1": f1,
            "per_class_f1": per,
            "confusion": cm,
            "config_fingerprint": cfg.fingerprint(),
        });
        write_atomic(path, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn experiment_cmd(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common, true)?;
    let windows = load_windows(&cfg, &common.data)?;
    let report = run_experiment(&cfg, &windows, &BatchAudit::default())?;
    report.write(out)?;
    print!("{}", report.summary_markdown());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { spec, out } => synth_data(spec.as_deref(), &out),
        Command::TrainDm { common, out } => train_dm(&common, &out),
        Command::Generate { ckpt, data, per_class, out, config, seed } => {
            generate_cmd(&ckpt, &data, per_class, &out, config.as_deref(), seed)
        }
        Command::TrainClf { common, dm, baseline, out } => train_clf(&common, dm.as_deref(), baseline, &out),
        Command::Eval { common, ckpt, out } => eval_cmd(&common, &ckpt, out.as_deref()),
        Command::Experiment { common, out } => experiment_cmd(&common, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
