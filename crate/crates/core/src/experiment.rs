//! Labeled-proportion sweep over generator variants, repeated over seeds and
//! subject folds, with report tables, overlay data and checkpoints.
//!
//! Each (fold, seed) pair is one job with its own rng streams; jobs run in
//! parallel and their outputs are merged in job order, so reports do not
//! depend on scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use crate::classifier::Classifier;
use crate::config::{Config, Variant};
use crate::denoiser::Denoiser;
use crate::diffusion::{generate_single_shot, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::{accuracy, aggregate_runs, macro_f1, overlay_ndjson, per_class_f1, MeanStd, OverlayPair, Table};
use crate::fsutil::write_atomic;
use crate::par;
use crate::rng;
use crate::signal::{stratified_subset, subject_split, SplitSpec, Window};
use crate::statfeat::{build_conditioner, ConditionerMode};
use crate::trainer::{confusion, finetune_classifier, init_classifier, pretrain_classifier, train_diffusion, BatchAudit};

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub fold: usize,
    pub proportion: f64,
    pub variant: Variant,
    pub seed_index: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub proportion: f64,
    pub variant: Variant,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub per_class_f1: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub config_text: String,
    pub runs: Vec<RunResult>,
    pub cells: Vec<CellSummary>,
    pub overlay: Vec<OverlayPair>,
    /// File name and checkpoint bytes.
    pub checkpoints: Vec<(String, Vec<u8>)>,
}

/// Rotate the subject list by `fold` test-set lengths and reassign the
/// original train/val/test counts.
pub fn fold_split(spec: &SplitSpec, fold: usize) -> SplitSpec {
    let all: Vec<String> = spec
        .train_subjects
        .iter()
        .chain(&spec.val_subjects)
        .chain(&spec.test_subjects)
        .cloned()
        .collect();
    if all.is_empty() {
        return spec.clone();
    }
    let shift = (fold * spec.test_subjects.len()) % all.len();
    let rotated: Vec<String> = all[shift..].iter().chain(&all[..shift]).cloned().collect();
    let (nt, nv) = (spec.train_subjects.len(), spec.val_subjects.len());
    SplitSpec {
        train_subjects: rotated[..nt].to_vec(),
        val_subjects: rotated[nt..nt + nv].to_vec(),
        test_subjects: rotated[nt + nv..].to_vec(),
        labeled_fraction: spec.labeled_fraction,
    }
}

fn prop_tag(p: f64) -> String {
    format!("p{p}")
}

struct JobOutput {
    runs: Vec<RunResult>,
    checkpoints: Vec<(String, Vec<u8>)>,
    overlay: Vec<OverlayPair>,
}

/// Denoisers trained so far in one job, keyed by mode and training set.
struct DmCache<'a> {
    cfg: &'a Config,
    seeded: Config,
    schedule: NoiseSchedule,
    val: &'a [Window],
    audit: &'a BatchAudit,
    trained: BTreeMap<(u8, Vec<u64>), Denoiser>,
}

impl DmCache<'_> {
    fn get(&mut self, mode: ConditionerMode, train: &[Window]) -> Result<Denoiser> {
        let key = (mode.code(), train.iter().map(|w| w.id).collect::<Vec<_>>());
        if let Some(d) = self.trained.get(&key) {
            return Ok(d.clone());
        }
        let tcfg = crate::trainer::TrainConfig { conditioner: mode, ..self.seeded.dm_train() };
        let (d, _) = train_diffusion(
            train,
            self.val,
            self.cfg.denoiser_config_for(mode),
            &self.schedule,
            &tcfg,
            self.cfg.n_classes,
            self.audit,
        )?;
        self.trained.insert(key, d.clone());
        Ok(d)
    }
}

fn run_job(cfg: &Config, windows: &[Window], fold: usize, seed_index: usize, audit: &BatchAudit) -> Result<JobOutput> {
    let seed = rng::child_seed(cfg.seed, "experiment-seed", seed_index as u64);
    let mut seeded = cfg.clone();
    seeded.seed = seed;
    let split = fold_split(&cfg.split, fold);
    let sets = subject_split(windows, &split, seed)?;
    if sets.train.is_empty() || sets.test.is_empty() {
        return Err(Error::Argument(format!("fold {fold}: train or test split has no windows")));
    }
    let schedule = cfg.schedule()?;
    let clf_cfg = cfg.classifier_config();
    let init = init_classifier(clf_cfg, seed)?;
    let clf_train = seeded.clf_train();
    let mut cache = DmCache { cfg, seeded: seeded.clone(), schedule: schedule.clone(), val: &sets.val, audit, trained: BTreeMap::new() };
    let keep_ckpt = cfg.all_checkpoints || seed_index == 0;
    let stem = format!("f{fold}-s{seed_index}");
    let mut out = JobOutput { runs: Vec::new(), checkpoints: Vec::new(), overlay: Vec::new() };

    for &p in &cfg.proportions {
        let labeled: Vec<Window> = stratified_subset(&sets.train, p, seed).into_iter().map(|i| sets.train[i].clone()).collect();
        for &variant in &cfg.variants {
            let generator = match variant {
                Variant::Baseline => None,
                Variant::SfDmFull => Some(("full".to_string(), cache.get(ConditionerMode::StatFeatures, &sets.train)?)),
                Variant::SfDmCorresp => Some((prop_tag(p), cache.get(ConditionerMode::StatFeatures, &labeled)?)),
                Variant::CcDm => Some((prop_tag(p), cache.get(ConditionerMode::ClassOneHot, &labeled)?)),
            };
            let start: Classifier = match &generator {
                None => init.clone(),
                Some((tag, dm)) => {
                    if keep_ckpt {
                        let name = format!("{stem}-dm-{}-{tag}.sfdm", dm.mode().as_str());
                        if !out.checkpoints.iter().any(|(n, _)| *n == name) {
                            out.checkpoints.push((name, dm.to_checkpoint()?));
                        }
                    }
                    pretrain_classifier(init.clone(), dm, &labeled, &sets.val, &schedule, &clf_train, audit)?.0
                }
            };
            let (clf, _) = finetune_classifier(start, &labeled, &sets.val, &clf_train, audit)?;
            let cm = confusion(&clf, &sets.test)?;
            if keep_ckpt {
                let mode = generator.as_ref().map(|(_, d)| d.mode());
                out.checkpoints.push((format!("{stem}-{}-{}.sfcl", variant.key(), prop_tag(p)), clf.to_checkpoint(mode)?));
            }
            out.runs.push(RunResult {
                fold,
                proportion: p,
                variant,
                seed_index,
                seed,
                accuracy: accuracy(&cm)?,
                macro_f1: macro_f1(&cm)?,
                per_class_f1: per_class_f1(&cm)?,
                confusion: cm.counts().to_vec(),
            });
        }
    }

    if fold == 0 && seed_index == 0 && cfg.overlay_per_class > 0 {
        let dm = cache.get(ConditionerMode::StatFeatures, &sets.train)?;
        out.overlay = overlay_pairs(&dm, &sets.train, cfg.n_classes, cfg.overlay_per_class, &schedule, seed)?;
    }
    Ok(out)
}

/// Up to `per_class` real windows per class, each paired with a window
/// generated from its own conditioner.
pub fn overlay_pairs(
    dm: &Denoiser,
    windows: &[Window],
    n_classes: usize,
    per_class: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<OverlayPair>> {
    let mut pairs = Vec::new();
    for c in 0..n_classes as u32 {
        for (i, w) in windows.iter().filter(|w| w.label == Some(c)).take(per_class).enumerate() {
            let cond = build_conditioner(w, dm.mode(), n_classes)?;
            let shape = [1, cond.dim(0), cond.dim(1)];
            let cond = cond.reshaped(&shape)?;
            let mut r = rng::stream(seed, "overlay", (c as u64) << 32 | i as u64);
            let synthetic = generate_single_shot(dm, &cond, schedule, &mut r)?;
            pairs.push(OverlayPair { class: c, real: w.values.clone(), synthetic: synthetic.into_data() });
        }
    }
    Ok(pairs)
}

/// Run every (fold, seed) job and aggregate.
pub fn run_experiment(cfg: &Config, windows: &[Window], audit: &BatchAudit) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.seeds * cfg.folds < 2 {
        return Err(Error::Argument("an experiment needs at least 2 runs per cell (seeds x folds)".into()));
    }
    if cfg.variants.is_empty() || cfg.proportions.is_empty() {
        return Err(Error::Argument("an experiment needs at least one variant and one proportion".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.folds).flat_map(|f| (0..cfg.seeds).map(move |s| (f, s))).collect();
    let outputs = par::map_ordered(jobs, |(f, s)| run_job(cfg, windows, f, s, audit));

    let mut report = ExperimentReport { fingerprint: cfg.fingerprint(), config_text: cfg.to_text(), ..Default::default() };
    for o in outputs {
        let o = o?;
        report.runs.extend(o.runs);
        report.checkpoints.extend(o.checkpoints);
        report.overlay.extend(o.overlay);
    }
    for &p in &cfg.proportions {
        for &v in &cfg.variants {
            let cell: Vec<&RunResult> = report.runs.iter().filter(|r| r.proportion == p && r.variant == v).collect();
            let acc: Vec<f64> = cell.iter().map(|r| r.accuracy).collect();
            let f1: Vec<f64> = cell.iter().map(|r| r.macro_f1).collect();
            let per_class = (0..cfg.n_classes)
                .map(|c| cell.iter().map(|r| r.per_class_f1[c]).sum::<f64>() / cell.len() as f64)
                .collect();
            report.cells.push(CellSummary {
                proportion: p,
                variant: v,
                accuracy: aggregate_runs(&acc)?,
                macro_f1: aggregate_runs(&f1)?,
                per_class_f1: per_class,
            });
        }
    }
    Ok(report)
}

fn join_f(xs: &[f64], digits: usize) -> String {
    xs.iter().map(|v| format!("{v:.digits$}")).collect::<Vec<_>>().join(";")
}

impl ExperimentReport {
    pub fn runs_table(&self) -> Table {
        let mut t = Table::new(&[
            "fold", "proportion", "variant", "seed_index", "seed", "accuracy", "macro_f1", "per_class_f1", "confusion", "config_fingerprint",
        ]);
        for r in &self.runs {
            t.push(vec![
                r.fold.to_string(),
                r.proportion.to_string(),
                r.variant.key().to_string(),
                r.seed_index.to_string(),
                r.seed.to_string(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.macro_f1),
                join_f(&r.per_class_f1, 6),
                r.confusion.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
                self.fingerprint.clone(),
            ]);
        }
        t
    }

    pub fn summary_csv(&self) -> Table {
        let mut t = Table::new(&[
            "proportion", "variant", "runs", "accuracy_mean", "accuracy_std", "macro_f1_mean", "macro_f1_std", "per_class_f1_mean",
        ]);
        for c in &self.cells {
            t.push(vec![
                c.proportion.to_string(),
                c.variant.key().to_string(),
                c.accuracy.n.to_string(),
                format!("{:.6}", c.accuracy.mean),
                format!("{:.6}", c.accuracy.std),
                format!("{:.6}", c.macro_f1.mean),
                format!("{:.6}", c.macro_f1.std),
                join_f(&c.per_class_f1, 4),
            ]);
        }
        t
    }

    pub fn summary_markdown(&self) -> String {
        let mut t = Table::new(&["proportion", "variant", "runs", "accuracy", "macro F1", "per-class F1"]);
        for c in &self.cells {
            t.push(vec![
                c.proportion.to_string(),
                c.variant.label().to_string(),
                c.accuracy.n.to_string(),
                c.accuracy.to_string(),
                c.macro_f1.to_string(),
                join_f(&c.per_class_f1, 4).replace(';', " / "),
            ]);
        }
        format!("config fingerprint: `{}`\n\n{}", self.fingerprint, t.to_markdown())
    }

    pub fn cell(&self, proportion: f64, variant: Variant) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.proportion == proportion && c.variant == variant)
    }

    /// Per-seed macro-F1 of `variant` at `proportion`, fold 0.
    pub fn macro_f1_by_seed(&self, proportion: f64, variant: Variant) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.fold == 0 && r.proportion == proportion && r.variant == variant)
            .map(|r| r.macro_f1)
            .collect()
    }

    /// Write tables, overlay, resolved config and checkpoints under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("config.txt"), self.config_text.as_bytes())?;
        write_atomic(&dir.join("runs.csv"), self.runs_table().to_csv().as_bytes())?;
        write_atomic(&dir.join("table.csv"), self.summary_csv().to_csv().as_bytes())?;
        write_atomic(&dir.join("table.md"), self.summary_markdown().as_bytes())?;
        write_atomic(&dir.join("overlay.ndjson"), overlay_ndjson(&self.overlay)?.as_bytes())?;
        for (name, bytes) in &self.checkpoints {
            write_atomic(&dir.join("checkpoints").join(name), bytes)?;
        }
        Ok(())
    }
}
