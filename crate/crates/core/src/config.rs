//! Flat `key=value` run configuration.
//!
//! Every key has a default; a config file overrides any subset. Unknown keys
//! and duplicates are rejected. The canonical rendering lists every key in
//! sorted order and is what the fingerprint hashes, so two configs that
//! resolve to the same values share a fingerprint however they were written.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::classifier::ClassifierConfig;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::{linear_beta_schedule, GenerationMode, NoiseSchedule};
use crate::error::{ConfigError, Error, Result};
use crate::signal::{ClassWave, SplitSpec, SyntheticCorpusSpec};
use crate::statfeat::ConditionerMode;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Baseline,
    CcDm,
    SfDmCorresp,
    SfDmFull,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::CcDm, Variant::SfDmCorresp, Variant::SfDmFull];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::CcDm => "cc-dm",
            Variant::SfDmCorresp => "sf-dm-corresp",
            Variant::SfDmFull => "sf-dm-full",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::CcDm => "CC-DM",
            Variant::SfDmCorresp => "SF-DM[Corresp.P]",
            Variant::SfDmFull => "SF-DM[Proportion:1]",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == s)
    }
}

/// Optimizer and stopping settings of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub batch: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { batch: 128, lr: 2e-4, max_epochs: 200, patience: 20 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub window: usize,
    /// Zero means non-overlapping windows.
    pub stride: usize,
    pub n_classes: usize,
    pub split: SplitSpec,
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub cumulative: bool,
    pub denoiser_channels: [usize; 3],
    pub step_dim: usize,
    pub denoiser_kernel: usize,
    pub conditioner: ConditionerMode,
    pub classifier_channels: [usize; 3],
    pub classifier_kernel: usize,
    pub classifier_fc: [usize; 5],
    /// Denoiser training stage.
    pub dm: StageConfig,
    /// Classifier pretraining, fine-tuning and baseline stages.
    pub clf: StageConfig,
    pub generation: GenerationMode,
    pub seeds: usize,
    pub proportions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub folds: usize,
    pub overlay_per_class: usize,
    /// Write classifier checkpoints for every run instead of the first seed
    /// of each cell.
    pub all_checkpoints: bool,
}

impl Default for Config {
    fn default() -> Self {
        let subjects = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect();
        Self {
            seed: 0,
            window: 200,
            stride: 0,
            n_classes: 3,
            split: SplitSpec {
                train_subjects: subjects(&["s01", "s02"]),
                val_subjects: subjects(&["s03"]),
                test_subjects: subjects(&["s04"]),
                labeled_fraction: 0.2,
            },
            diffusion_steps: 50,
            beta_min: 0.0001,
            beta_max: 0.05,
            cumulative: false,
            denoiser_channels: [32, 64, 128],
            step_dim: 64,
            denoiser_kernel: 9,
            conditioner: ConditionerMode::StatFeatures,
            classifier_channels: [16, 32, 64],
            classifier_kernel: 5,
            classifier_fc: [256, 128, 64, 32, 16],
            dm: StageConfig::default(),
            clf: StageConfig::default(),
            generation: GenerationMode::SingleShot,
            seeds: 10,
            proportions: vec![0.2, 0.3, 0.4, 0.5, 1.0],
            variants: Variant::ALL.to_vec(),
            folds: 1,
            overlay_per_class: 2,
            all_checkpoints: false,
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn value_err(key: &str, detail: impl Into<String>) -> Error {
    ConfigError::Value { key: key.to_string(), detail: detail.into() }.into()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| value_err(key, format!("`{v}`: {e}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn fixed<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let xs: Vec<usize> = list(key, v)?;
    xs.try_into().map_err(|xs: Vec<usize>| value_err(key, format!("expected {N} values, got {}", xs.len())))
}

fn names(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(value_err(key, format!("`{v}` is not true/false"))),
    }
}

/// Parse `key=value` lines; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            detail: format!("expected key=value, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, detail: "empty key".into() }.into());
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Syntax { line: i + 1, detail: format!("duplicate key `{k}`") }.into());
        }
    }
    Ok(out)
}

impl Config {
    /// Every key with its canonical value.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("data.window", self.window.to_string());
        put("data.stride", self.stride.to_string());
        put("data.classes", self.n_classes.to_string());
        put("split.train", self.split.train_subjects.join(","));
        put("split.val", self.split.val_subjects.join(","));
        put("split.test", self.split.test_subjects.join(","));
        put("split.labeled_fraction", self.split.labeled_fraction.to_string());
        put("diffusion.T", self.diffusion_steps.to_string());
        put("diffusion.beta_min", self.beta_min.to_string());
        put("diffusion.beta_max", self.beta_max.to_string());
        put("diffusion.cumulative", self.cumulative.to_string());
        put("denoiser.channels", join(&self.denoiser_channels));
        put("denoiser.step_dim", self.step_dim.to_string());
        put("denoiser.kernel", self.denoiser_kernel.to_string());
        put("denoiser.conditioner", self.conditioner.as_str().to_string());
        put("classifier.channels", join(&self.classifier_channels));
        put("classifier.kernel", self.classifier_kernel.to_string());
        put("classifier.fc", join(&self.classifier_fc));
        for (prefix, s) in [("dm", &self.dm), ("train", &self.clf)] {
            put(&format!("{prefix}.batch"), s.batch.to_string());
            put(&format!("{prefix}.lr"), s.lr.to_string());
            put(&format!("{prefix}.max_epochs"), s.max_epochs.to_string());
            put(&format!("{prefix}.patience"), s.patience.to_string());
        }
        put("train.generation", self.generation.as_str().to_string());
        put("experiment.seeds", self.seeds.to_string());
        put("experiment.proportions", join(&self.proportions));
        put("experiment.variants", self.variants.iter().map(|v| v.key()).collect::<Vec<_>>().join(","));
        put("experiment.folds", self.folds.to_string());
        put("experiment.overlay_per_class", self.overlay_per_class.to_string());
        put("experiment.all_checkpoints", self.all_checkpoints.to_string());
        m
    }

    /// Apply one override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "data.window" => self.window = num(key, v)?,
            "data.stride" => self.stride = num(key, v)?,
            "data.classes" => self.n_classes = num(key, v)?,
            "split.train" => self.split.train_subjects = names(v),
            "split.val" => self.split.val_subjects = names(v),
            "split.test" => self.split.test_subjects = names(v),
            "split.labeled_fraction" => self.split.labeled_fraction = num(key, v)?,
            "diffusion.T" => self.diffusion_steps = num(key, v)?,
            "diffusion.beta_min" => self.beta_min = num(key, v)?,
            "diffusion.beta_max" => self.beta_max = num(key, v)?,
            "diffusion.cumulative" => self.cumulative = boolean(key, v)?,
            "denoiser.channels" => self.denoiser_channels = fixed(key, v)?,
            "denoiser.step_dim" => self.step_dim = num(key, v)?,
            "denoiser.kernel" => self.denoiser_kernel = num(key, v)?,
            "denoiser.conditioner" => {
                self.conditioner =
                    ConditionerMode::parse(v).ok_or_else(|| value_err(key, format!("`{v}` is not stat or onehot")))?
            }
            "classifier.channels" => self.classifier_channels = fixed(key, v)?,
            "classifier.kernel" => self.classifier_kernel = num(key, v)?,
            "classifier.fc" => self.classifier_fc = fixed(key, v)?,
            "dm.batch" => self.dm.batch = num(key, v)?,
            "dm.lr" => self.dm.lr = num(key, v)?,
            "dm.max_epochs" => self.dm.max_epochs = num(key, v)?,
            "dm.patience" => self.dm.patience = num(key, v)?,
            "train.batch" => self.clf.batch = num(key, v)?,
            "train.lr" => self.clf.lr = num(key, v)?,
            "train.max_epochs" => self.clf.max_epochs = num(key, v)?,
            "train.patience" => self.clf.patience = num(key, v)?,
            "train.generation" => {
                self.generation =
                    GenerationMode::parse(v).ok_or_else(|| value_err(key, format!("`{v}` is not single or iterative")))?
            }
            "experiment.seeds" => self.seeds = num(key, v)?,
            "experiment.proportions" => self.proportions = list(key, v)?,
            "experiment.variants" => {
                self.variants = names(v)
                    .iter()
                    .map(|n| Variant::parse(n).ok_or_else(|| value_err(key, format!("unknown variant `{n}`"))))
                    .collect::<Result<_>>()?
            }
            "experiment.folds" => self.folds = num(key, v)?,
            "experiment.overlay_per_class" => self.overlay_per_class = num(key, v)?,
            "experiment.all_checkpoints" => self.all_checkpoints = boolean(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string()).into()),
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Keys whose resolved values differ.
    pub fn diff(&self, other: &Config) -> Vec<String> {
        let (a, b) = (self.to_kv(), other.to_kv());
        a.iter().filter(|(k, v)| b.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| -> Result<()> { Err(ConfigError::Invalid(m).into()) };
        if self.n_classes < 2 {
            return invalid(format!("data.classes must be >= 2, got {}", self.n_classes));
        }
        self.split.validate()?;
        if self.split.train_subjects.is_empty() || self.split.test_subjects.is_empty() {
            return invalid("split.train and split.test need at least one subject".into());
        }
        self.schedule()?;
        self.denoiser_config().validate()?;
        self.classifier_config().validate()?;
        for (name, s) in [("dm", &self.dm), ("train", &self.clf)] {
            self.stage(s).validate().map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        if self.seeds == 0 {
            return invalid("experiment.seeds must be >= 1".into());
        }
        if let Some(p) = self.proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return invalid(format!("proportion {p} must lie in (0, 1]"));
        }
        if self.folds == 0 {
            return invalid("experiment.folds must be >= 1".into());
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        if self.stride == 0 {
            self.window
        } else {
            self.stride
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(linear_beta_schedule(self.diffusion_steps, self.beta_min, self.beta_max)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?
            .with_cumulative(self.cumulative))
    }

    pub fn denoiser_config_for(&self, mode: ConditionerMode) -> DenoiserConfig {
        DenoiserConfig {
            window: self.window,
            cond_channels: mode.channels(self.n_classes),
            channels: self.denoiser_channels,
            step_dim: self.step_dim,
            kernel: self.denoiser_kernel,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        self.denoiser_config_for(self.conditioner)
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            window: self.window,
            n_classes: self.n_classes,
            channels: self.classifier_channels,
            kernel: self.classifier_kernel,
            fc: self.classifier_fc,
        }
    }

    fn stage(&self, s: &StageConfig) -> TrainConfig {
        TrainConfig {
            batch: s.batch,
            lr: s.lr,
            max_epochs: s.max_epochs,
            patience: s.patience,
            seed: self.seed,
            labeled_fraction: self.split.labeled_fraction,
            conditioner: self.conditioner,
            generation: self.generation,
        }
    }

    pub fn dm_train(&self) -> TrainConfig {
        self.stage(&self.dm)
    }

    pub fn clf_train(&self) -> TrainConfig {
        self.stage(&self.clf)
    }
}

/// `corpus.*` keys of a synthetic corpus description. Classes are given as
/// `corpus.class.<i>=freq,amplitude,offset,noise` with contiguous indices.
pub fn parse_corpus_spec(text: &str) -> Result<SyntheticCorpusSpec> {
    let mut spec = SyntheticCorpusSpec::desk_default();
    let mut classes: BTreeMap<usize, ClassWave> = BTreeMap::new();
    for (k, v) in parse_kv(text)? {
        match k.as_str() {
            "corpus.subjects" => spec.n_subjects = num(&k, &v)?,
            "corpus.windows_per_class" => spec.windows_per_class_per_subject = num(&k, &v)?,
            "corpus.window" => spec.window = num(&k, &v)?,
            "corpus.sample_rate" => spec.sample_rate = num(&k, &v)?,
            "corpus.seed" => spec.seed = num(&k, &v)?,
            _ => {
                let idx = k
                    .strip_prefix("corpus.class.")
                    .and_then(|i| i.parse::<usize>().ok())
                    .ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
                let p: Vec<f64> = list(&k, &v)?;
                let [freq, amplitude, offset, noise] =
                    p.try_into().map_err(|_| value_err(&k, "expected freq,amplitude,offset,noise"))?;
                classes.insert(idx, ClassWave { freq, amplitude, offset, noise });
            }
        }
    }
    if !classes.is_empty() {
        if classes.keys().copied().ne(0..classes.len()) {
            return Err(ConfigError::Invalid("corpus.class.<i> indices must run 0, 1, 2, ...".into()).into());
        }
        spec.classes = classes.into_values().collect();
    }
    spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(spec)
}

pub fn corpus_spec_text(spec: &SyntheticCorpusSpec) -> String {
    let mut out = format!(
        "corpus.subjects={}\ncorpus.windows_per_class={}\ncorpus.window={}\ncorpus.sample_rate={}\ncorpus.seed={}\n",
        spec.n_subjects, spec.windows_per_class_per_subject, spec.window, spec.sample_rate, spec.seed
    );
    for (i, c) in spec.classes.iter().enumerate() {
        out.push_str(&format!("corpus.class.{i}={},{},{},{}\n", c.freq, c.amplitude, c.offset, c.noise));
    }
    out
}
