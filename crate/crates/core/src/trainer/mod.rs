//! Two-step training: the feature-conditioned denoiser first, then the
//! classifier, pretrained on generated windows and fine-tuned on real ones.
//!
//! Every stage runs epochs over its window set with early stopping on a
//! validation metric and hands back the best-epoch parameters. All random
//! draws come from [`crate::rng::stream`] keyed by stage and step, so a run is
//! fully determined by its config, seed, and data.

mod classifier;
mod diffusion;

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use classifier::{confusion, finetune_classifier, init_classifier, pretrain_classifier, train_baseline, ClassifierTrainer};
pub use diffusion::{train_diffusion, validation_mae, DiffusionTrainer};

use crate::diffusion::GenerationMode;
use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{Split, Window};
use crate::statfeat::ConditionerMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub conditioner: ConditionerMode,
    pub generation: GenerationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            lr: 2e-4,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            labeled_fraction: 0.2,
            conditioner: ConditionerMode::StatFeatures,
            generation: GenerationMode::SingleShot,
        }
    }
}

impl TrainConfig {
    /// `max_epochs == 0` is allowed and means "return the initial parameters".
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Argument("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return Err(Error::Argument(format!(
                "patience {} must be smaller than max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Index of the last epoch that ran.
    pub stop_epoch: Option<usize>,
    pub wall_time: Duration,
}

impl RunRecord {
    /// One JSON object per epoch, newline terminated.
    pub fn to_ndjson(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

/// Patience counter over a validation metric. A NaN never improves.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    goal: Goal,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize, goal: Goal) -> Self {
        Self { patience, goal, best: None }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        let better = match self.best {
            None => !metric.is_nan(),
            Some((_, b)) => match self.goal {
                Goal::Minimize => metric < b,
                Goal::Maximize => metric > b,
            },
        };
        if better {
            self.best = Some((epoch, metric));
            return Verdict::Improved;
        }
        let since = self.best.map_or(epoch + 1, |(e, _)| epoch - e);
        if since >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Wait
        }
    }
}

/// Counts gradient batches and watches for specific window ids. Shared by
/// reference across concurrently running stages.
#[derive(Debug, Default)]
pub struct BatchAudit {
    state: Mutex<AuditState>,
}

#[derive(Debug, Default)]
struct AuditState {
    batches: u64,
    windows: u64,
    watched: BTreeSet<u64>,
    hits: u64,
}

impl BatchAudit {
    pub fn watch(&self, id: u64) {
        self.state.lock().expect("audit lock").watched.insert(id);
    }

    pub fn record<'a>(&self, batch: impl IntoIterator<Item = &'a Window>) {
        let mut s = self.state.lock().expect("audit lock");
        s.batches += 1;
        for w in batch {
            s.windows += 1;
            if s.watched.contains(&w.id) {
                s.hits += 1;
            }
        }
    }

    pub fn batches(&self) -> u64 {
        self.state.lock().expect("audit lock").batches
    }

    pub fn windows(&self) -> u64 {
        self.state.lock().expect("audit lock").windows
    }

    /// Watched windows seen in any batch.
    pub fn hits(&self) -> u64 {
        self.state.lock().expect("audit lock").hits
    }
}

/// Reject any window tagged as validation or test data.
pub fn check_provenance(windows: &[Window]) -> Result<()> {
    match windows.iter().find(|w| matches!(w.split, Some(Split::Val | Split::Test))) {
        Some(w) => Err(Error::Leakage {
            window_id: w.id,
            split: w.split.expect("matched").to_string(),
        }),
        None => Ok(()),
    }
}

fn check_lengths(windows: &[Window], width: usize, what: &str) -> Result<()> {
    match windows.iter().find(|w| w.len() != width) {
        Some(w) => Err(Error::Argument(format!(
            "{what}: window of length {} from subject {} does not match model width {width}",
            w.len(),
            w.subject_id
        ))),
        None => Ok(()),
    }
}

/// Shuffled mini-batches of `0..n` for one epoch.
fn epoch_batches(seed: u64, purpose: &str, epoch: usize, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let perm = rng::permutation(&mut rng::stream(seed, purpose, epoch as u64), n);
    perm.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Attach epoch and step to a numeric failure.
fn numeric_context(stage: &'static str, epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| if e.is_numeric() { Error::NonFiniteLoss { stage, epoch, step } } else { e }
}

/// Drive epochs of `train_epoch` with early stopping on `validate`, keeping
/// a snapshot of the model at the best epoch. Without a validation metric
/// the training loss is monitored instead.
fn fit<M: Clone>(
    model: &mut M,
    cfg: &TrainConfig,
    goal: Goal,
    mut train_epoch: impl FnMut(&mut M, usize) -> Result<f64>,
    mut validate: impl FnMut(&M) -> Result<Option<f64>>,
) -> Result<RunRecord> {
    let start = std::time::Instant::now();
    let mut record = RunRecord::default();
    let mut stopper: Option<EarlyStopping> = None;
    let mut best = model.clone();
    for epoch in 0..cfg.max_epochs {
        let train_loss = train_epoch(model, epoch)?;
        let (metric, g) = match validate(model)? {
            Some(m) => (m, goal),
            None => (train_loss, Goal::Minimize),
        };
        let stopper = stopper.get_or_insert_with(|| EarlyStopping::new(cfg.patience, g));
        record.epochs.push(EpochRecord { epoch, train_loss, val_metric: metric });
        record.stop_epoch = Some(epoch);
        match stopper.observe(epoch, metric) {
            Verdict::Improved => {
                best = model.clone();
                record.best_epoch = Some(epoch);
            }
            Verdict::Wait => {}
            Verdict::Stop => break,
        }
    }
    *model = best;
    record.wall_time = start.elapsed();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_exactly_patience_epochs_after_best() {
        let mut s = EarlyStopping::new(3, Goal::Minimize);
        let trace = [1.0, 0.5, 0.6, 0.7, 0.5, 0.9];
        let verdicts: Vec<Verdict> = trace.iter().enumerate().map(|(e, &m)| s.observe(e, m)).collect();
        assert_eq!(verdicts, [Verdict::Improved, Verdict::Improved, Verdict::Wait, Verdict::Wait, Verdict::Stop, Verdict::Stop]);
        assert_eq!(s.best(), Some((1, 0.5)));
    }

    #[test]
    fn nan_never_improves() {
        let mut s = EarlyStopping::new(2, Goal::Maximize);
        assert_eq!(s.observe(0, f64::NAN), Verdict::Wait);
        assert_eq!(s.observe(1, 0.1), Verdict::Improved);
        assert_eq!(s.observe(2, f64::NAN), Verdict::Wait);
        assert_eq!(s.observe(3, f64::NAN), Verdict::Stop);
    }

    #[test]
    fn fit_returns_best_snapshot_not_last() {
        let cfg = TrainConfig { max_epochs: 50, patience: 4, ..TrainConfig::default() };
        let vals = [0.9, 0.4, 0.3, 0.35, 0.5, 0.6, 0.7, 0.8, 0.1];
        let mut model = 0usize;
        let rec = fit(&mut model, &cfg, Goal::Minimize, |m, e| {
            *m = e;
            Ok(1.0)
        }, |m| Ok(Some(vals[*m])))
        .unwrap();
        assert_eq!(model, 2);
        assert_eq!(rec.best_epoch, Some(2));
        assert_eq!(rec.stop_epoch, Some(6));
        assert!(rec.stop_epoch.unwrap() <= rec.best_epoch.unwrap() + cfg.patience + 1);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        cfg.validate().unwrap();
        let mut model = 7;
        let rec = fit(&mut model, &cfg, Goal::Maximize, |_, _| unreachable!(), |_| Ok(None)).unwrap();
        assert_eq!(model, 7);
        assert!(rec.epochs.is_empty() && rec.best_epoch.is_none());
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { patience: 200, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn provenance_rejects_held_out_windows() {
        let mut w = Window::new(vec![0.0; 4], Some(0), "a");
        assert!(check_provenance(std::slice::from_ref(&w)).is_ok());
        w.split = Some(Split::Test);
        assert!(matches!(check_provenance(&[w]), Err(Error::Leakage { .. })));
    }

    #[test]
    fn ndjson_lines() {
        let rec = RunRecord {
            epochs: vec![EpochRecord { epoch: 0, train_loss: 0.5, val_metric: 0.25 }],
            ..RunRecord::default()
        };
        assert_eq!(rec.to_ndjson(), "{\"epoch\":0,\"train_loss\":0.5,\"val_metric\":0.25}\n");
    }
}
