use super::{check_lengths, check_provenance, epoch_batches, fit, numeric_context, BatchAudit, Goal, RunRecord, TrainConfig};
use crate::classifier::{self, Classifier};
use crate::denoiser::Denoiser;
use crate::diffusion::{generate, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::{macro_f1, ConfusionMatrix};
use crate::ndtensor::{AdamConfig, AdamState, Graph, Tensor};
use crate::rng;
use crate::signal::Window;
use crate::statfeat::conditioner_batch;

/// Cross-entropy training of one classifier.
#[derive(Clone, Debug)]
pub struct ClassifierTrainer {
    classifier: Classifier,
    adam: AdamState,
}

impl ClassifierTrainer {
    pub fn new(classifier: Classifier, lr: f64) -> Result<Self> {
        let adam = AdamState::new(AdamConfig::with_lr(lr), classifier.params().tensors())?;
        Ok(Self { classifier, adam })
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn into_classifier(self) -> Classifier {
        self.classifier
    }

    /// One Adam step on `x: [B, 1, W]`; returns the loss before the update.
    /// `x` enters the graph as a constant, so nothing upstream of it trains.
    pub fn step(&mut self, x: Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let p = self.classifier.params().to_graph(&mut g, true);
        let xv = g.constant(x);
        let logits = classifier::forward(self.classifier.config(), &mut g, &p, xv)?;
        let loss = g.softmax_xent(logits, labels)?;
        let value = g.value(loss).item()? as f64;
        if !value.is_finite() {
            return Err(crate::ndtensor::TensorError::NonFinite { op: "softmax_xent" }.into());
        }
        g.backward(loss)?;
        let grads: Vec<Vec<f32>> = p
            .iter()
            .zip(self.classifier.params().tensors())
            .map(|(v, t)| g.take_grad(*v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        self.adam.step(self.classifier.params_mut().tensors_mut(), &grads)?;
        Ok(value)
    }
}

fn labels_of(windows: &[&Window], n_classes: usize) -> Result<Vec<usize>> {
    windows
        .iter()
        .map(|w| match w.label {
            Some(l) if (l as usize) < n_classes => Ok(l as usize),
            Some(l) => Err(Error::Argument(format!(
                "label {l} from subject {} is outside the classifier's {n_classes} classes",
                w.subject_id
            ))),
            None => Err(Error::Argument(format!("unlabeled window from subject {} in a labeled set", w.subject_id))),
        })
        .collect()
}

fn stack(windows: &[&Window]) -> Result<Tensor> {
    let w = windows[0].len();
    let data: Vec<f32> = windows.iter().flat_map(|x| x.values.iter().copied()).collect();
    Ok(Tensor::new(&[windows.len(), 1, w], data)?)
}

/// Confusion matrix of `clf` on `windows`, evaluated in chunks.
pub fn confusion(clf: &Classifier, windows: &[Window]) -> Result<ConfusionMatrix> {
    let n = clf.config().n_classes;
    let refs: Vec<&Window> = windows.iter().collect();
    let truth = labels_of(&refs, n)?;
    let mut predicted = Vec::with_capacity(windows.len());
    for chunk in refs.chunks(256) {
        predicted.extend(clf.predict(&stack(chunk)?)?);
    }
    ConfusionMatrix::from_predictions(&truth, &predicted, n)
}

fn check_labeled(windows: &[Window], clf: &Classifier, what: &str) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Argument(format!("{what}: labeled set is empty")));
    }
    check_provenance(windows)?;
    check_lengths(windows, clf.config().window, what)?;
    labels_of(&windows.iter().collect::<Vec<_>>(), clf.config().n_classes).map(drop)
}

fn val_macro_f1(clf: &Classifier, val: &[Window]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    macro_f1(&confusion(clf, val)?).map(Some)
}

/// Train `init` on windows generated by the frozen `denoiser` from the
/// conditioners of `labeled`, with their labels; early stopping on real
/// validation macro-F1.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_classifier(
    init: Classifier,
    denoiser: &Denoiser,
    labeled: &[Window],
    val: &[Window],
    schedule: &NoiseSchedule,
    tcfg: &TrainConfig,
    audit: &BatchAudit,
) -> Result<(Classifier, RunRecord)> {
    tcfg.validate()?;
    check_labeled(labeled, &init, "pretraining")?;
    if denoiser.config().window != init.config().window {
        return Err(Error::Argument(format!(
            "denoiser width {} differs from classifier width {}",
            denoiser.config().window,
            init.config().window
        )));
    }
    let n = init.config().n_classes;
    let mut trainer = ClassifierTrainer::new(init, tcfg.lr)?;
    let mut global = 0u64;
    let record = fit(
        &mut trainer,
        tcfg,
        Goal::Maximize,
        |t, epoch| {
            let mut sum = 0.0;
            for (i, idx) in epoch_batches(tcfg.seed, "pretrain-shuffle", epoch, labeled.len(), tcfg.batch).iter().enumerate() {
                let batch: Vec<&Window> = idx.iter().map(|&j| &labeled[j]).collect();
                let labels = labels_of(&batch, n)?;
                let cond = conditioner_batch(&batch, denoiser.mode(), n)?;
                let mut r = rng::stream(tcfg.seed, "pretrain-generate", global);
                global += 1;
                let ctx = numeric_context("pretraining", epoch, i);
                let synthetic = generate(tcfg.generation, denoiser, &cond, schedule, &mut r).map_err(&ctx)?;
                audit.record(batch.iter().copied());
                sum += t.step(synthetic, &labels).map_err(&ctx)? * batch.len() as f64;
            }
            Ok(sum / labeled.len() as f64)
        },
        |t| val_macro_f1(t.classifier(), val),
    )?;
    Ok((trainer.into_classifier(), record))
}

/// Cross-entropy on real labeled windows starting from `init`; early
/// stopping on validation macro-F1.
pub fn finetune_classifier(
    init: Classifier,
    labeled: &[Window],
    val: &[Window],
    tcfg: &TrainConfig,
    audit: &BatchAudit,
) -> Result<(Classifier, RunRecord)> {
    tcfg.validate()?;
    check_labeled(labeled, &init, "fine-tuning")?;
    let n = init.config().n_classes;
    let mut trainer = ClassifierTrainer::new(init, tcfg.lr)?;
    let record = fit(
        &mut trainer,
        tcfg,
        Goal::Maximize,
        |t, epoch| {
            let mut sum = 0.0;
            for (i, idx) in epoch_batches(tcfg.seed, "finetune-shuffle", epoch, labeled.len(), tcfg.batch).iter().enumerate() {
                let batch: Vec<&Window> = idx.iter().map(|&j| &labeled[j]).collect();
                let labels = labels_of(&batch, n)?;
                audit.record(batch.iter().copied());
                let x = stack(&batch)?;
                sum += t.step(x, &labels).map_err(numeric_context("fine-tuning", epoch, i))? * batch.len() as f64;
            }
            Ok(sum / labeled.len() as f64)
        },
        |t| val_macro_f1(t.classifier(), val),
    )?;
    Ok((trainer.into_classifier(), record))
}

/// Seeded fresh classifier trained only on real labeled windows.
pub fn train_baseline(
    config: crate::classifier::ClassifierConfig,
    labeled: &[Window],
    val: &[Window],
    tcfg: &TrainConfig,
    audit: &BatchAudit,
) -> Result<(Classifier, RunRecord)> {
    let init = init_classifier(config, tcfg.seed)?;
    finetune_classifier(init, labeled, val, tcfg, audit)
}

/// The seeded initial classifier shared by the baseline and the pretrained
/// variants of one run.
pub fn init_classifier(config: crate::classifier::ClassifierConfig, seed: u64) -> Result<Classifier> {
    Classifier::init(config, &mut rng::stream(seed, "clf-init", 0))
}
