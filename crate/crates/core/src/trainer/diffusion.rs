use super::{check_lengths, check_provenance, epoch_batches, fit, numeric_context, BatchAudit, Goal, RunRecord, TrainConfig};
use crate::denoiser::{self, Denoiser, DenoiserConfig};
use crate::diffusion::{diffuse_with_noise, sample_step, NoiseSchedule};
use crate::error::{Error, Result};
use crate::ndtensor::{AdamConfig, AdamState, Graph, Tensor};
use crate::rng;
use crate::signal::Window;
use crate::statfeat::conditioner_batch;

/// Reconstruction training of one denoiser: sample steps and noise, noise
/// the batch, and take an Adam step on the MAE against the clean windows.
#[derive(Clone, Debug)]
pub struct DiffusionTrainer {
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    adam: AdamState,
    n_classes: usize,
    seed: u64,
    steps_taken: u64,
}

fn stack_values(batch: &[&Window]) -> Result<Tensor> {
    let w = batch[0].len();
    let data: Vec<f32> = batch.iter().flat_map(|win| win.values.iter().copied()).collect();
    Ok(Tensor::new(&[batch.len(), 1, w], data)?)
}

impl DiffusionTrainer {
    pub fn new(denoiser: Denoiser, schedule: NoiseSchedule, lr: f64, n_classes: usize, seed: u64) -> Result<Self> {
        let expected = denoiser.mode().channels(n_classes);
        if denoiser.config().cond_channels != expected {
            return Err(Error::Argument(format!(
                "{} conditioner has {expected} channels but the denoiser expects {}",
                denoiser.mode().as_str(),
                denoiser.config().cond_channels
            )));
        }
        let adam = AdamState::new(AdamConfig::with_lr(lr), denoiser.params().tensors())?;
        Ok(Self { denoiser, schedule, adam, n_classes, seed, steps_taken: 0 })
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    pub fn into_denoiser(self) -> Denoiser {
        self.denoiser
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Graph value of the reconstruction loss, optionally with gradients.
    fn loss(&self, batch: &[&Window], rng: &mut rng::StreamRng, grads: bool) -> Result<(f64, Option<Vec<Vec<f32>>>)> {
        let x = stack_values(batch)?;
        let cond = conditioner_batch(batch, self.denoiser.mode(), self.n_classes)?;
        let steps: Vec<usize> = batch.iter().map(|_| sample_step(rng, self.schedule.steps())).collect();
        let noise = Tensor::new(x.shape(), rng::normal_vec(rng, x.len()))?;
        let noisy = diffuse_with_noise(&x, &steps, &self.schedule, noise)?.noisy;

        let mut g = Graph::<f32>::new();
        let p = self.denoiser.params().to_graph(&mut g, grads);
        let nv = g.constant(noisy);
        let cv = g.constant(cond);
        let out = denoiser::forward(self.denoiser.config(), &mut g, &p, nv, cv, &steps)?;
        let target = g.constant(x);
        let loss = g.mae(out, target)?;
        let value = g.value(loss).item()? as f64;
        if !value.is_finite() {
            return Err(crate::ndtensor::TensorError::NonFinite { op: "mae" }.into());
        }
        if !grads {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let gs = p
            .iter()
            .zip(self.denoiser.params().tensors())
            .map(|(v, t)| g.take_grad(*v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, Some(gs)))
    }

    /// One Adam step on `batch`; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[&Window]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty diffusion batch".into()));
        }
        let mut r = rng::stream(self.seed, "dm-step", self.steps_taken);
        let (value, grads) = self.loss(batch, &mut r, true)?;
        let grads = grads.expect("requested");
        self.adam.step(self.denoiser.params_mut().tensors_mut(), &grads)?;
        self.steps_taken += 1;
        Ok(value)
    }

    /// Mean reconstruction MAE over `windows` with steps and noise drawn
    /// from a fixed stream, so repeated calls are comparable.
    pub fn reconstruction_mae(&self, windows: &[&Window], batch: usize, stream_seed: u64) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Argument("no windows to evaluate".into()));
        }
        let mut r = rng::stream(stream_seed, "dm-eval", 0);
        let mut total = 0.0;
        for chunk in windows.chunks(batch.max(1)) {
            total += self.loss(chunk, &mut r, false)?.0 * chunk.len() as f64;
        }
        Ok(total / windows.len() as f64)
    }
}

/// Train a denoiser on `train` (labels unused in statistical mode), early
/// stopping on reconstruction MAE over `val`.
pub fn train_diffusion(
    train: &[Window],
    val: &[Window],
    config: DenoiserConfig,
    schedule: &NoiseSchedule,
    tcfg: &TrainConfig,
    n_classes: usize,
    audit: &BatchAudit,
) -> Result<(Denoiser, RunRecord)> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("diffusion training set is empty".into()));
    }
    check_provenance(train)?;
    check_lengths(train, config.window, "diffusion training")?;
    check_lengths(val, config.window, "diffusion validation")?;
    let denoiser = Denoiser::init(config, tcfg.conditioner, &mut rng::stream(tcfg.seed, "dm-init", 0))?;
    let mut trainer = DiffusionTrainer::new(denoiser, schedule.clone(), tcfg.lr, n_classes, tcfg.seed)?;
    let val_refs: Vec<&Window> = val.iter().collect();
    let val_seed = val_stream_seed(tcfg.seed);

    let record = fit(
        &mut trainer,
        tcfg,
        Goal::Minimize,
        |t, epoch| {
            let mut sum = 0.0;
            for (i, idx) in epoch_batches(tcfg.seed, "dm-shuffle", epoch, train.len(), tcfg.batch).iter().enumerate() {
                let batch: Vec<&Window> = idx.iter().map(|&j| &train[j]).collect();
                audit.record(batch.iter().copied());
                sum += t.step(&batch).map_err(numeric_context("diffusion", epoch, i))? * batch.len() as f64;
            }
            Ok(sum / train.len() as f64)
        },
        |t| {
            if val_refs.is_empty() {
                return Ok(None);
            }
            t.reconstruction_mae(&val_refs, tcfg.batch, val_seed).map(Some)
        },
    )?;
    Ok((trainer.into_denoiser(), record))
}

fn val_stream_seed(seed: u64) -> u64 {
    rng::child_seed(seed, "dm-val", 0)
}

/// The validation MAE [`train_diffusion`] monitors, for a trained denoiser.
pub fn validation_mae(
    denoiser: &Denoiser,
    val: &[Window],
    schedule: &NoiseSchedule,
    tcfg: &TrainConfig,
    n_classes: usize,
) -> Result<f64> {
    check_lengths(val, denoiser.config().window, "diffusion validation")?;
    let t = DiffusionTrainer::new(denoiser.clone(), schedule.clone(), tcfg.lr, n_classes, tcfg.seed)?;
    t.reconstruction_mae(&val.iter().collect::<Vec<_>>(), tcfg.batch, val_stream_seed(tcfg.seed))
}
