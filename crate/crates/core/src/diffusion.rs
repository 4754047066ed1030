//! Variance schedule, the forward noising map, and sample generation.
//!
//! Forward noising follows the weighted sum
//! `noisy = x * sqrt(beta[t]) + eps * sqrt(1 - beta[t])` literally. The
//! `cumulative` switch replaces `beta[t]` by the conventional product
//! `alpha_bar[t] = prod_{s <= t} (1 - beta[s])` for comparison runs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;
use crate::rng;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_MIN: f64 = 0.0001;
pub const DEFAULT_BETA_MAX: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// `beta[t - 1]` for steps `t = 1..=T`.
    beta: Vec<f64>,
    cumulative: bool,
    alpha_bar: Vec<f64>,
}

/// `beta[t] = beta_min + (t - 1) / (T - 1) * (beta_max - beta_min)` with the
/// endpoints stored exactly.
pub fn linear_beta_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Argument(format!("schedule needs T >= 2, got {steps}")));
    }
    if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
        return Err(Error::Argument(format!(
            "schedule needs 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let span = beta_max - beta_min;
    let denom = (steps - 1) as f64;
    let mut beta: Vec<f64> = (0..steps).map(|i| beta_min + i as f64 / denom * span).collect();
    beta[0] = beta_min;
    beta[steps - 1] = beta_max;
    let alpha_bar = beta
        .iter()
        .scan(1.0f64, |acc, b| {
            *acc *= 1.0 - b;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { beta, cumulative: false, alpha_bar })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        linear_beta_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn with_cumulative(mut self, on: bool) -> Self {
        self.cumulative = on;
        self
    }

    pub fn is_cumulative(&self) -> bool {
        self.cumulative
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `beta[t]` for 1-based `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Argument(format!("diffusion step {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    /// `(signal, noise)` coefficients at step `t`.
    pub fn coefficients(&self, t: usize) -> (f64, f64) {
        let w = if self.cumulative { self.alpha_bar[t - 1] } else { self.beta[t - 1] };
        (w.sqrt(), (1.0 - w).sqrt())
    }
}

/// Uniform step in `[1, T]`.
pub fn sample_step(rng: &mut impl Rng, steps: usize) -> usize {
    rng.random_range(1..=steps.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSample {
    pub noisy: Tensor,
    pub noise: Tensor,
    pub steps: Vec<usize>,
}

/// Noise `x: [B, 1, W]` at per-element steps with the given `noise`.
pub fn diffuse_with_noise(x: &Tensor, steps: &[usize], schedule: &NoiseSchedule, noise: Tensor) -> Result<DiffusionSample> {
    if x.ndim() != 3 || x.dim(0) != steps.len() {
        return Err(Error::Argument(format!(
            "forward diffusion needs [B, C, W] input with B = {} steps, got {:?}",
            steps.len(),
            x.shape()
        )));
    }
    if noise.shape() != x.shape() {
        return Err(Error::Argument(format!("noise shape {:?} differs from data {:?}", noise.shape(), x.shape())));
    }
    for &t in steps {
        schedule.check(t)?;
    }
    let per = x.len() / steps.len().max(1);
    let mut out = Vec::with_capacity(x.len());
    for (b, &t) in steps.iter().enumerate() {
        let (s, n) = schedule.coefficients(t);
        let xs = &x.data()[b * per..(b + 1) * per];
        let es = &noise.data()[b * per..(b + 1) * per];
        out.extend(xs.iter().zip(es).map(|(&xv, &ev)| (xv as f64 * s + ev as f64 * n) as f32));
    }
    Ok(DiffusionSample { noisy: Tensor::new(x.shape(), out)?, noise, steps: steps.to_vec() })
}

/// Noise `x` with fresh standard-normal `eps`.
pub fn forward_diffuse(x: &Tensor, steps: &[usize], schedule: &NoiseSchedule, rng: &mut impl Rng) -> Result<DiffusionSample> {
    let noise = Tensor::new(x.shape(), rng::normal_vec(rng, x.len()))?;
    diffuse_with_noise(x, steps, schedule, noise)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenerationMode {
    /// One denoiser call on pure noise at step `T`.
    SingleShot,
    /// Experimental: denoise at `T..=1`, re-noising between steps.
    Iterative,
}

impl GenerationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::SingleShot => "single",
            GenerationMode::Iterative => "iterative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" | "single-shot" => Some(GenerationMode::SingleShot),
            "iterative" => Some(GenerationMode::Iterative),
            _ => None,
        }
    }
}

fn check_conditioner(denoiser: &Denoiser, cond: &Tensor) -> Result<usize> {
    let cfg = denoiser.config();
    if cond.ndim() != 3 || cond.dim(1) != cfg.cond_channels || cond.dim(2) != cfg.window {
        return Err(Error::Argument(format!(
            "conditioner {:?} does not fit a {} denoiser expecting [B, {}, {}]",
            cond.shape(),
            denoiser.mode().as_str(),
            cfg.cond_channels,
            cfg.window
        )));
    }
    Ok(cond.dim(0))
}

/// `D(omega, f, T)` with `omega ~ N(0, 1)`.
pub fn generate_single_shot(denoiser: &Denoiser, cond: &Tensor, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Result<Tensor> {
    let b = check_conditioner(denoiser, cond)?;
    let w = denoiser.config().window;
    let omega = Tensor::new(&[b, 1, w], rng::normal_vec(rng, b * w))?;
    denoiser.predict(&omega, cond, &vec![schedule.steps(); b])
}

/// Start from noise; for `t = T..=1` denoise, then re-noise to `t - 1`.
pub fn generate_iterative(denoiser: &Denoiser, cond: &Tensor, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Result<Tensor> {
    let b = check_conditioner(denoiser, cond)?;
    let w = denoiser.config().window;
    let mut x = Tensor::new(&[b, 1, w], rng::normal_vec(rng, b * w))?;
    for t in (1..=schedule.steps()).rev() {
        x = denoiser.predict(&x, cond, &vec![t; b])?;
        if t > 1 {
            x = forward_diffuse(&x, &vec![t - 1; b], schedule, rng)?.noisy;
        }
    }
    Ok(x)
}

pub fn generate(
    mode: GenerationMode,
    denoiser: &Denoiser,
    cond: &Tensor,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    match mode {
        GenerationMode::SingleShot => generate_single_shot(denoiser, cond, schedule, rng),
        GenerationMode::Iterative => generate_iterative(denoiser, cond, schedule, rng),
    }
}
