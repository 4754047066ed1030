//! Encoder-decoder denoising network.
//!
//! Encoder: three blocks. Each block convolves the running signal, adds a
//! projected diffusion-step embedding, convolves the conditioner to the block
//! width, concatenates both along channels and applies ReLU. One max-pool
//! follows block 1. Decoder: nearest upsample x2, two transposed convs, and a
//! 1-wide output projection back to one channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{Element, Graph, Tensor, Var};
use crate::params::{self, ParamSet, ParamSpec};
use crate::statfeat::ConditionerMode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub window: usize,
    pub cond_channels: usize,
    pub channels: [usize; 3],
    pub step_dim: usize,
    pub kernel: usize,
}

impl DenoiserConfig {
    pub fn new(window: usize, cond_channels: usize) -> Self {
        Self { window, cond_channels, channels: [32, 64, 128], step_dim: 64, kernel: 9 }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Argument(format!("denoiser config: {m}")));
        if self.window < 2 || !self.window.is_multiple_of(2) {
            return fail(format!("window {} must be even and >= 2", self.window));
        }
        if self.kernel.is_multiple_of(2) {
            return fail(format!("kernel {} must be odd", self.kernel));
        }
        if self.step_dim == 0 || !self.step_dim.is_multiple_of(2) {
            return fail(format!("step embedding dim {} must be even and positive", self.step_dim));
        }
        if self.cond_channels == 0 || self.channels.contains(&0) {
            return fail("channel counts must be positive".into());
        }
        Ok(())
    }

    /// Parameter shapes in declaration (and checkpoint) order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let k = self.kernel;
        let f = self.cond_channels;
        let mut specs = Vec::new();
        let mut c_prev = 1;
        for (i, &c) in self.channels.iter().enumerate() {
            specs.push(ParamSpec::weight(format!("enc{i}.conv.w"), &[c, c_prev, k], c_prev * k));
            specs.push(ParamSpec::bias(format!("enc{i}.conv.b"), c));
            specs.push(ParamSpec::weight(format!("enc{i}.step_dense.w"), &[c, self.step_dim], self.step_dim));
            specs.push(ParamSpec::bias(format!("enc{i}.step_dense.b"), c));
            specs.push(ParamSpec::weight(format!("enc{i}.step_conv.w"), &[c, c, 1], c));
            specs.push(ParamSpec::bias(format!("enc{i}.step_conv.b"), c));
            specs.push(ParamSpec::weight(format!("enc{i}.cond_conv.w"), &[c, f, k], f * k));
            specs.push(ParamSpec::bias(format!("enc{i}.cond_conv.b"), c));
            c_prev = 2 * c;
        }
        let [c1, c2, _] = self.channels;
        specs.push(ParamSpec::weight("dec.deconv1.w", &[c_prev, c2, k], c_prev * k));
        specs.push(ParamSpec::bias("dec.deconv1.b", c2));
        specs.push(ParamSpec::weight("dec.deconv2.w", &[c2, c1, k], c2 * k));
        specs.push(ParamSpec::bias("dec.deconv2.b", c1));
        specs.push(ParamSpec::weight("dec.out.w", &[1, c1, 1], c1));
        specs.push(ParamSpec::bias("dec.out.b", 1));
        specs
    }
}

/// Sinusoidal embedding of integer steps: `[B, dim]`, sines then cosines.
pub fn step_embedding<T: Element>(steps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((t as f64 * f).sin(), (t as f64 * f).cos())).unzip();
        data.extend(s.into_iter().chain(c).map(T::from_f64));
    }
    Tensor::new(&[steps.len(), dim], data).expect("sized")
}

/// Record the denoiser forward pass on `g`; `p` are the parameter leaves in
/// [`DenoiserConfig::param_specs`] order.
pub fn forward<T: Element>(
    cfg: &DenoiserConfig,
    g: &mut Graph<T>,
    p: &[Var],
    noisy: Var,
    cond: Var,
    steps: &[usize],
) -> Result<Var> {
    let stage = |name: &str, e: crate::ndtensor::TensorError| Error::Argument(format!("denoiser {name}: {e}"));
    let b = steps.len();
    let (ns, cs) = (g.shape(noisy).to_vec(), g.shape(cond).to_vec());
    if ns != [b, 1, cfg.window] {
        return Err(Error::Argument(format!(
            "denoiser input: noisy shape {ns:?}, expected [{b}, 1, {}]",
            cfg.window
        )));
    }
    if cs != [b, cfg.cond_channels, cfg.window] {
        return Err(Error::Argument(format!(
            "denoiser input: conditioner shape {cs:?}, expected [{b}, {}, {}]",
            cfg.cond_channels, cfg.window
        )));
    }
    if p.len() != cfg.param_specs().len() {
        return Err(Error::Argument(format!("denoiser: {} parameter leaves supplied", p.len())));
    }
    let pad = cfg.kernel / 2;
    let emb = g.constant(step_embedding(steps, cfg.step_dim));
    let cond_half = g.maxpool1d(cond).map_err(|e| stage("conditioner pool", e))?;

    let mut h = noisy;
    let mut it = p.iter().copied();
    let mut next = || it.next().expect("count checked");
    for (i, &c) in cfg.channels.iter().enumerate() {
        let name = ["block1", "block2", "block3"][i];
        let (cw, cb, sdw, sdb, scw, scb, fw, fb) = (next(), next(), next(), next(), next(), next(), next(), next());
        let run = |g: &mut Graph<T>| -> std::result::Result<Var, crate::ndtensor::TensorError> {
            let hn = g.conv1d(h, cw, cb, 1, pad)?;
            let e = g.dense(emb, sdw, sdb)?;
            let e = g.reshape(e, &[b, c, 1])?;
            let e = g.conv1d(e, scw, scb, 1, 0)?;
            let hn = g.add_over_length(hn, e)?;
            let hc = g.conv1d(if i == 0 { cond } else { cond_half }, fw, fb, 1, pad)?;
            let cat = g.concat_channels(hn, hc)?;
            let out = g.relu(cat)?;
            if i == 0 {
                g.maxpool1d(out)
            } else {
                Ok(out)
            }
        };
        h = run(g).map_err(|e| stage(name, e))?;
    }
    let (d1w, d1b, d2w, d2b, ow, ob) = (next(), next(), next(), next(), next(), next());
    let decode = |g: &mut Graph<T>| -> std::result::Result<Var, crate::ndtensor::TensorError> {
        let u = g.upsample_nearest(h, 2)?;
        let d = g.deconv1d(u, d1w, d1b, 1, pad)?;
        let d = g.relu(d)?;
        let d = g.deconv1d(d, d2w, d2b, 1, pad)?;
        let d = g.relu(d)?;
        g.conv1d(d, ow, ob, 1, 0)
    };
    decode(g).map_err(|e| stage("decoder", e))
}

/// Trained (or freshly initialized) denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    mode: ConditionerMode,
    params: ParamSet,
}

impl Denoiser {
    pub fn init(config: DenoiserConfig, mode: ConditionerMode, rng: &mut impl rand::Rng) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::init(config.param_specs(), rng);
        Ok(Self { config, mode, params })
    }

    pub fn from_params(config: DenoiserConfig, mode: ConditionerMode, params: ParamSet) -> Result<Self> {
        config.validate()?;
        if params.specs() != config.param_specs().as_slice() {
            return Err(Error::Checkpoint("parameter layout does not match config".into()));
        }
        Ok(Self { config, mode, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn mode(&self) -> ConditionerMode {
        self.mode
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Forward pass without recording gradients.
    pub fn predict(&self, noisy: &Tensor, cond: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let p = self.params.to_graph(&mut g, false);
        let x = g.constant(noisy.detach());
        let c = g.constant(cond.detach());
        let out = forward(&self.config, &mut g, &p, x, c, steps)?;
        Ok(g.value(out).detach())
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let json = params::canonical_json(&self.config)?;
        Ok(params::encode_checkpoint(params::DENOISER_MAGIC, &json, self.mode.code(), &self.params))
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let d = params::decode_checkpoint(params::DENOISER_MAGIC, bytes)?;
        let config: DenoiserConfig =
            serde_json::from_str(&d.config_json).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let mode = ConditionerMode::from_code(d.mode)
            .ok_or_else(|| Error::Checkpoint(format!("unknown conditioner mode code {}", d.mode)))?;
        let params = ParamSet::from_flat(config.param_specs(), &d.params)?;
        Self::from_params(config, mode, params)
    }
}
