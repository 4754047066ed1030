//! HAR CNN: three stride-2 convolutions with ReLU, one max-pool, five
//! fully connected ReLU layers and a linear output layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{Element, Graph, Tensor, Var};
use crate::params::{self, ParamSet, ParamSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub window: usize,
    pub n_classes: usize,
    pub channels: [usize; 3],
    pub kernel: usize,
    pub fc: [usize; 5],
}

impl ClassifierConfig {
    pub fn new(window: usize, n_classes: usize) -> Self {
        Self { window, n_classes, channels: [16, 32, 64], kernel: 5, fc: [256, 128, 64, 32, 16] }
    }

    fn conv_len(len: usize, kernel: usize) -> Option<usize> {
        let padded = len + 2 * (kernel / 2);
        (padded >= kernel).then(|| (padded - kernel) / 2 + 1)
    }

    /// Length after the three stride-2 convs and the pool.
    pub fn pooled_len(&self) -> usize {
        let mut len = self.window;
        for _ in 0..3 {
            match Self::conv_len(len, self.kernel) {
                Some(l) => len = l,
                None => return 0,
            }
        }
        len / 2
    }

    pub fn flatten_len(&self) -> usize {
        self.channels[2] * self.pooled_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Argument(format!("classifier needs >= 2 classes, got {}", self.n_classes)));
        }
        if self.kernel == 0 || self.channels.contains(&0) || self.fc.contains(&0) {
            return Err(Error::Argument("classifier widths must be positive".into()));
        }
        if self.flatten_len() == 0 {
            return Err(Error::Argument(format!(
                "window {} is too short for three stride-2 convolutions and a pool",
                self.window
            )));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let k = self.kernel;
        let mut specs = Vec::new();
        let mut c_prev = 1;
        for (i, &c) in self.channels.iter().enumerate() {
            specs.push(ParamSpec::weight(format!("conv{}.w", i + 1), &[c, c_prev, k], c_prev * k));
            specs.push(ParamSpec::bias(format!("conv{}.b", i + 1), c));
            c_prev = c;
        }
        let mut n_prev = self.flatten_len();
        for (j, &f) in self.fc.iter().enumerate() {
            specs.push(ParamSpec::weight(format!("fc{}.w", j + 1), &[f, n_prev], n_prev));
            specs.push(ParamSpec::bias(format!("fc{}.b", j + 1), f));
            n_prev = f;
        }
        specs.push(ParamSpec::weight("out.w", &[self.n_classes, n_prev], n_prev));
        specs.push(ParamSpec::bias("out.b", self.n_classes));
        specs
    }
}

/// Record the classifier on `g`; returns logits `[B, n_classes]`.
pub fn forward<T: Element>(cfg: &ClassifierConfig, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    if xs.len() != 3 || xs[1] != 1 || xs[2] != cfg.window {
        return Err(Error::Argument(format!("classifier input {xs:?}, expected [B, 1, {}]", cfg.window)));
    }
    if p.len() != cfg.param_specs().len() {
        return Err(Error::Argument(format!("classifier: {} parameter leaves supplied", p.len())));
    }
    let b = xs[0];
    let pad = cfg.kernel / 2;
    let mut h = x;
    let mut it = p.chunks_exact(2);
    for _ in 0..3 {
        let wb = it.next().expect("count checked");
        h = g.conv1d(h, wb[0], wb[1], 2, pad)?;
        h = g.relu(h)?;
    }
    h = g.maxpool1d(h)?;
    h = g.reshape(h, &[b, cfg.flatten_len()])?;
    for _ in 0..5 {
        let wb = it.next().expect("count checked");
        h = g.dense(h, wb[0], wb[1])?;
        h = g.relu(h)?;
    }
    let wb = it.next().expect("count checked");
    Ok(g.dense(h, wb[0], wb[1])?)
}

/// Argmax per row; ties go to the smallest class id.
pub fn argmax_rows(logits: &[f32], n_classes: usize) -> Vec<usize> {
    logits
        .chunks(n_classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    config: ClassifierConfig,
    params: ParamSet,
}

impl Classifier {
    pub fn init(config: ClassifierConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::init(config.param_specs(), rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ClassifierConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        if params.specs() != config.param_specs().as_slice() {
            return Err(Error::Checkpoint("parameter layout does not match config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let p = self.params.to_graph(&mut g, false);
        let xv = g.constant(x.detach());
        let out = forward(&self.config, &mut g, &p, xv)?;
        Ok(g.value(out).detach())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(x)?.data(), self.config.n_classes))
    }

    /// Checkpoint; `mode` records which generator pretrained it, if any.
    pub fn to_checkpoint(&self, mode: Option<crate::statfeat::ConditionerMode>) -> Result<Vec<u8>> {
        let json = params::canonical_json(&self.config)?;
        let code = mode.map_or(params::NO_MODE, |m| m.code());
        Ok(params::encode_checkpoint(params::CLASSIFIER_MAGIC, &json, code, &self.params))
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let d = params::decode_checkpoint(params::CLASSIFIER_MAGIC, bytes)?;
        let config: ClassifierConfig =
            serde_json::from_str(&d.config_json).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let params = ParamSet::from_flat(config.param_specs(), &d.params)?;
        Self::from_params(config, params)
    }
}
