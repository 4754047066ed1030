//! Central finite-difference checks of the tape gradients, in f64.
//!
//! [`op_suite`] covers every differentiable graph operation and
//! [`network_suite`] both networks on toy sizes. Each entry reports a
//! norm-wise relative error: `|analytic - numeric| / max(|analytic|, |numeric|)`.

use rand::Rng;

use crate::classifier::{self, ClassifierConfig};
use crate::denoiser::{self, DenoiserConfig};
use crate::ndtensor::{Graph, Tensor, Var};
use crate::params::ParamSet;
use crate::rng;

/// Small enough that no ReLU, pool or |.| kink is crossed by the suites'
/// inputs; f64 keeps rounding error far below the tolerances.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub rel_error: f64,
    pub checked: usize,
}

/// Compare tape gradients of the scalar built by `build` with central
/// differences, over every coordinate of every input.
pub fn check_grads<F>(name: &str, inputs: &[Tensor<f64>], build: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item().expect("scalar output")
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).expect("scalar output");
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default()).collect();

    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i].get(j).copied().unwrap_or(0.0);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            checked += 1;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt()).max(1e-12);
    GradReport { name: name.to_string(), rel_error: diff2.sqrt() / scale, checked }
}

/// Seeded values uniform in [-1, 1).
pub fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "gradcheck", 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Weighted sum with fixed weights, so every output element matters.
fn reduce(g: &mut Graph<f64>, v: Var) -> Var {
    let n = g.value(v).len();
    let w = uniform(&[n], 999);
    g.dot_const(v, w.data()).expect("length matches")
}

/// Push values away from zero so the ReLU kink stays out of reach.
fn off_kink(t: Tensor<f64>) -> Tensor<f64> {
    let shape = t.shape().to_vec();
    let data = t.data().iter().map(|&v| if v.abs() < 0.05 { v + 0.2 } else { v }).collect();
    Tensor::new(&shape, data).expect("sized")
}

/// Every differentiable operation, including strided and padded variants.
pub fn op_suite() -> Vec<GradReport> {
    let mut out = Vec::new();
    for (s, p) in [(1, 1), (2, 2), (3, 0)] {
        let ins = [uniform(&[2, 3, 11], 1), uniform(&[4, 3, 5], 2), uniform(&[4], 3)];
        out.push(check_grads(&format!("conv1d stride {s} pad {p}"), &ins, |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], s, p).unwrap();
            reduce(g, y)
        }));
    }
    for (s, p) in [(1, 0), (1, 2), (2, 1)] {
        let ins = [uniform(&[2, 3, 6], 4), uniform(&[3, 2, 5], 5), uniform(&[2], 6)];
        out.push(check_grads(&format!("deconv1d stride {s} pad {p}"), &ins, |g, v| {
            let y = g.deconv1d(v[0], v[1], v[2], s, p).unwrap();
            reduce(g, y)
        }));
    }
    // Distinct values at least 0.1 apart so no pooled argmax flips.
    let pool_in: Vec<f64> = (0..2 * 3 * 9).map(|i| ((i * 37) % 53) as f64 * 0.1 - 2.0).collect();
    out.push(check_grads("maxpool1d", &[Tensor::new(&[2, 3, 9], pool_in).expect("sized")], |g, v| {
        let y = g.maxpool1d(v[0]).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("upsample_nearest", &[uniform(&[2, 3, 4], 7)], |g, v| {
        let y = g.upsample_nearest(v[0], 3).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("relu", &[off_kink(uniform(&[2, 3, 4], 8))], |g, v| {
        let y = g.relu(v[0]).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("concat_channels", &[uniform(&[2, 3, 4], 9), uniform(&[2, 2, 4], 10)], |g, v| {
        let y = g.concat_channels(v[0], v[1]).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("add_over_length", &[uniform(&[2, 3, 5], 11), uniform(&[2, 3, 1], 12)], |g, v| {
        let y = g.add_over_length(v[0], v[1]).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("reshape", &[uniform(&[2, 3, 4], 13)], |g, v| {
        let y = g.reshape(v[0], &[2, 12]).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("dense", &[uniform(&[3, 5], 14), uniform(&[4, 5], 15), uniform(&[4], 16)], |g, v| {
        let y = g.dense(v[0], v[1], v[2]).unwrap();
        reduce(g, y)
    }));
    out.push(check_grads("softmax_xent", &[uniform(&[3, 4], 17)], |g, v| g.softmax_xent(v[0], &[0, 3, 1]).unwrap()));
    let pred = uniform(&[2, 1, 6], 18);
    let target: Vec<f64> =
        pred.data().iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.3 } else { -0.4 }).collect();
    let ins = [pred, Tensor::new(&[2, 1, 6], target).expect("sized")];
    out.push(check_grads("mae", &ins, |g, v| g.mae(v[0], v[1]).unwrap()));
    out.push(check_grads("dot_const", &[uniform(&[7], 19)], |g, v| g.dot_const(v[0], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.25, 3.0]).unwrap()));
    out
}

fn params_f64(specs: Vec<crate::params::ParamSpec>, seed: u64, bias: impl Fn(f64) -> f64) -> Vec<Tensor<f64>> {
    let params = ParamSet::init(specs, &mut rng::stream(seed, "gc", 0));
    params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let t: Tensor<f64> = t.cast();
            if t.ndim() == 1 {
                // Non-zero biases so every path carries signal.
                let b = uniform(t.shape(), 100 + i as u64);
                Tensor::new(t.shape(), b.data().iter().map(|&v| bias(v)).collect()).expect("sized")
            } else {
                t
            }
        })
        .collect()
}

/// MAE of a W=16 denoiser and cross-entropy of a W=64 classifier, with
/// respect to every parameter and input.
pub fn network_suite() -> Vec<GradReport> {
    let dcfg = DenoiserConfig { window: 16, cond_channels: 4, channels: [3, 4, 4], step_dim: 4, kernel: 3 };
    let mut inputs = params_f64(dcfg.param_specs(), 3, |v| v);
    let n_params = inputs.len();
    inputs.push(uniform(&[2, 1, 16], 50));
    inputs.push(uniform(&[2, 4, 16], 51));
    let target = uniform(&[2, 1, 16], 52);
    let steps = [3usize, 41];
    let dm = check_grads("denoiser", &inputs, |g, v| {
        let out = denoiser::forward(&dcfg, g, &v[..n_params], v[n_params], v[n_params + 1], &steps).unwrap();
        let t = g.constant(target.clone());
        g.mae(out, t).unwrap()
    });

    let ccfg = ClassifierConfig { window: 64, n_classes: 3, channels: [4, 6, 8], kernel: 5, fc: [12, 10, 8, 6, 5] };
    let mut inputs = params_f64(ccfg.param_specs(), 4, |v| 0.1 * v + 0.05);
    let n_params = inputs.len();
    inputs.push(uniform(&[3, 1, 64], 60));
    let clf = check_grads("classifier", &inputs, |g, v| {
        let logits = classifier::forward(&ccfg, g, &v[..n_params], v[n_params]).unwrap();
        g.softmax_xent(logits, &[0, 2, 1]).unwrap()
    });
    vec![dm, clf]
}
