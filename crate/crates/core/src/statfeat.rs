//! The statistical conditioner: mean, standard deviation, z-score and
//! skewness of a window, each broadcast to the window length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::Tensor;
use crate::signal::Window;

/// Below this population std a window is treated as constant.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Number of conditioner channels in statistical-feature mode.
pub const STAT_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub mean: f32,
    pub std: f32,
    pub zscore: Vec<f32>,
    pub skewness: f32,
}

impl FeatureStack {
    pub fn len(&self) -> usize {
        self.zscore.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zscore.is_empty()
    }

    /// Row-major `[4, W]` in channel order mean, std, z-score, skewness.
    pub fn to_rows(&self) -> Vec<f32> {
        let w = self.len();
        let mut out = Vec::with_capacity(STAT_CHANNELS * w);
        out.extend(std::iter::repeat_n(self.mean, w));
        out.extend(std::iter::repeat_n(self.std, w));
        out.extend_from_slice(&self.zscore);
        out.extend(std::iter::repeat_n(self.skewness, w));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionerMode {
    /// Label-free statistical features.
    StatFeatures,
    /// One-hot activity label (class-conditional ablation).
    ClassOneHot,
}

impl ConditionerMode {
    pub fn channels(self, n_classes: usize) -> usize {
        match self {
            ConditionerMode::StatFeatures => STAT_CHANNELS,
            ConditionerMode::ClassOneHot => n_classes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionerMode::StatFeatures => "stat",
            ConditionerMode::ClassOneHot => "onehot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stat" | "sf" => Some(ConditionerMode::StatFeatures),
            "onehot" | "cc" => Some(ConditionerMode::ClassOneHot),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ConditionerMode::StatFeatures => 0,
            ConditionerMode::ClassOneHot => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ConditionerMode::StatFeatures),
            1 => Some(ConditionerMode::ClassOneHot),
            _ => None,
        }
    }
}

/// Population moments of `values`; z-score and skewness are zero when the
/// window is constant.
pub fn compute_features(values: &[f32]) -> Result<FeatureStack> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Argument(format!("statistical features need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / nf;
    let std = var.sqrt();
    let (zscore, skewness) = if std < SIGMA_FLOOR {
        (vec![0.0; n], 0.0)
    } else {
        let z: Vec<f64> = values.iter().map(|&v| (v as f64 - mean) / std).collect();
        let skew = z.iter().map(|v| v.powi(3)).sum::<f64>() / nf;
        (z.into_iter().map(|v| v as f32).collect(), skew)
    };
    Ok(FeatureStack {
        mean: mean as f32,
        std: std as f32,
        zscore,
        skewness: skewness as f32,
    })
}

/// Conditioner for one window: `[4, W]` statistics or `[n_classes, W]` one-hot.
/// In statistical mode the label is never read.
pub fn build_conditioner(window: &Window, mode: ConditionerMode, n_classes: usize) -> Result<Tensor> {
    let w = window.len();
    match mode {
        ConditionerMode::StatFeatures => {
            let f = compute_features(&window.values)?;
            Ok(Tensor::new(&[STAT_CHANNELS, w], f.to_rows())?)
        }
        ConditionerMode::ClassOneHot => {
            let label = window
                .label
                .ok_or_else(|| Error::Argument("class-conditional mode needs a labeled window".into()))?
                as usize;
            if label >= n_classes {
                return Err(Error::Argument(format!("label {label} outside [0, {n_classes})")));
            }
            let mut data = vec![0.0f32; n_classes * w];
            data[label * w..(label + 1) * w].iter_mut().for_each(|v| *v = 1.0);
            Ok(Tensor::new(&[n_classes, w], data)?)
        }
    }
}

/// Stack per-window conditioners into `[B, F, W]`.
pub fn conditioner_batch(windows: &[&Window], mode: ConditionerMode, n_classes: usize) -> Result<Tensor> {
    let b = windows.len();
    if b == 0 {
        return Err(Error::Argument("empty conditioner batch".into()));
    }
    let w = windows[0].len();
    let f = mode.channels(n_classes);
    let mut data = Vec::with_capacity(b * f * w);
    for win in windows {
        if win.len() != w {
            return Err(Error::Argument(format!("window lengths differ: {} vs {w}", win.len())));
        }
        data.extend(build_conditioner(win, mode, n_classes)?.into_data());
    }
    Ok(Tensor::new(&[b, f, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_of_one_two_three() {
        let f = compute_features(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.mean, 2.0);
        assert!((f.std as f64 - (2.0f64 / 3.0).sqrt()).abs() < 1e-7);
        let want = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((f.zscore[0] as f64 + want).abs() < 1e-6);
        assert_eq!(f.zscore[1], 0.0);
        assert!((f.zscore[2] as f64 - want).abs() < 1e-6);
        assert_eq!(f.skewness, 0.0);
    }

    #[test]
    fn constant_window_degenerates_to_zero() {
        let f = compute_features(&[5.0; 4]).unwrap();
        assert_eq!((f.mean, f.std, f.skewness), (5.0, 0.0, 0.0));
        assert!(f.zscore.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn right_tail_gives_positive_skew() {
        assert!(compute_features(&[0.0, 0.0, 0.0, 1.0]).unwrap().skewness > 0.0);
        assert!(compute_features(&[1.0, 1.0, 1.0, 0.0]).unwrap().skewness < 0.0);
    }

    #[test]
    fn too_short_is_an_argument_error() {
        assert!(matches!(compute_features(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn conditioner_layouts() {
        let w = Window::new(vec![1.0, 4.0, 2.0, 8.0, 3.0], Some(2), "s");
        let stat = build_conditioner(&w, ConditionerMode::StatFeatures, 4).unwrap();
        assert_eq!(stat.shape(), &[4, 5]);
        let f = compute_features(&w.values).unwrap();
        assert_eq!(stat.data(), f.to_rows().as_slice());
        assert!(stat.data()[..5].iter().all(|&v| v == f.mean));

        let hot = build_conditioner(&w, ConditionerMode::ClassOneHot, 4).unwrap();
        assert_eq!(hot.shape(), &[4, 5]);
        for c in 0..4 {
            let want = if c == 2 { 1.0 } else { 0.0 };
            assert!(hot.data()[c * 5..(c + 1) * 5].iter().all(|&v| v == want));
        }

        let unlabeled = Window::new(vec![1.0, 2.0], None, "s");
        assert!(build_conditioner(&unlabeled, ConditionerMode::StatFeatures, 4).is_ok());
        assert!(build_conditioner(&unlabeled, ConditionerMode::ClassOneHot, 4).is_err());
    }
}
