use proptest::prelude::*;

use sfdm_core::classifier::{argmax_rows, Classifier, ClassifierConfig};
use sfdm_core::config::Config;
use sfdm_core::denoiser::{Denoiser, DenoiserConfig};
use sfdm_core::ndtensor::Tensor;
use sfdm_core::params::ParamSet;
use sfdm_core::rng;
use sfdm_core::signal::{self, SyntheticCorpusSpec, Window};
use sfdm_core::statfeat::{conditioner_batch, ConditionerMode};
use sfdm_core::trainer::{train_diffusion, BatchAudit, TrainConfig};

#[test]
fn denoiser_parameter_count_matches_layer_arithmetic() {
    let cfg = DenoiserConfig::new(200, 4);
    assert_eq!((cfg.channels, cfg.step_dim, cfg.kernel), ([32, 64, 128], 64, 9));
    // Per encoder block (in -> out channels, kernel 9): main conv, step
    // dense from 64, 1x1 step conv, conditioner conv from 4 channels; each
    // with bias. Inputs double after each block because of the concat.
    let block = |cin: usize, c: usize| (c * cin * 9 + c) + (c * 64 + c) + (c * c + c) + (c * 4 * 9 + c);
    let encoder = block(1, 32) + block(64, 64) + block(128, 128);
    let decoder = (256 * 64 * 9 + 64) + (64 * 32 * 9 + 32) + (32 + 1);
    assert_eq!(encoder + decoder, 395_425);
    let dm = Denoiser::init(cfg, ConditionerMode::StatFeatures, &mut rng::stream(0, "count", 0)).unwrap();
    assert_eq!(dm.params().count(), 395_425);
}

fn check_init_bounds(params: &ParamSet) {
    for (spec, t) in params.specs().iter().zip(params.tensors()) {
        if spec.fan_in == 0 {
            assert!(t.data().iter().all(|&v| v == 0.0), "{} bias not zero", spec.name);
        } else {
            let bound = 1.0 / (spec.fan_in as f32).sqrt();
            assert!(t.data().iter().all(|v| v.abs() <= bound), "{} exceeds 1/sqrt({})", spec.name, spec.fan_in);
        }
    }
}

#[test]
fn init_respects_fan_in_bounds_and_is_seeded() {
    let dcfg = DenoiserConfig::new(64, 4);
    let a = Denoiser::init(dcfg.clone(), ConditionerMode::StatFeatures, &mut rng::stream(1, "i", 0)).unwrap();
    let b = Denoiser::init(dcfg, ConditionerMode::StatFeatures, &mut rng::stream(1, "i", 0)).unwrap();
    assert_eq!(a, b);
    check_init_bounds(a.params());
    let first = &a.params().specs()[0];
    assert_eq!((first.name.as_str(), first.fan_in), ("enc0.conv.w", 9));

    let c = Classifier::init(ClassifierConfig::new(200, 3), &mut rng::stream(1, "i", 0)).unwrap();
    check_init_bounds(c.params());
}

#[test]
fn trained_denoiser_responds_to_its_conditioner() {
    let mut cfg = Config::default();
    for (k, v) in [("data.window", "64"), ("denoiser.channels", "4,8,8"), ("denoiser.step_dim", "8")] {
        cfg.set(k, v).unwrap();
    }
    let spec = SyntheticCorpusSpec { window: 64, windows_per_class_per_subject: 4, ..SyntheticCorpusSpec::desk_default() };
    let windows = signal::window_all(&signal::make_synthetic_corpus(&spec).unwrap(), 64, 64).unwrap();
    let sets = signal::subject_split(&windows, &cfg.split, 0).unwrap();
    let tcfg = TrainConfig { batch: 8, max_epochs: 3, patience: 2, ..cfg.dm_train() };
    let (dm, _) =
        train_diffusion(&sets.train, &[], cfg.denoiser_config(), &cfg.schedule().unwrap(), &tcfg, 3, &BatchAudit::default())
            .unwrap();

    let picks: Vec<&Window> = vec![&sets.train[0], &sets.train[sets.train.len() - 1]];
    let conds = conditioner_batch(&picks, dm.mode(), 3).unwrap();
    let noise = Tensor::new(&[1, 1, 64], rng::normal_vec(&mut rng::stream(0, "n", 0), 64)).unwrap();
    let run = |i: usize| {
        let cond = Tensor::new(&[1, 4, 64], conds.data()[i * 256..(i + 1) * 256].to_vec()).unwrap();
        dm.predict(&noise, &cond, &[50]).unwrap()
    };
    let (a, b) = (run(0), run(1));
    let l1: f32 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    assert!(l1 > 0.0);
    assert_eq!(run(0), a);
}

#[test]
fn classifier_rows_do_not_depend_on_batch_mates() {
    let clf = Classifier::init(ClassifierConfig::new(64, 3), &mut rng::stream(4, "c", 0)).unwrap();
    let x = Tensor::new(&[5, 1, 64], rng::normal_vec(&mut rng::stream(4, "x", 0), 5 * 64)).unwrap();
    let all = clf.logits(&x).unwrap();
    assert_eq!(all.shape(), &[5, 3]);
    for i in 0..5 {
        let one = Tensor::new(&[1, 1, 64], x.data()[i * 64..(i + 1) * 64].to_vec()).unwrap();
        assert_eq!(clf.logits(&one).unwrap().data(), &all.data()[i * 3..(i + 1) * 3]);
    }
}

proptest! {
    #[test]
    fn argmax_ignores_uniform_monotone_transforms(
        logits in prop::collection::vec(-5.0f32..5.0, 3..30),
        shift in -10.0f32..10.0,
        scale in 0.1f32..4.0,
    ) {
        let n = 3;
        let rows = logits.len() / n * n;
        let base = argmax_rows(&logits[..rows], n);
        let moved: Vec<f32> = logits[..rows].iter().map(|&v| v + shift).collect();
        let stretched: Vec<f32> = logits[..rows].iter().map(|&v| (v * scale).exp()).collect();
        // Shifting can round distinct logits together; only compare when the
        // top value stays unique.
        for (r, row) in logits[..rows].chunks(n).enumerate() {
            let top = row.iter().cloned().fold(f32::MIN, f32::max);
            let unique = row.iter().filter(|&&v| v == top).count() == 1;
            let second = row.iter().cloned().filter(|&v| v < top).fold(f32::MIN, f32::max);
            if unique && top - second > 1e-3 {
                prop_assert_eq!(argmax_rows(&moved, n)[r], base[r]);
                prop_assert_eq!(argmax_rows(&stretched, n)[r], base[r]);
            }
        }
    }
}
