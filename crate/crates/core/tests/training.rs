use sfdm_core::classifier::Classifier;
use sfdm_core::config::Config;
use sfdm_core::diffusion::generate;
use sfdm_core::error::Error;
use sfdm_core::ndtensor::Tensor;
use sfdm_core::rng;
use sfdm_core::signal::{self, Split, SplitSets, SyntheticCorpusSpec, Window};
use sfdm_core::statfeat::conditioner_batch;
use sfdm_core::trainer::{
    finetune_classifier, init_classifier, pretrain_classifier, train_baseline, train_diffusion, validation_mae,
    BatchAudit, ClassifierTrainer, TrainConfig,
};

fn toy_config() -> Config {
    let mut cfg = Config::default();
    for (k, v) in [
        ("data.window", "64"),
        ("denoiser.channels", "4,8,8"),
        ("denoiser.step_dim", "8"),
        ("dm.batch", "8"),
        ("dm.max_epochs", "4"),
        ("dm.patience", "2"),
        ("train.batch", "8"),
        ("train.max_epochs", "4"),
        ("train.patience", "2"),
        ("split.labeled_fraction", "0.5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

fn toy_sets(cfg: &Config) -> SplitSets {
    let spec = SyntheticCorpusSpec { window: 64, windows_per_class_per_subject: 6, ..SyntheticCorpusSpec::desk_default() };
    let windows = signal::window_all(&signal::make_synthetic_corpus(&spec).unwrap(), cfg.window, cfg.stride()).unwrap();
    signal::subject_split(&windows, &cfg.split, cfg.seed).unwrap()
}

fn stack(ws: &[&Window]) -> Tensor {
    Tensor::new(&[ws.len(), 1, ws[0].len()], ws.iter().flat_map(|w| w.values.clone()).collect()).unwrap()
}

fn labels(ws: &[&Window]) -> Vec<usize> {
    ws.iter().map(|w| w.label.unwrap() as usize).collect()
}

fn ckpt(c: &Classifier) -> Vec<u8> {
    c.to_checkpoint(None).unwrap()
}

#[test]
fn diffusion_training_is_deterministic_per_seed() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let run = |seed: u64| {
        let tcfg = TrainConfig { seed, ..cfg.dm_train() };
        let (dm, rec) = train_diffusion(
            &sets.train,
            &sets.val,
            cfg.denoiser_config(),
            &cfg.schedule().unwrap(),
            &tcfg,
            3,
            &BatchAudit::default(),
        )
        .unwrap();
        (dm.to_checkpoint().unwrap(), rec.to_ndjson())
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a.0, run(6).0);
}

#[test]
fn diffusion_returns_the_best_validation_snapshot() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let tcfg = TrainConfig { max_epochs: 6, patience: 5, ..cfg.dm_train() };
    let schedule = cfg.schedule().unwrap();
    let (dm, rec) =
        train_diffusion(&sets.train, &sets.val, cfg.denoiser_config(), &schedule, &tcfg, 3, &BatchAudit::default())
            .unwrap();
    let best = rec.best_epoch.unwrap();
    assert!(rec.stop_epoch.unwrap() <= best + tcfg.patience + 1);
    let best_metric = rec.epochs[best].val_metric;
    assert!(rec.epochs.iter().all(|e| e.val_metric >= best_metric));
    assert_eq!(validation_mae(&dm, &sets.val, &schedule, &tcfg, 3).unwrap(), best_metric);
}

#[test]
fn held_out_windows_are_rejected_before_training() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let mut train = sets.train.clone();
    train.push(sets.test[0].clone());
    let err = train_diffusion(
        &train,
        &sets.val,
        cfg.denoiser_config(),
        &cfg.schedule().unwrap(),
        &cfg.dm_train(),
        3,
        &BatchAudit::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Leakage { .. }), "{err}");

    let mut labeled = sets.labeled.clone();
    labeled.push(sets.val[0].clone());
    assert_eq!(labeled.last().unwrap().split, Some(Split::Val));
    let err = train_baseline(cfg.classifier_config(), &labeled, &sets.val, &cfg.clf_train(), &BatchAudit::default())
        .unwrap_err();
    assert!(matches!(err, Error::Leakage { .. }), "{err}");
}

#[test]
fn initial_cross_entropy_is_near_uniform() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let refs: Vec<&Window> = sets.labeled.iter().collect();
    let mut losses = Vec::new();
    for seed in 0..5 {
        let mut t = ClassifierTrainer::new(init_classifier(cfg.classifier_config(), seed).unwrap(), 1e-3).unwrap();
        losses.push(t.step(stack(&refs), &labels(&refs)).unwrap());
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    assert!((mean - 3f64.ln()).abs() < 0.15, "{losses:?}");
}

#[test]
fn pretraining_learns_the_synthetic_classes() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let schedule = cfg.schedule().unwrap();
    let mut dcfg = cfg.denoiser_config();
    dcfg.channels = [8, 16, 16];
    dcfg.step_dim = 16;
    let tcfg = TrainConfig { max_epochs: 30, patience: 10, ..cfg.dm_train() };
    let (dm, _) = train_diffusion(&sets.train, &sets.val, dcfg, &schedule, &tcfg, 3, &BatchAudit::default()).unwrap();

    let pool: Vec<&Window> = sets.train.iter().collect();
    let synth = |purpose: &str, i: u64| {
        let mut r = rng::stream(1, purpose, i);
        let idx = rng::permutation(&mut r, pool.len());
        let batch: Vec<&Window> = idx[..16].iter().map(|&j| pool[j]).collect();
        let cond = conditioner_batch(&batch, dm.mode(), 3).unwrap();
        (generate(cfg.generation, &dm, &cond, &schedule, &mut r).unwrap(), labels(&batch))
    };
    let mut t = ClassifierTrainer::new(init_classifier(cfg.classifier_config(), 0).unwrap(), 1e-3).unwrap();
    for i in 0..200 {
        let (x, y) = synth("train", i);
        t.step(x, &y).unwrap();
    }
    let (mut hits, mut total) = (0, 0);
    for i in 0..8 {
        let (x, y) = synth("held-out", i);
        let pred = t.classifier().predict(&x).unwrap();
        hits += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
        total += y.len();
    }
    let acc = hits as f64 / total as f64;
    assert!(acc > 1.0 / 3.0, "accuracy on synthetic samples {acc}");
}

#[test]
fn zero_epoch_finetune_keeps_the_parameters() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let init = init_classifier(cfg.classifier_config(), 3).unwrap();
    let tcfg = TrainConfig { max_epochs: 0, ..cfg.clf_train() };
    let (out, rec) = finetune_classifier(init.clone(), &sets.labeled, &sets.val, &tcfg, &BatchAudit::default()).unwrap();
    assert_eq!(ckpt(&out), ckpt(&init));
    assert!(rec.epochs.is_empty());
}

#[test]
fn baseline_equals_finetune_after_an_empty_pretrain() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let schedule = cfg.schedule().unwrap();
    let tcfg = cfg.clf_train();
    let audit = BatchAudit::default();
    let dm_cfg = TrainConfig { max_epochs: 1, patience: 0, ..cfg.dm_train() };
    let (dm, _) = train_diffusion(&sets.train, &sets.val, cfg.denoiser_config(), &schedule, &dm_cfg, 3, &audit).unwrap();

    let init = init_classifier(cfg.classifier_config(), tcfg.seed).unwrap();
    let empty = TrainConfig { max_epochs: 0, ..tcfg.clone() };
    let (pre, _) = pretrain_classifier(init, &dm, &sets.labeled, &sets.val, &schedule, &empty, &audit).unwrap();
    let (composed, rec_a) = finetune_classifier(pre, &sets.labeled, &sets.val, &tcfg, &audit).unwrap();
    let (baseline, rec_b) = train_baseline(cfg.classifier_config(), &sets.labeled, &sets.val, &tcfg, &audit).unwrap();
    assert_eq!(ckpt(&composed), ckpt(&baseline));
    assert_eq!(rec_a.to_ndjson(), rec_b.to_ndjson());
}

#[test]
fn classifier_stages_are_deterministic_per_seed() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let schedule = cfg.schedule().unwrap();
    let dm_cfg = TrainConfig { max_epochs: 1, patience: 0, ..cfg.dm_train() };
    let (dm, _) = train_diffusion(
        &sets.train,
        &sets.val,
        cfg.denoiser_config(),
        &schedule,
        &dm_cfg,
        3,
        &BatchAudit::default(),
    )
    .unwrap();
    let run = |seed: u64| {
        let tcfg = TrainConfig { seed, ..cfg.clf_train() };
        let audit = BatchAudit::default();
        let init = init_classifier(cfg.classifier_config(), seed).unwrap();
        let (pre, r1) = pretrain_classifier(init, &dm, &sets.labeled, &sets.val, &schedule, &tcfg, &audit).unwrap();
        let (fine, r2) = finetune_classifier(pre.clone(), &sets.labeled, &sets.val, &tcfg, &audit).unwrap();
        let (base, r3) = train_baseline(cfg.classifier_config(), &sets.labeled, &sets.val, &tcfg, &audit).unwrap();
        (ckpt(&pre), ckpt(&fine), ckpt(&base), r1.to_ndjson() + &r2.to_ndjson() + &r3.to_ndjson())
    };
    let a = run(9);
    assert_eq!(a, run(9));
    let b = run(10);
    assert_ne!(a.0, b.0);
    assert_ne!(a.2, b.2);
}

#[test]
fn baseline_loss_trends_down_over_fifty_iterations() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let refs: Vec<&Window> = sets.labeled.iter().collect();
    let mut t = ClassifierTrainer::new(init_classifier(cfg.classifier_config(), 0).unwrap(), 1e-3).unwrap();
    let mut losses = Vec::new();
    let mut r = rng::stream(0, "trend", 0);
    while losses.len() < 50 {
        for chunk in rng::permutation(&mut r, refs.len()).chunks(8) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| refs[i]).collect();
            losses.push(t.step(stack(&batch), &labels(&batch)).unwrap());
        }
    }
    losses.truncate(50);
    let avg: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(avg.last().unwrap() < avg.first().unwrap(), "{avg:?}");
    let rising = avg.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rising * 2 < avg.len(), "moving average rose in {rising} of {} steps", avg.len() - 1);
}

#[test]
fn audit_counts_every_gradient_batch() {
    let cfg = toy_config();
    let sets = toy_sets(&cfg);
    let audit = BatchAudit::default();
    for w in sets.test.iter().chain(&sets.val) {
        audit.watch(w.id);
    }
    let tcfg = TrainConfig { max_epochs: 3, patience: 2, ..cfg.clf_train() };
    let (_, rec) = train_baseline(cfg.classifier_config(), &sets.labeled, &sets.val, &tcfg, &audit).unwrap();
    let per_epoch = sets.labeled.len().div_ceil(tcfg.batch) as u64;
    assert_eq!(audit.batches(), per_epoch * rec.epochs.len() as u64);
    assert_eq!(audit.windows(), (sets.labeled.len() * rec.epochs.len()) as u64);
    assert_eq!(audit.hits(), 0);
}
