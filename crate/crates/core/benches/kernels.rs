//! Rayon backend against a single worker. With `--no-default-features` the
//! crate is sequential and only the `sequential` rows are measured.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use sfdm_core::denoiser::{Denoiser, DenoiserConfig};
use sfdm_core::diffusion::NoiseSchedule;
use sfdm_core::ndtensor::kernels::{conv_gather, ConvGeom};
use sfdm_core::par;
use sfdm_core::rng;
use sfdm_core::signal::{self, SyntheticCorpusSpec, Window};
use sfdm_core::statfeat::ConditionerMode;
use sfdm_core::trainer::DiffusionTrainer;

/// Runs `f` on the global rayon pool and on a one-thread pool.
fn both<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
        g.bench_function(criterion::BenchmarkId::new("rayon", rayon::current_num_threads()), |b| b.iter(&f));
        g.bench_function(criterion::BenchmarkId::new("rayon", 1), |b| b.iter(|| single.install(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function("sequential", |b| b.iter(&f));
    g.finish();
}

fn conv(c: &mut Criterion) {
    let g = ConvGeom { batch: 32, c_in: 64, c_out: 128, len_in: 100, len_out: 100, kernel: 9, stride: 1, pad: 4 };
    let x = rng::normal_vec(&mut rng::stream(0, "bench", 0), g.batch * g.c_in * g.len_in);
    let w = rng::normal_vec(&mut rng::stream(0, "bench", 1), g.c_out * g.c_in * g.kernel);
    both(c, "conv_gather 32x64x100 k9", || {
        let mut out = vec![0.0f32; g.batch * g.c_out * g.len_out];
        conv_gather(black_box(&x), black_box(&w), &g, &mut out);
        black_box(out);
    });
}

fn corpus() -> Vec<Window> {
    let spec = SyntheticCorpusSpec { windows_per_class_per_subject: 4, ..SyntheticCorpusSpec::desk_default() };
    signal::window_all(&signal::make_synthetic_corpus(&spec).expect("corpus"), 200, 200).expect("windows")
}

fn trainer(seed: u64) -> DiffusionTrainer {
    let dm = Denoiser::init(DenoiserConfig::new(200, 4), ConditionerMode::StatFeatures, &mut rng::stream(seed, "bench", 2))
        .expect("denoiser");
    DiffusionTrainer::new(dm, NoiseSchedule::default(), 2e-4, 3, seed).expect("trainer")
}

fn denoiser_step(c: &mut Criterion) {
    let windows = corpus();
    let batch: Vec<&Window> = windows.iter().take(16).collect();
    let t = std::sync::Mutex::new(trainer(0));
    both(c, "denoiser step W=200 batch 16", || {
        black_box(t.lock().expect("trainer").step(&batch).expect("step"));
    });
}

fn seed_sweep(c: &mut Criterion) {
    let windows = corpus();
    let batch: Vec<&Window> = windows.iter().take(8).collect();
    both(c, "seed sweep 4 seeds x 2 steps", || {
        let losses = par::map_ordered((0..4u64).collect(), |s| {
            let mut t = trainer(s);
            (0..2).map(|_| t.step(&batch).expect("step")).sum::<f64>()
        });
        black_box(losses);
    });
}

criterion_group!(benches, conv, denoiser_step, seed_sweep);
criterion_main!(benches);
