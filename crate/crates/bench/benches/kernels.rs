//! Benchmarks for the numeric kernels: KL inversion, forward/backward
//! passes, one SGLD epoch, and the Monte Carlo log-Z estimator.

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use pacbound_core::bounds::kl_inverse;
use pacbound_core::data::{synth_generate, SynthConfig};
use pacbound_core::model::{
    forward, grad_bounded_xent, BoundedXentConfig, MlpArchitecture, MlpParams,
};
use pacbound_core::priors::{logz_upper_mc, GaussianPrior, GibbsBase, GibbsConfig};
use pacbound_core::sgld::{one_stage_train, SgldConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_kl_inverse(c: &mut Criterion) {
    c.bench_function("kl_inverse_bisection", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..100 {
                let q = i as f64 / 200.0;
                acc += kl_inverse(black_box(q), black_box(0.3)).unwrap();
            }
            acc
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let arch = MlpArchitecture::synth_default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = MlpParams::init(&arch, &mut rng);
    let (train, _, _) = synth_generate(&SynthConfig {
        seed: 42,
        ..Default::default()
    })
    .unwrap();
    let cfg = BoundedXentConfig::default();
    let x = train.input(0).to_vec();
    c.bench_function("forward_4_100_2", |b| {
        b.iter(|| forward(&arch, black_box(&params), black_box(&x)).unwrap())
    });
    let batch: Vec<usize> = (0..10).collect();
    c.bench_function("grad_batch10_4_100_2", |b| {
        b.iter(|| grad_bounded_xent(&arch, black_box(&params), &train, &batch, &cfg).unwrap())
    });
}

fn bench_sgld_epoch(c: &mut Criterion) {
    let arch = MlpArchitecture::synth_default();
    let (train, _, _) = synth_generate(&SynthConfig {
        seed: 42,
        ..Default::default()
    })
    .unwrap();
    let xcfg = BoundedXentConfig::default();
    c.bench_function("one_stage_train_10_epochs", |b| {
        b.iter_batched(
            || SgldConfig {
                a0: 1e-3,
                b: 0.5,
                batch_size: 10,
                epochs: 10,
                stage_one_epochs: None,
                seed: 7,
                noise_scale: 1.0,
                window: 5,
            },
            |cfg| one_stage_train(&arch, &train, black_box(100.0), &cfg, &xcfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_logz(c: &mut Criterion) {
    let prior = GaussianPrior::new(vec![0.0; 16], 2.0).unwrap();
    let gibbs = GibbsConfig::new(50.0, 4.0, GibbsBase::Gaussian(prior)).unwrap();
    c.bench_function("logz_upper_mc_4096", |b| {
        b.iter(|| {
            logz_upper_mc(
                &gibbs,
                |v| v.iter().map(|x| x * x).sum::<f64>().min(4.0),
                black_box(4096),
                9,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_kl_inverse,
    bench_model,
    bench_sgld_epoch,
    bench_logz
);
criterion_main!(benches);
