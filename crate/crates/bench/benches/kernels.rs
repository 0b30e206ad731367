use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use trajsynth::direct::NoiseMode;
use trajsynth::generator::{over_generate, train_dp_markov_backend, DpMarkovConfig};
use trajsynth::metrics::{dtw, tdcr, TdcrConfig};
use trajsynth_bench::{collection, hmm};

fn dtw_kernel(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..64).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..48).map(|_| rng.random()).collect();
    c.bench_function("dtw 64x48", |bench| bench.iter(|| dtw(&a, &b).unwrap()));
}

fn forward(c: &mut Criterion) {
    let hmm = hmm();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let obs: Vec<Vec<f64>> = (0..12).map(|_| (0..hmm.num_features()).map(|_| rng.random_range(-2.0..4.0)).collect()).collect();
    c.bench_function("hmm forward T=12", |bench| bench.iter(|| hmm.log_likelihood(&obs)));
}

fn tdcr_small(c: &mut Criterion) {
    let hmm = hmm();
    let train = collection(&hmm, 200, 3);
    let test = collection(&hmm, 50, 4);
    let synth = collection(&hmm, 50, 5);
    let mut g = c.benchmark_group("tdcr");
    g.sample_size(10);
    g.bench_function("50 queries x 200 reference", |bench| {
        bench.iter(|| tdcr(&synth, &train, &test, &TdcrConfig::default()).unwrap())
    });
    g.finish();
}

fn generation(c: &mut Criterion) {
    let hmm = hmm();
    let train = collection(&hmm, 500, 6);
    let backend = train_dp_markov_backend(&train, &DpMarkovConfig::default(), NoiseMode::Exact).unwrap();
    let mut seed = 0;
    c.bench_function("generate 100 tables", |bench| {
        bench.iter_batched(
            || {
                seed += 1;
                seed
            },
            |s| over_generate(&backend, train.schema(), 100, 12, s, None).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, dtw_kernel, forward, tdcr_small, generation);
criterion_main!(benches);
