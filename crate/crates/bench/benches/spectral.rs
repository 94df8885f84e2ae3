use std::hint::black_box;

use adalign::autodiff::{Tape, Tensor};
use adalign::graph::{generate_csbm, CsbmSpec};
use adalign::rng::{substream, Stream};
use adalign::sampler::{sample_frequencies, SamplerParams};
use adalign::spectral::{alignment_loss, empirical_cf};
use adalign::trainer::{train_step_model, train_step_sampler, TrainConfig, TrainState, TrainingData};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_empirical_cf(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = uniform(&mut rng, 1000, 64);
    let mut group = c.benchmark_group("empirical_cf");
    for m in [512, 2048] {
        let t = sample_frequencies(&SamplerParams::new(4, 64).unwrap(), m, &mut substream(0, Stream::Frequencies)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &t, |b, t| b.iter(|| empirical_cf(black_box(&z), &t.frequencies).unwrap()));
    }
    group.finish();
}

fn bench_alignment_loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (zs, zt) = (uniform(&mut rng, 1000, 64), uniform(&mut rng, 1000, 64));
    let batch = sample_frequencies(&SamplerParams::new(4, 64).unwrap(), 2048, &mut substream(1, Stream::Frequencies)).unwrap();
    c.bench_function("alignment_loss_forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (s, t) = (tape.leaf(zs.clone()), tape.leaf(zt.clone()));
            let freqs = tape.constant(batch.frequencies.tensor().clone());
            let w = tape.constant(batch.weights_tensor());
            let loss = alignment_loss(&mut tape, s, t, freqs, w, 0.7).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let (source, target) = generate_csbm(&CsbmSpec::canonical(0)).unwrap();
    let data = TrainingData::new(&source, &target).unwrap();
    let config = TrainConfig::default();
    let mut state = TrainState::init(&config, &data).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("model", |b| b.iter(|| train_step_model(&mut state, &data, &config).unwrap()));
    group.bench_function("sampler", |b| b.iter(|| train_step_sampler(&mut state, &data, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_empirical_cf, bench_alignment_loss, bench_train_step);
criterion_main!(benches);
