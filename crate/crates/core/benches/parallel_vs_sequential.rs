use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpcnn::beat_detection::{detect_beats, RPeakConfig};
use mpcnn::exec::Execution;
use mpcnn::mp_features::{distance_profile_with, extract_features_with, ChannelSet, SubsequenceMatrix, WindowConfig};
use mpcnn::neural_net::{train_step, Adam, ArchConfig, Model, Tensor3};
use mpcnn::preprocess::{design_fir_bandpass, extract_windows, filter_zero_phase_with};
use mpcnn::synthetic::{generate, SynthConfig, SYNTH_FS};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_distance_profile(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..360).map(|_| (0..55).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let a = SubsequenceMatrix::from_rows(&rows);
    let mut g = c.benchmark_group("distance_profile_k360_m55");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| distance_profile_with(black_box(&a), exec)));
    }
    g.finish();
}

fn bench_filter_and_features(c: &mut Criterion) {
    let out = generate(&SynthConfig {
        duration_minutes: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let filter = design_fir_bandpass(0.5, 45.0, 401, SYNTH_FS).unwrap();

    let mut g = c.benchmark_group("filter_zero_phase_30min");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| filter_zero_phase_with(black_box(&out.record.samples), &filter, exec).unwrap()));
    }
    g.finish();

    let mut rec = out.record.clone();
    rec.samples = filter_zero_phase_with(&rec.samples, &filter, Execution::default()).unwrap();
    let window = extract_windows(&rec, 5).swap_remove(0);
    let beats = detect_beats(&window.samples, window.fs, &RPeakConfig::default(), 20, 5).unwrap();
    let mut g = c.benchmark_group("extract_features_window");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| extract_features_with(&window, &beats, &WindowConfig::T1, ChannelSet::ALL, 900, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = 32;
    let x = Tensor3::from_vec(batch, 900, 3, (0..batch * 2700).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    let mut g = c.benchmark_group("train_step_b32");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut model = Model::lenet5(&ArchConfig::default(), 0).unwrap();
        model.exec = exec;
        let mut adam = Adam::default();
        let mut step_rng = ChaCha8Rng::seed_from_u64(3);
        g.bench_function(name, |b| {
            b.iter(|| train_step(&mut model, &mut adam, black_box(&x), &labels, 1e-4, &mut step_rng).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_distance_profile, bench_filter_and_features, bench_train_step);
criterion_main!(benches);
