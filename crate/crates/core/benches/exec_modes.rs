use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use comodo::dataio::{generate_synthetic, SyntheticConfig};
use comodo::losses::comodo_loss_exec;
use comodo::probe::{extract_features, fit_probe, ProbeHyper, ProbeKind};
use comodo::trainer::{train_step, TrainConfig, TrainState};
use comodo::{Exec, InstanceQueue, PairedSample, StudentParams, Temperatures};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_train_step(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    let batch: Vec<&PairedSample> = data.train.samples.iter().take(cfg.batch_size).collect();
    let mut group = c.benchmark_group("train_step");
    for (name, exec) in MODES {
        let start = TrainState::new(&cfg).unwrap();
        group.bench_function(name, |b| {
            b.iter_batched(
                || start.clone(),
                |mut state| black_box(train_step(&mut state, &batch, &cfg, exec).unwrap()),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_features(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let params = StudentParams::init(TrainConfig::default().arch, 1).unwrap();
    let windows = data.train.windows();
    let mut group = c.benchmark_group("extract_features");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| black_box(extract_features(&params, &windows, exec).unwrap())));
    }
    group.finish();
}

fn bench_loss(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let params = StudentParams::init(TrainConfig::default().arch, 1).unwrap();
    let mut group = c.benchmark_group("comodo_loss");
    for capacity in [256usize, 2048] {
        let mut queue = InstanceQueue::new(capacity, 32).unwrap();
        let teachers: Vec<_> = data.train.samples.iter().map(|s| s.teacher.clone()).collect();
        let mut positions = None;
        for _ in 0..capacity.div_ceil(teachers.len()) {
            positions = Some(queue.enqueue_batch(&teachers[..32]).unwrap());
        }
        let positions = positions.unwrap();
        let support = queue.snapshot().unwrap();
        let z_x = extract_features(&params, &data.train.windows()[..32], Exec::Sequential).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, capacity), &capacity, |b, _| {
                b.iter(|| black_box(comodo_loss_exec(exec, &z_x, &support, &positions, Temperatures::default()).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_probe(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let params = StudentParams::init(TrainConfig::default().arch, 1).unwrap();
    let train_f = extract_features(&params, &data.train.windows(), Exec::Sequential).unwrap();
    let test_f = extract_features(&params, &data.test.windows(), Exec::Sequential).unwrap();
    let labels = data.train.labels().unwrap();
    let mut group = c.benchmark_group("probe_scores");
    for kind in [ProbeKind::Knn, ProbeKind::KernelRidge] {
        let model = fit_probe(&train_f, &labels, 5, kind, &ProbeHyper::default()).unwrap();
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(name, kind), |b| {
                b.iter(|| black_box(model.predict_all(&test_f, exec).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_train_step, bench_features, bench_loss, bench_probe);
criterion_main!(benches);
