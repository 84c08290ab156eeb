//! Parallel vs sequential throughput for the fan-out entry points:
//! batch evaluation on a frozen model and multi-seed training.
//!
//! Build with `--no-default-features` to time the true sequential
//! fallback; with the default `parallel` feature this compares the
//! rayon path against the always-sequential twins.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eqtime_core::data::{bucket_batches, generate_synthetic, SyntheticConfig, SyntheticTask};
use eqtime_core::model::{compose_model, Model, ModelSpec, TaskSpec};
use eqtime_core::parallel::{maybe_par_map, seq_map};
use eqtime_core::train::{train, TrainConfig, TrainSetup};

fn fixture() -> (eqtime_core::data::SyntheticDataset, Model, ModelSpec) {
    let data = generate_synthetic(&SyntheticConfig {
        seed: 11,
        sequences: 96,
        k_types: 4,
        feature_dim: 8,
        t_min: 8,
        t_max: 16,
        max_events_per_step: 4,
        p_multi: 0.5,
        task: SyntheticTask::MultiLabel { classes: 3 },
        ..SyntheticConfig::default()
    })
    .unwrap();
    let spec = ModelSpec::from_combo("trans-trans", 8, TaskSpec::MultiLabel { classes: 3 })
        .unwrap();
    let model = compose_model(&spec, None, 1).unwrap();
    (data, model, spec)
}

fn bench_batch_eval(c: &mut Criterion) {
    let (data, model, _) = fixture();
    let batches = bucket_batches(&data.binned.train, &data.schema, &data.vocab, 16, 0).unwrap();
    let mut group = c.benchmark_group("batch_eval");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("fanout", batches.len()), &batches, |b, bs| {
        b.iter(|| {
            let out = maybe_par_map(bs, |mb| model.predict_probs(&mb.batch).unwrap());
            std::hint::black_box(out)
        })
    });
    group.bench_with_input(BenchmarkId::new("sequential", batches.len()), &batches, |b, bs| {
        b.iter(|| {
            let out = seq_map(bs, |mb| model.predict_probs(&mb.batch).unwrap());
            std::hint::black_box(out)
        })
    });
    group.finish();
}

fn bench_multi_seed_training(c: &mut Criterion) {
    let (data, _, spec) = fixture();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..4).collect();
    let mut group = c.benchmark_group("multi_seed_training");
    group.sample_size(10);
    let run = |seed: u64| {
        let setup = TrainSetup {
            spec: &spec,
            transition: None,
            schema: &data.schema,
            vocab: &data.vocab,
            split: &data.binned,
        };
        let cfg = TrainConfig { seed, ..cfg.clone() };
        train(&setup, &cfg).unwrap().0.test_metric
    };
    group.bench_function("fanout", |b| {
        b.iter(|| std::hint::black_box(maybe_par_map(&seeds, |&s| run(s))))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| std::hint::black_box(seq_map(&seeds, |&s| run(s))))
    });
    group.finish();
}

criterion_group!(benches, bench_batch_eval, bench_multi_seed_training);
criterion_main!(benches);
