use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mgan_bench::skirmish_fixture;
use mgan_core::learner::{loss_and_grads, td_targets};
use mgan_core::Algorithm;

fn train_step_cost(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grads");
    group.sample_size(10);
    for algorithm in [Algorithm::Vdn, Algorithm::Qmix, Algorithm::Mgan] {
        let (model, params, batch) = skirmish_fixture(algorithm, 8).expect("fixture");
        let targets = td_targets(&model, &params, &batch, 0.99).expect("targets");
        group.bench_function(algorithm.to_string(), |b| {
            b.iter(|| loss_and_grads(&model, &params, black_box(&batch), &targets).expect("loss"))
        });
    }
    group.finish();
}

fn target_cost(c: &mut Criterion) {
    let (model, params, batch) = skirmish_fixture(Algorithm::Mgan, 8).expect("fixture");
    c.bench_function("td_targets/mgan", |b| {
        b.iter(|| td_targets(&model, &params, black_box(&batch), 0.99).expect("targets"))
    });
}

criterion_group!(benches, train_step_cost, target_cost);
criterion_main!(benches);
