//! Compares the threaded repetition runner against the sequential one on a
//! batch of adversarial consensus schedules, the workload shape behind the
//! safety suite and the experiment repetitions.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use stigma_core::consensus::safety::check_adversarial_schedule;
use stigma_core::parallel::{map_indexed, map_indexed_sequential};

const BATCH: usize = 64;

fn one_schedule(i: usize) -> usize {
    let n = if i % 2 == 0 { 3 } else { 5 };
    check_adversarial_schedule(1_000 + i as u64, n)
        .expect("schedule holds")
        .decided_slots
}

fn bench_runners(c: &mut Criterion) {
    let mut group = c.benchmark_group("adversarial_schedule_batch");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter_batched(|| (), |()| map_indexed(BATCH, one_schedule), BatchSize::SmallInput)
    });
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || (),
            |()| map_indexed_sequential(BATCH, one_schedule),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_runners);
criterion_main!(benches);
