use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sdim_bench::Fixture;
use sdim_core::attention::{default_scale, EtaIndex};
use sdim_core::serving::{encode_sequence, gather_batch, gather_interest};
use sdim_core::{sdim_attention, sim_hard, target_attention, Weights};

fn per_candidate(c: &mut Criterion) {
    let f = Fixture::standard();
    let scale = default_scale(f.sequence.dim());
    let q = &f.candidates[0];
    let index = EtaIndex::new(&f.sequence, &f.family).unwrap();
    let mut g = c.benchmark_group("per_candidate");
    g.bench_function("target_attention", |b| {
        b.iter(|| target_attention(black_box(q), &f.sequence, scale, Weights::Skip))
    });
    g.bench_function("sdim_gather", |b| b.iter(|| gather_interest(black_box(q), &f.table, &f.family)));
    g.bench_function("sdim_unshared", |b| {
        b.iter(|| sdim_attention(black_box(q), &f.sequence, &f.family, Weights::Skip))
    });
    g.bench_function("sim_hard", |b| {
        b.iter(|| sim_hard(black_box(q), f.categories[0], &f.sequence, scale, Weights::Skip))
    });
    g.bench_function("eta_k64", |b| b.iter(|| index.attend(black_box(q), 64, scale, Weights::Skip)));
    g.finish();
}

fn sequence_phase(c: &mut Criterion) {
    let mut g = c.benchmark_group("sequence_phase");
    for l in [256, 512, 1024] {
        let f = Fixture::new(l, 1, 128, 48, 3);
        g.throughput(Throughput::Elements(l as u64));
        g.bench_with_input(BenchmarkId::new("encode", l), &f, |b, f| {
            b.iter(|| encode_sequence(&f.sequence, &f.family, 1))
        });
    }
    g.finish();
}

fn per_request(c: &mut Criterion) {
    let mut g = c.benchmark_group("per_request");
    g.sample_size(10);
    for batch in [64, 1024] {
        let f = Fixture::new(1024, batch, 128, 48, 3);
        let scale = default_scale(128);
        g.throughput(Throughput::Elements(batch as u64));
        g.bench_with_input(BenchmarkId::new("target_attention", batch), &f, |b, f| {
            b.iter(|| {
                for q in &f.candidates {
                    black_box(target_attention(q, &f.sequence, scale, Weights::Skip).unwrap());
                }
            })
        });
        g.bench_with_input(BenchmarkId::new("sdim", batch), &f, |b, f| {
            b.iter(|| gather_batch(&f.flat, &f.table, &f.family))
        });
    }
    g.finish();
}

criterion_group!(benches, per_candidate, sequence_phase, per_request);
criterion_main!(benches);
