use std::hint::black_box;

use adapt_bench::fixture;
use adapt_core::adapttok::adaptive_tokenize;
use adapt_core::seqmine::{mine_closed, MiningParams};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn tokenize(c: &mut Criterion) {
    let fx = fixture(400);
    let bytes: usize = fx.docs.iter().map(|d| d.text.len()).sum();
    let mut group = c.benchmark_group("tokenize");
    group.throughput(Throughput::Bytes(bytes as u64));
    group.bench_function("base", |b| {
        b.iter(|| {
            for d in &fx.docs {
                black_box(fx.vocab.base_tokenize(&d.text));
            }
        })
    });
    group.bench_function("adaptive", |b| {
        b.iter(|| {
            for d in &fx.docs {
                black_box(adaptive_tokenize(&fx.task_vocab, &fx.vocab, &d.text));
            }
        })
    });
    group.finish();
}

fn mine(c: &mut Criterion) {
    let mut group = c.benchmark_group("mine_closed");
    group.sample_size(20);
    for docs in [100, 400, 1600] {
        let fx = fixture(docs);
        group.bench_with_input(BenchmarkId::new("contiguous", docs), &fx.tokenized, |b, corpus| {
            b.iter(|| mine_closed(corpus, &fx.config.mining).unwrap())
        });
        let gapped = MiningParams {
            max_gap: Some(1),
            ..fx.config.mining
        };
        group.bench_with_input(BenchmarkId::new("gap1", docs), &fx.tokenized, |b, corpus| {
            b.iter(|| mine_closed(corpus, &gapped).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let fx = fixture(400);
    let batch: Vec<_> = fx.adapted.iter().take(32).collect();
    c.bench_function("loss_and_grads/32", |b| b.iter(|| fx.model.loss_and_grads(black_box(&batch)).unwrap()));
}

criterion_group!(benches, tokenize, mine, gradients);
criterion_main!(benches);
