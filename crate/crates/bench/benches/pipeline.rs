//! Throughput benchmarks for the pieces that dominate indexing and query
//! latency: the two embedding towers, ranking, and the cheap scalar kernels
//! they sit on.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use textra_bench::{default_model, random_index, random_query};
use textra_core::loss::edit_distance;
use textra_core::retrieval::{average_precision, rank_vector};
use textra_core::synth::{self, GalleryConfig};
use textra_core::{ops, rng, Array, Tape};

fn bench_embedding(c: &mut Criterion) {
    let mut model = default_model();
    let cfg = GalleryConfig::new(3, 1, synth::vocab_of_size(10).unwrap());
    let (img, _) = synth::generate(&cfg).unwrap().into_iter().next().unwrap();

    let mut g = c.benchmark_group("embed");
    g.sample_size(20);
    g.bench_function("image", |b| {
        b.iter(|| model.embed_image(black_box(&img)).unwrap())
    });
    g.bench_function("query", |b| {
        b.iter(|| model.embed_query(black_box("market")).unwrap())
    });
    g.finish();
}

fn bench_ranking(c: &mut Criterion) {
    let plain = random_index(1000, 1, 64);
    let subdivided = random_index(1000, 5, 64);
    let q = random_query(64);

    let mut g = c.benchmark_group("rank_1k");
    g.bench_function("plain", |b| {
        b.iter(|| rank_vector(black_box(&plain), black_box(&q)))
    });
    g.bench_function("subdivided", |b| {
        b.iter(|| rank_vector(black_box(&subdivided), black_box(&q)))
    });
    g.finish();
}

fn bench_kernels(c: &mut Criterion) {
    let mut r = rng::seeded(1);
    let a = Array::randn(&[64, 64], 0.0, 1.0, &mut r);
    let b_arr = Array::randn(&[64, 64], 0.0, 1.0, &mut r);
    c.bench_function("taped_matmul_64", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let x = tape.constant(a.clone());
            let y = tape.constant(b_arr.clone());
            black_box(ops::matmul(x, y).value().data()[0])
        })
    });

    let long_a = "pharmacological".repeat(2);
    let long_b = "pharmacognostical".repeat(2);
    c.bench_function("edit_distance_30", |b| {
        b.iter(|| edit_distance(black_box(&long_a), black_box(&long_b)))
    });

    let rel: Vec<bool> = (0..10_000).map(|i| i % 7 == 0).collect();
    c.bench_function("average_precision_10k", |b| {
        b.iter(|| average_precision(black_box(&rel)))
    });
}

criterion_group!(benches, bench_embedding, bench_ranking, bench_kernels);
criterion_main!(benches);
