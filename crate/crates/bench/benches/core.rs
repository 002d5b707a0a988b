use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mmt_bench::{random_corpus, random_tensor, train_fixture};
use mmt_core::embeddings::{DistanceKind, NeighborIndex};
use mmt_core::evaluation::corpus_bleu;
use mmt_core::trainer::{Task, Trainer};
use mmt_core::Tape;

fn tape(c: &mut Criterion) {
    let (a, b) = (random_tensor(64, 256, 1), random_tensor(256, 256, 2));
    c.bench_function("matmul_tanh_backward 64x256x256", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (x, w) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
            let y = t.matmul(x, w).unwrap();
            let y = t.tanh(y);
            let s = t.sum(y);
            t.backward(s).unwrap()
        })
    });
}

fn nearest(c: &mut Criterion) {
    let table = random_tensor(10_000, 300, 3);
    let index = NeighborIndex::new(&table, DistanceKind::Cosine).unwrap();
    let query = random_tensor(1, 300, 4);
    c.bench_function("nearest_neighbor 10k x 300", |bench| bench.iter(|| index.nearest(query.row(0), true).unwrap()));
}

fn bleu(c: &mut Criterion) {
    let (h, r) = (random_corpus(1000, 5), random_corpus(1000, 6));
    c.bench_function("corpus_bleu 1000 sentences", |bench| bench.iter(|| corpus_bleu(&h, &r).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let f = train_fixture(32);
    c.bench_function("train_step batch 32", |bench| {
        bench.iter_batched(
            || Trainer::new(f.model.clone(), f.train.clone()).unwrap(),
            |mut trainer| trainer.step(&f.batch, Task::Joint).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, tape, nearest, bleu, train_step);
criterion_main!(benches);
