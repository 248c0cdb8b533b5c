//! Sequential versus data-parallel execution of the two hot kernels: dense
//! matrix products and link-prediction candidate ranking.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mreader::corpus::{Triple, TripleStore};
use mreader::engine::gemm_with;
use mreader::framework::LpKind;
use mreader::par::Execution;
use mreader::zoo::{rank_entities_with, EmbeddingModel, Side};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for size in [64usize, 256] {
        let a: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; size * size];
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, size), &size, |bench, &n| {
                bench.iter(|| gemm_with(exec, &a, &b, &mut out, n, n, n));
            });
        }
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank_entities");
    let entities = 5000;
    let model = EmbeddingModel::new(LpKind::ComplEx, entities, 4, 64, 1);
    let mut store = TripleStore::new();
    for i in 0..entities {
        store.add_entity(&format!("e{i}"));
    }
    store.add_relation("r");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2 * entities {
        store.insert_ids(Triple::new(
            rng.gen_range(0..entities),
            0,
            rng.gen_range(0..entities),
        ));
    }
    let query = store.triples()[0];
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, entities), |bench| {
            bench.iter(|| {
                rank_entities_with(exec, &model, &store, query, Side::Object, true).unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, ranking);
criterion_main!(benches);
