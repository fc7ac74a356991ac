//! Benchmarks over pipeline-sized synthetic corpora, all seeded.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use patex_core::embedding::{build_similarity_matrix, load_vectors, WordVectorTable};
use patex_core::similarity::{score_run, soft_cosine, TaskQuery, ThresholdScope};
use patex_core::textprep::TokenizedDoc;
use patex_core::tfidf::{build_stats, weigh_tokens};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn token_pool(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("tok{i:04}")).collect()
}

fn random_docs(
    rng: &mut ChaCha8Rng,
    pool: &[String],
    count: usize,
    lo: usize,
    hi: usize,
) -> Vec<TokenizedDoc> {
    (0..count)
        .map(|i| TokenizedDoc {
            doc_id: format!("d{i:05}"),
            tokens: (0..rng.gen_range(lo..=hi))
                .map(|_| pool[rng.gen_range(0..pool.len())].clone())
                .collect(),
        })
        .collect()
}

/// Writes a seeded vector file and loads it back through the real parser.
fn vector_table(pool: &[String], dim: usize, seed: u64) -> WordVectorTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.txt");
    let mut out = format!("{} {dim}\n", pool.len());
    for tok in pool {
        out.push_str(tok);
        for _ in 0..dim {
            out.push_str(&format!(" {:.6}", rng.gen_range(-1.0..1.0)));
        }
        out.push('\n');
    }
    std::fs::write(&path, out).unwrap();
    load_vectors(&path, "bench").unwrap()
}

fn bench_similarity_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity_matrix");
    for vocab in [400usize, 800] {
        let pool = token_pool(vocab);
        let table = vector_table(&pool, 50, 3);
        group.bench_with_input(BenchmarkId::from_parameter(vocab), &vocab, |b, _| {
            b.iter(|| build_similarity_matrix(black_box(&table), black_box(&pool), 0.35).unwrap())
        });
    }
    group.finish();
}

fn bench_tfidf_stats(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool = token_pool(3000);
    let docs = random_docs(&mut rng, &pool, 20_000, 15, 60);
    c.bench_function("tfidf_stats/20000_docs", |b| {
        b.iter(|| build_stats(black_box(&docs)).unwrap())
    });
}

fn bench_score_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_run");
    group.sample_size(10);
    let pool = token_pool(600);
    let table = vector_table(&pool, 24, 7);
    for patents in [1000usize, 4000] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let docs = random_docs(&mut rng, &pool, patents, 10, 40);
        let queries: Vec<TaskQuery> = (0..50)
            .map(|i| TaskQuery {
                task_id: format!("t{i:02}"),
                dwa_id: format!("a{i:02}"),
                tokens: (0..rng.gen_range(8..=20))
                    .map(|_| pool[rng.gen_range(0..pool.len())].clone())
                    .collect(),
            })
            .collect();
        let query_docs: Vec<TokenizedDoc> = queries
            .iter()
            .map(|q| TokenizedDoc { doc_id: q.task_id.clone(), tokens: q.tokens.clone() })
            .collect();
        let stats = build_stats(&docs).unwrap().with_extended_vocabulary(query_docs.iter());
        let matrix = build_similarity_matrix(&table, stats.vocabulary(), 0.35).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(patents), &patents, |b, _| {
            b.iter(|| {
                score_run(
                    black_box(&queries),
                    black_box(&docs),
                    &matrix,
                    &stats,
                    2.0,
                    ThresholdScope::Global,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_soft_cosine(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pool = token_pool(600);
    let table = vector_table(&pool, 24, 13);
    let docs = random_docs(&mut rng, &pool, 2000, 10, 40);
    let stats = build_stats(&docs).unwrap();
    let matrix = build_similarity_matrix(&table, stats.vocabulary(), 0.35).unwrap();
    let q = weigh_tokens(&docs[0].tokens, &stats).unwrap();
    let d = weigh_tokens(&docs[1].tokens, &stats).unwrap();
    c.bench_function("soft_cosine/single_pair", |b| {
        b.iter(|| soft_cosine(black_box(&q), black_box(&d), black_box(&matrix)))
    });
}

criterion_group!(
    benches,
    bench_similarity_matrix,
    bench_tfidf_stats,
    bench_score_run,
    bench_soft_cosine
);
criterion_main!(benches);
