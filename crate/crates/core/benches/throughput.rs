use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qdtm::concept::{expand, ExpansionOptions, Method};
use qdtm::corpus::{Corpus, Preprocessing, Stopwords};
use qdtm::embeddings::{build_promotion, build_relatedness, EmbeddingTable};
use qdtm::pipeline::{fit, FitOptions};
use qdtm::retrieval::{retrieve, Mode, Query};
use qdtm::sampler::{initialize, update_cohesion, Chain, GpuSettings, Promotion, ScopeVectors};
use qdtm::synth::{generate, SyntheticSpec};
use qdtm::Execution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

struct Fixture {
    corpus: Corpus,
    table: EmbeddingTable,
    query: Query,
    query_text: String,
    concepts: Vec<u32>,
}

fn fixture(docs: usize) -> Fixture {
    let spec = SyntheticSpec {
        docs,
        embedding_dim: 64,
        ..SyntheticSpec::default()
    };
    let syn = generate(&spec).unwrap();
    let pre = Preprocessing {
        stopwords: Stopwords::None,
        ..Preprocessing::default()
    };
    let corpus = Corpus::ingest(&syn.documents, &pre).unwrap();
    let table = EmbeddingTable::from_vectors(
        &corpus.vocabulary,
        syn.embeddings.iter().map(|(w, v)| (w.as_str(), v.clone())),
    )
    .unwrap();
    let query_text = syn.truth.query.clone().unwrap();
    let query = Query::parse(&query_text, Mode::Or, &corpus).unwrap();
    let concepts = expand(&corpus, &query, &ExpansionOptions::default(), None, Execution::Sequential)
        .unwrap()
        .tokens();
    Fixture { corpus, table, query, query_text, concepts }
}

fn bench_retrieval(c: &mut Criterion) {
    let f = fixture(2000);
    let mut g = c.benchmark_group("retrieval");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("retrieve", name), |b| {
            b.iter(|| retrieve(&f.corpus, &f.query, 100, 1000.0, exec).unwrap())
        });
        let rel = ExpansionOptions { method: Method::Rel, ..ExpansionOptions::default() };
        g.bench_function(BenchmarkId::new("expand_rel", name), |b| {
            b.iter(|| expand(&f.corpus, &f.query, &rel, Some(&f.table), exec).unwrap())
        });
    }
    g.finish();
}

fn bench_embeddings(c: &mut Criterion) {
    let f = fixture(500);
    let vectors = ScopeVectors::new(&f.table, None);
    let v = f.corpus.vocabulary.len();
    let docs: Vec<Vec<u32>> = f.corpus.documents.iter().map(|d| d.tokens.clone()).collect();
    let rel = build_relatedness(&f.table, &f.concepts, 0.5, Execution::Sequential);
    let promo = Arc::new(Promotion::from_matrix(&build_promotion(&rel, 0.3, v).unwrap(), None));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let state = initialize(docs, v, 1.0 / v as f64, (1.0, 0.5, 1.5), 20, vec![f.concepts.clone()], Some(promo.clone()), &mut rng)
        .unwrap();
    let words = promo.promotable_words();

    let mut g = c.benchmark_group("embeddings");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("relatedness", name), |b| {
            b.iter(|| build_relatedness(&f.table, &f.concepts, 0.5, exec))
        });
        g.bench_function(BenchmarkId::new("cohesion", name), |b| {
            b.iter(|| update_cohesion(&state, &vectors, &words, 10, exec))
        });
        g.bench_function(BenchmarkId::new("sweep", name), |b| {
            b.iter_batched(
                || {
                    Chain::new(
                        state.clone(),
                        ChaCha8Rng::seed_from_u64(2),
                        Some(Arc::new(vectors.clone())),
                        GpuSettings::default(),
                        10,
                        exec,
                    )
                },
                |mut chain| chain.iterate(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn bench_fit(c: &mut Criterion) {
    let f = fixture(300);
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = FitOptions {
            queries: vec![f.query_text.clone(), "w00010".into()],
            iters1: 5,
            iters2: 5,
            execution: exec,
            ..FitOptions::default()
        };
        g.bench_function(BenchmarkId::new("two_queries", name), |b| {
            b.iter(|| fit(&f.corpus, Some(&f.table), &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_retrieval, bench_embeddings, bench_fit);
criterion_main!(benches);
