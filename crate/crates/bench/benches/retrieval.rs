use anchornav_bench::{corrupted_excerpt, sample_queries, synthetic_index};
use anchornav_core::router::Filters;
use anchornav_core::{align_fuzzy, EmbeddingProvider, FusionConfig, HashedTrigramProvider};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieve");
    group.sample_size(20);
    for pages in [35, 350] {
        let index = synthetic_index(pages);
        let queries = sample_queries(&index, 16, 1);
        let fusion = FusionConfig::default();
        let mut i = 0;
        group.bench_with_input(BenchmarkId::new("hybrid", pages), &pages, |b, _| {
            b.iter(|| {
                i = (i + 1) % queries.len();
                black_box(index.retrieve(&queries[i], &Filters::default(), &fusion))
            })
        });
        group.bench_with_input(BenchmarkId::new("lexical", pages), &pages, |b, _| {
            b.iter(|| {
                i = (i + 1) % queries.len();
                black_box(index.lexical.score(&queries[i], fusion.top_k))
            })
        });
        let provider = HashedTrigramProvider::default();
        let embedded: Vec<_> = queries
            .iter()
            .map(|q| provider.embed(&anchornav_core::dense::dense_tokens(&index.tokenizer, q)).unwrap())
            .collect();
        group.bench_with_input(BenchmarkId::new("maxsim_all_windows", pages), &pages, |b, _| {
            b.iter(|| {
                i = (i + 1) % embedded.len();
                black_box(index.dense.score_all(&embedded[i]).unwrap())
            })
        });
    }
    group.finish();
}

fn alignment(c: &mut Criterion) {
    let index = synthetic_index(35);
    let quote = corrupted_excerpt(&index, 2);
    c.bench_function("align_fuzzy/35_pages", |b| b.iter(|| black_box(align_fuzzy(&index.record, &quote, 0.2))));
}

criterion_group!(benches, retrieval, alignment);
criterion_main!(benches);
