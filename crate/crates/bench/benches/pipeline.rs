use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use cotforge_core::export::{split, SplitRatios};
use cotforge_core::lexical::{tokenize, NGramModel};
use cotforge_core::orchestrator::{LoopConfig, Orchestrator};
use cotforge_core::provider::mock::{MockCotGenerator, MockPromptGenerator, OverlapJudge};
use cotforge_core::provider::{ProviderSet, RetryPolicy};
use cotforge_core::scoring::Scorer;
use cotforge_core::synth::{expert_rationale, synthetic_corpus};
use cotforge_core::CotVariant;

fn scoring(c: &mut Criterion) {
    let scorer = Scorer::with_defaults();
    let corpus = synthetic_corpus(64, 1);
    let texts: Vec<String> = corpus.iter().map(|s| expert_rationale(s, &s.qa_pairs[0].answer)).collect();
    let mut g = c.benchmark_group("scoring");
    g.throughput(Throughput::Elements(texts.len() as u64));
    g.bench_function("score_text", |b| {
        b.iter(|| {
            for (s, t) in corpus.iter().zip(&texts) {
                black_box(scorer.score_text(t, CotVariant::VideoCot, s).unwrap());
            }
        })
    });
    g.finish();
}

fn lexical(c: &mut Criterion) {
    let corpus = synthetic_corpus(64, 2);
    let text: String = corpus.iter().map(|s| expert_rationale(s, &s.qa_pairs[0].answer)).collect::<Vec<_>>().join(" ");
    let mut g = c.benchmark_group("lexical");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("tokenize", |b| b.iter(|| black_box(tokenize(&text))));
    let lm = NGramModel::seed::<&str>(&[]);
    g.bench_function("perplexity", |b| b.iter(|| black_box(lm.perplexity(&text).unwrap())));
    g.finish();
}

fn splitting(c: &mut Criterion) {
    let ids: Vec<String> = (0..10_000).map(|i| format!("video{i:05}")).collect();
    let ratios = SplitRatios::default();
    let mut g = c.benchmark_group("split");
    g.throughput(Throughput::Elements(ids.len() as u64));
    g.bench_function("10k_ids", |b| b.iter(|| black_box(split(&ids, &ratios, 7).unwrap())));
    g.finish();
}

fn round(c: &mut Criterion) {
    let corpus = synthetic_corpus(100, 3);
    let mut g = c.benchmark_group("orchestrator");
    g.sample_size(20);
    for parallelism in [1, 4] {
        g.bench_function(format!("round_100_samples_p{parallelism}"), |b| {
            b.iter_batched(
                || {
                    let p = ProviderSet::new(
                        MockPromptGenerator::default(),
                        MockCotGenerator::new(9),
                        OverlapJudge,
                        RetryPolicy::immediate(0),
                    );
                    let config = LoopConfig { parallelism, ..Default::default() };
                    let mut o = Orchestrator::new(p, Scorer::with_defaults(), config);
                    for s in &corpus {
                        o.add_sample(s.clone()).unwrap();
                    }
                    o
                },
                |mut o| black_box(o.run_round(&mut Vec::new()).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, scoring, lexical, splitting, round);
criterion_main!(benches);
