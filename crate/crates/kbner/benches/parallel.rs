//! Times the batch stages on a multi-thread rayon pool against a one-thread
//! pool running the identical code.
//!
//! With the default `parallel` feature each benchmark runs in both modes;
//! built with `--no-default-features` the library's sequential fallbacks are
//! measured as a single `sequential` series instead. Covered stages: index
//! construction, BM25 scoring over a large candidate set, mini-batch CRF
//! training, and batch prediction.

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kbner::{
    AugmentedInput, CrfModel, Field, KbDocument, SearchIndex, TaggedSequence, TrainConfig,
};

#[cfg(feature = "parallel")]
mod mode {
    pub type Mode = rayon::ThreadPool;

    pub fn all() -> Vec<(&'static str, Mode)> {
        let build = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("pool construction")
        };
        vec![("threads", build(0)), ("one-thread", build(1))]
    }

    pub fn run<T: Send>(mode: &Mode, f: impl FnOnce() -> T + Send) -> T {
        mode.install(f)
    }
}

#[cfg(not(feature = "parallel"))]
mod mode {
    pub type Mode = ();

    pub fn all() -> Vec<(&'static str, Mode)> {
        vec![("sequential", ())]
    }

    pub fn run<T: Send>(_: &Mode, f: impl FnOnce() -> T + Send) -> T {
        f()
    }
}

const DOC_COUNT: usize = 2000;
const VOCAB: usize = 50;

/// Documents over a small shared vocabulary, so a few query words reach most
/// of the corpus and scoring has real work per candidate.
fn document_fixture() -> Vec<KbDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    (0..DOC_COUNT)
        .map(|d| {
            let len = rng.gen_range(8..=16);
            let words: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..VOCAB)))
                .collect();
            let sentence = words.join(" ");
            KbDocument {
                doc_id: format!("doc{d:04}"),
                title: format!("w{} w{}", rng.gen_range(0..VOCAB), rng.gen_range(0..VOCAB)),
                sentence: sentence.clone(),
                sentence_start: 0,
                paragraph_marked: sentence,
                anchors: vec![],
                language: "en".into(),
            }
        })
        .collect()
}

fn sentence_fixture(count: usize, seed: u64) -> Vec<TaggedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(6..=12);
            let entity_at = rng.gen_range(0..len);
            let tokens: Vec<String> = (0..len)
                .map(|i| {
                    if i == entity_at {
                        format!("Name{}", rng.gen_range(0..40))
                    } else {
                        format!("w{}", rng.gen_range(0..VOCAB))
                    }
                })
                .collect();
            let tags: Vec<String> = (0..len)
                .map(|i| {
                    if i == entity_at {
                        format!("B-{}", ["PER", "LOC", "ORG"][rng.gen_range(0..3)])
                    } else {
                        "O".into()
                    }
                })
                .collect();
            let flags = vec![Default::default(); len];
            TaggedSequence::new(tokens, tags, flags).expect("well-formed fixture sentence")
        })
        .collect()
}

fn plain_inputs(sequences: &[TaggedSequence]) -> Vec<AugmentedInput> {
    sequences
        .iter()
        .map(|s| AugmentedInput {
            tokens: s.tokens.clone(),
            gold_tags: None,
            contexts: vec![],
            token_budget: s.tokens.len(),
            flags: s.flags.clone(),
        })
        .collect()
}

fn bench_index_build(c: &mut Criterion) {
    let docs = document_fixture();
    let mut group = c.benchmark_group("index-build");
    group.throughput(Throughput::Elements(DOC_COUNT as u64));
    group.sample_size(20);
    for (name, m) in mode::all() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || docs.clone(),
                |docs| mode::run(&m, || SearchIndex::build(docs).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn bench_search(c: &mut Criterion) {
    let index = SearchIndex::build(document_fixture()).unwrap();
    let query = "w0 w1 w2 w3 w4";
    let mut group = c.benchmark_group("search");
    group.throughput(Throughput::Elements(DOC_COUNT as u64));
    for (name, m) in mode::all() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mode::run(&m, || index.search(Field::Sentence, query, 10).unwrap()))
        });
    }
    group.finish();
}

fn bench_train(c: &mut Criterion) {
    let sequences = sentence_fixture(128, 11);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 32,
        ..Default::default()
    };
    let mut group = c.benchmark_group("train");
    group.throughput(Throughput::Elements(sequences.len() as u64));
    group.sample_size(10);
    for (name, m) in mode::all() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mode::run(&m, || CrfModel::train(&sequences, &config).unwrap()))
        });
    }
    group.finish();
}

fn bench_predict_batch(c: &mut Criterion) {
    let (model, _) = CrfModel::train(&sentence_fixture(128, 11), &TrainConfig::default())
        .expect("fixture model trains");
    let inputs = plain_inputs(&sentence_fixture(256, 12));
    let mut group = c.benchmark_group("predict-batch");
    group.throughput(Throughput::Elements(inputs.len() as u64));
    for (name, m) in mode::all() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mode::run(&m, || model.predict_batch(&inputs).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_index_build,
    bench_search,
    bench_train,
    bench_predict_batch
);
criterion_main!(benches);
