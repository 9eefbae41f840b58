//! Batch loss evaluation on the rayon pool versus a single worker thread.
//!
//! Build without default features to time the plain-iterator fallback:
//! `cargo bench --no-default-features` runs the same groups sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use agwe::agwe::{multiview_loss, ContrastiveConfig, EmbeddingDims, EmbeddingModel, SegmentedUtterance};
use agwe::corpus::{generate_synthetic_corpus, Corpus, SyntheticConfig, Utterance, Vocabulary};
use agwe::nets::Pooling;
use agwe::recognizer::{joint_loss, PredictionMode, RecognizerDims, RecognizerModel};

const BATCH: usize = 32;

fn corpus() -> (Corpus, Vocabulary) {
    let syn = generate_synthetic_corpus(&SyntheticConfig {
        utterances: BATCH,
        heldout_utterances: 1,
        ..Default::default()
    })
    .expect("valid config");
    let corpus: Corpus = syn.into();
    let vocab = Vocabulary::from_counts(corpus.train_counts(), 1).expect("vocabulary");
    (corpus, vocab)
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1, n];
    sizes.dedup();
    sizes
        .into_iter()
        .map(|t| {
            (
                t,
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .expect("thread pool"),
            )
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn on_pools<F: Fn() + Sync>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    for (threads, pool) in pools() {
        group.bench_function(BenchmarkId::new("threads", threads), |b| b.iter(|| pool.install(&f)));
    }
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn on_pools<F: Fn() + Sync>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", 1), |b| b.iter(&f));
    group.finish();
}

fn recognizer_batch(c: &mut Criterion) {
    let (corpus, vocab) = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = RecognizerDims {
        feature_dim: 16,
        hidden: 32,
        layers: 1,
        embed_dim: 32,
        vocab_size: vocab.len(),
    };
    let model = RecognizerModel::new(dims, PredictionMode::Baseline, &mut rng).expect("model");
    let batch: Vec<&Utterance> = corpus.train.iter().collect();
    on_pools(c, "ctc_batch_loss", || {
        black_box(joint_loss(&model, &batch, &vocab, 0.0, None, None).expect("loss"));
    });
}

fn embedding_batch(c: &mut Criterion) {
    let (corpus, vocab) = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dims = EmbeddingDims {
        feature_dim: 16,
        hidden: 32,
        layers: 1,
        char_embed_dim: 16,
        embed_dim: 32,
    };
    let model = EmbeddingModel::new(dims, Pooling::Mean, &mut rng).expect("model");
    let segs = SegmentedUtterance::collect(&corpus.train, &vocab, 6);
    let batch: Vec<&SegmentedUtterance> = segs.iter().collect();
    let cfg = ContrastiveConfig::default();
    on_pools(c, "multiview_batch_loss", || {
        black_box(multiview_loss(&model, &batch, &cfg, cfg.k_start, None).expect("loss"));
    });
}

criterion_group!(benches, recognizer_batch, embedding_batch);
criterion_main!(benches);
