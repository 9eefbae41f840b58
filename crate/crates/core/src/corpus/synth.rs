//! Deterministic synthetic corpus for desk-scale experiments.
//!
//! Every character owns a prototype vector in feature space. A spoken word is
//! the concatenation of its characters' prototypes, each held for a random
//! number of frames, plus Gaussian noise. Words are separated by noise-only
//! silence frames that carry no label.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::alphabet::{CharSequence, ALPHABET_SIZE};
use super::spell::spell;
use super::utterance::{Span, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(self.min..=self.max)
    }

    fn is_valid(&self) -> bool {
        self.min <= self.max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Words frequent enough to enter the training vocabulary.
    pub vocab_size: usize,
    /// Words placed into training utterances only `rare_occurrences` times
    /// each, so that they fall below the vocabulary threshold and train as
    /// `<unk>`.
    pub rare_words: usize,
    pub rare_occurrences: usize,
    /// Words that never occur in training or held-out data; each test
    /// utterance contains one of them.
    pub oov_words: usize,
    pub word_len_range: IntRange,
    pub frames_per_char_range: IntRange,
    pub noise_stddev: f64,
    pub feature_dim: usize,
    pub utterances: usize,
    pub heldout_utterances: usize,
    pub test_utterances: usize,
    pub words_per_utterance_range: IntRange,
    pub silence_frames_range: IntRange,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            vocab_size: 50,
            rare_words: 0,
            rare_occurrences: 1,
            oov_words: 0,
            word_len_range: IntRange::new(3, 6),
            frames_per_char_range: IntRange::new(2, 5),
            noise_stddev: 0.3,
            feature_dim: 16,
            utterances: 500,
            heldout_utterances: 100,
            test_utterances: 0,
            words_per_utterance_range: IntRange::new(3, 5),
            silence_frames_range: IntRange::new(1, 3),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.utterances == 0 {
            return Err(Error::config("synthetic corpus needs at least one training utterance"));
        }
        if self.vocab_size == 0 {
            return Err(Error::config("synthetic corpus needs a nonzero vocabulary"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        let ranges = [
            ("word_len_range", self.word_len_range),
            ("frames_per_char_range", self.frames_per_char_range),
            ("words_per_utterance_range", self.words_per_utterance_range),
            ("silence_frames_range", self.silence_frames_range),
        ];
        for (name, r) in ranges {
            if !r.is_valid() {
                return Err(Error::config(format!("{name} is empty ({}..={})", r.min, r.max)));
            }
        }
        if self.word_len_range.min == 0
            || self.frames_per_char_range.min == 0
            || self.words_per_utterance_range.min == 0
        {
            return Err(Error::config(
                "word length, frames per char and words per utterance must be ≥ 1",
            ));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(Error::config("noise_stddev must be finite and non-negative"));
        }
        if self.test_utterances > 0 && self.oov_words == 0 {
            return Err(Error::config("test utterances need oov_words > 0"));
        }
        let total = self.vocab_size + self.rare_words + self.oov_words;
        let capacity = (self.word_len_range.min..=self.word_len_range.max)
            .map(|n| 26usize.saturating_pow(n as u32))
            .fold(0usize, usize::saturating_add);
        if total > capacity {
            return Err(Error::config("not enough distinct words of the requested lengths"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<Utterance>,
    pub heldout: Vec<Utterance>,
    /// Utterances containing one out-of-vocabulary word each.
    pub test: Vec<Utterance>,
    pub lexicon: BTreeMap<String, CharSequence>,
    pub vocab_words: Vec<String>,
    pub rare_words: Vec<String>,
    pub oov_words: Vec<String>,
    /// Per-character prototype vectors (35 × feature_dim).
    pub prototypes: Matrix,
}

struct Renderer<'a> {
    prototypes: &'a Matrix,
    lexicon: &'a BTreeMap<String, CharSequence>,
    cfg: &'a SyntheticConfig,
    noise: Normal<f64>,
}

impl Renderer<'_> {
    fn push_frame<R: Rng>(&self, rng: &mut R, base: Option<&[f64]>, frames: &mut Vec<f64>) {
        for j in 0..self.cfg.feature_dim {
            let mean = base.map_or(0.0, |b| b[j]);
            frames.push(mean + self.noise.sample(rng));
        }
    }

    fn silence<R: Rng>(&self, rng: &mut R, frames: &mut Vec<f64>) -> usize {
        let n = self.cfg.silence_frames_range.sample(rng);
        for _ in 0..n {
            self.push_frame(rng, None, frames);
        }
        n
    }

    fn render<R: Rng>(&self, rng: &mut R, id: String, words: Vec<String>) -> Result<Utterance> {
        let mut frames = Vec::new();
        let mut t = self.silence(rng, &mut frames);
        let mut spans = Vec::with_capacity(words.len());
        for w in &words {
            let start = t;
            for &c in self.lexicon[w].ids() {
                let dur = self.cfg.frames_per_char_range.sample(rng);
                for _ in 0..dur {
                    self.push_frame(rng, Some(self.prototypes.row(c as usize)), &mut frames);
                }
                t += dur;
            }
            spans.push(Span::new(start, t));
            t += self.silence(rng, &mut frames);
        }
        let features = Matrix::from_vec(t, self.cfg.feature_dim, frames)?;
        Utterance::new(id, features, words, spans)
    }
}

fn random_word<R: Rng>(rng: &mut R, len: IntRange) -> String {
    let n = len.sample(rng);
    (0..n).map(|_| (b'A' + rng.random_range(0..26u8)) as char).collect()
}

/// Builds a corpus that is a pure function of `cfg`.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let proto: Vec<f64> = (0..ALPHABET_SIZE * cfg.feature_dim)
        .map(|_| unit.sample(&mut rng))
        .collect();
    let prototypes = Matrix::from_vec(ALPHABET_SIZE, cfg.feature_dim, proto)?;

    let total = cfg.vocab_size + cfg.rare_words + cfg.oov_words;
    let mut seen = BTreeSet::new();
    let mut inventory = Vec::with_capacity(total);
    while inventory.len() < total {
        let w = random_word(&mut rng, cfg.word_len_range);
        if seen.insert(w.clone()) {
            inventory.push(w);
        }
    }
    let oov_words = inventory.split_off(cfg.vocab_size + cfg.rare_words);
    let rare_words = inventory.split_off(cfg.vocab_size);
    let vocab_words = inventory;

    let mut lexicon = BTreeMap::new();
    for w in vocab_words.iter().chain(&rare_words).chain(&oov_words) {
        lexicon.insert(w.clone(), spell(w)?);
    }

    let noise = Normal::new(0.0, cfg.noise_stddev).map_err(|e| Error::config(e.to_string()))?;
    let renderer = Renderer {
        prototypes: &prototypes,
        lexicon: &lexicon,
        cfg,
        noise,
    };

    let draw_transcript = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = cfg.words_per_utterance_range.sample(rng);
        (0..n)
            .map(|_| vocab_words[rng.random_range(0..vocab_words.len())].clone())
            .collect()
    };

    let mut train_words: Vec<Vec<String>> = (0..cfg.utterances).map(|_| draw_transcript(&mut rng)).collect();
    // each rare word overwrites `rare_occurrences` random training tokens
    let mut used = BTreeSet::new();
    for w in &rare_words {
        for _ in 0..cfg.rare_occurrences {
            for _attempt in 0..1000 {
                let u = rng.random_range(0..train_words.len());
                let p = rng.random_range(0..train_words[u].len());
                if used.insert((u, p)) {
                    train_words[u][p] = w.clone();
                    break;
                }
            }
        }
    }
    let heldout_words: Vec<Vec<String>> = (0..cfg.heldout_utterances).map(|_| draw_transcript(&mut rng)).collect();
    let mut test_words = Vec::with_capacity(cfg.test_utterances);
    let mut oov_cycle: Vec<usize> = Vec::new();
    for _ in 0..cfg.test_utterances {
        if oov_cycle.is_empty() {
            oov_cycle = (0..oov_words.len()).collect();
            oov_cycle.shuffle(&mut rng);
        }
        let oov = oov_cycle.pop().expect("refilled above");
        let mut words = draw_transcript(&mut rng);
        let p = rng.random_range(0..words.len());
        words[p] = oov_words[oov].clone();
        test_words.push(words);
    }

    let mut render_all = |prefix: &str, transcripts: Vec<Vec<String>>| -> Result<Vec<Utterance>> {
        transcripts
            .into_iter()
            .enumerate()
            .map(|(i, words)| renderer.render(&mut rng, format!("{prefix}-{i:05}"), words))
            .collect()
    };
    let train = render_all("train", train_words)?;
    let heldout = render_all("heldout", heldout_words)?;
    let test = render_all("test", test_words)?;

    Ok(SyntheticCorpus {
        train,
        heldout,
        test,
        lexicon,
        vocab_words,
        rare_words,
        oov_words,
        prototypes,
    })
}
