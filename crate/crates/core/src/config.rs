//! `key = value` run configuration shared by every subcommand.
//!
//! Files hold one setting per line; `#` starts a comment. Every key must be
//! one of [`KEYS`]; anything else is rejected so that typos fail loudly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agwe::{AgweTrainConfig, ContrastiveConfig, EmbeddingDims};
use crate::corpus::synth::{IntRange, SyntheticConfig};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::nets::Pooling;
use crate::recognizer::{A2wTrainConfig, PredictionMode, PretrainConfig, RecognizerDims};

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "AGWE_SEED";

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "1",
        "base seed for data generation, initialization and batch order",
    ),
    ("corpus", "corpus", "corpus directory"),
    ("run_dir", "run", "directory for checkpoints, logs and hypotheses"),
    // synthetic data
    ("vocab_size", "50", "in-vocabulary word types"),
    ("rare_words", "100", "word types seen once in training (train as <unk>)"),
    ("rare_occurrences", "1", "training occurrences of each rare word"),
    ("oov_words", "10", "word types seen only in the test split"),
    ("utterances", "500", "training utterances"),
    ("heldout_utterances", "100", "held-out utterances"),
    ("test_utterances", "60", "test utterances, one OOV word each"),
    ("feature_dim", "16", "acoustic feature dimension"),
    ("noise_stddev", "0.3", "feature noise"),
    ("word_len", "3-6", "word length range in characters"),
    ("frames_per_char", "2-5", "frames per character range"),
    ("words_per_utterance", "3-5", "words per utterance range"),
    ("silence_frames", "1-3", "silence frames between words"),
    // vocabulary
    ("min_count", "2", "training count a word needs to enter the vocabulary"),
    ("min_frames", "6", "shortest word segment used for embedding training"),
    // model sizes
    ("hidden", "32", "recurrent units per direction"),
    ("layers", "1", "stacked bidirectional layers"),
    ("embed_dim", "32", "embedding dimension"),
    ("char_embed_dim", "16", "character input embedding size"),
    ("pooling", "mean", "segment pooling: mean or last"),
    // embedding training
    ("margin", "0.4", "contrastive margin"),
    ("k_start", "15", "hard negatives at the first batch"),
    ("k_end", "5", "hard negatives after annealing"),
    ("k_anneal_batches", "300", "batches over which k anneals"),
    ("agwe_batch", "16", "utterances per embedding batch"),
    ("agwe_lr", "0.005", "Adam learning rate"),
    ("agwe_epochs", "10", "maximum embedding epochs"),
    ("agwe_dropout", "0", "dropout between recurrent layers"),
    // recognizer training
    ("mode", "baseline", "baseline, initialized, regularized or frozen"),
    ("lambda", "0.5", "regularization weight in [0, 1)"),
    ("a2w_lr", "0.04", "Nesterov SGD learning rate"),
    ("a2w_momentum", "0.9", "Nesterov momentum"),
    ("a2w_batch", "16", "utterances per recognizer batch"),
    ("a2w_epochs", "12", "maximum recognizer epochs"),
    ("a2w_dropout", "0", "dropout between recurrent layers"),
    ("clip_norm", "5", "global gradient norm limit; 0 disables"),
    ("pretrain_epochs", "6", "character CTC epochs before baseline training"),
    ("pretrain_lr", "0.005", "character CTC Adam learning rate"),
    // artifacts
    (
        "agwe_checkpoint",
        "",
        "embedding checkpoint; default <run_dir>/agwe.ckpt",
    ),
    (
        "a2w_checkpoint",
        "",
        "recognizer checkpoint; default <run_dir>/a2w-<mode>.ckpt",
    ),
    ("hypotheses", "", "decode output; default <run_dir>/hyp-<mode>.jsonl"),
    ("split", "test", "split to decode or evaluate: train, heldout or test"),
    ("n_best", "5", "candidates kept per rescored <unk>"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

fn known_key(key: &str) -> Result<&'static str> {
    KEYS.iter()
        .map(|(k, _, _)| *k)
        .find(|k| *k == key)
        .ok_or_else(|| Error::config(format!("unknown configuration key {key:?}")))
}

fn parse_range(key: &str, s: &str) -> Result<IntRange> {
    let bad = || Error::config(format!("{key}: expected MIN-MAX, got {s:?}"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let r = IntRange::new(
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    );
    if r.min > r.max {
        return Err(bad());
    }
    Ok(r)
}

impl RunConfig {
    /// Defaults overlaid with the settings in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = known_key(key)?;
        self.values.insert(key, value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<()> {
        for s in sets {
            let s = s.as_ref();
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {s:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies [`SEED_ENV`] when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var(SEED_ENV) {
            seed.parse::<u64>()
                .map_err(|_| Error::config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            self.set("seed", &seed)?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        Ok(&self.values[known_key(key)?])
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::config(format!("{key}: cannot parse {raw:?}")))
    }

    fn range(&self, key: &str) -> Result<IntRange> {
        parse_range(key, self.raw(key)?)
    }

    /// The settings as a config file, keys in table order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.values[k]);
        }
        out
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn corpus_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.raw("corpus")?))
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.raw("run_dir")?))
    }

    fn path_or(&self, key: &str, default: String) -> Result<PathBuf> {
        let raw = self.raw(key)?;
        Ok(if raw.is_empty() {
            self.run_dir()?.join(default)
        } else {
            PathBuf::from(raw)
        })
    }

    pub fn agwe_checkpoint(&self) -> Result<PathBuf> {
        self.path_or("agwe_checkpoint", "agwe.ckpt".into())
    }

    pub fn a2w_checkpoint(&self) -> Result<PathBuf> {
        let mode = self.mode()?;
        self.path_or("a2w_checkpoint", format!("a2w-{}.ckpt", mode.name()))
    }

    pub fn hypotheses(&self) -> Result<PathBuf> {
        let mode = self.mode()?;
        self.path_or("hypotheses", format!("hyp-{}.jsonl", mode.name()))
    }

    pub fn split(&self) -> Result<Split> {
        Split::parse(self.raw("split")?)
    }

    pub fn mode(&self) -> Result<PredictionMode> {
        let mode = PredictionMode::parse(self.raw("mode")?, self.get("lambda")?)?;
        mode.validate()?;
        Ok(mode)
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig> {
        let cfg = SyntheticConfig {
            seed: self.seed()?,
            vocab_size: self.get("vocab_size")?,
            rare_words: self.get("rare_words")?,
            rare_occurrences: self.get("rare_occurrences")?,
            oov_words: self.get("oov_words")?,
            word_len_range: self.range("word_len")?,
            frames_per_char_range: self.range("frames_per_char")?,
            noise_stddev: self.get("noise_stddev")?,
            feature_dim: self.get("feature_dim")?,
            utterances: self.get("utterances")?,
            heldout_utterances: self.get("heldout_utterances")?,
            test_utterances: self.get("test_utterances")?,
            words_per_utterance_range: self.range("words_per_utterance")?,
            silence_frames_range: self.range("silence_frames")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn min_count(&self) -> Result<usize> {
        self.get("min_count")
    }

    pub fn min_frames(&self) -> Result<usize> {
        self.get("min_frames")
    }

    pub fn pooling(&self) -> Result<Pooling> {
        Pooling::parse(self.raw("pooling")?)
    }

    pub fn embedding_dims(&self, feature_dim: usize) -> Result<EmbeddingDims> {
        let dims = EmbeddingDims {
            feature_dim,
            hidden: self.get("hidden")?,
            layers: self.get("layers")?,
            char_embed_dim: self.get("char_embed_dim")?,
            embed_dim: self.get("embed_dim")?,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn recognizer_dims(&self, feature_dim: usize, vocab_size: usize) -> Result<RecognizerDims> {
        Ok(RecognizerDims {
            feature_dim,
            hidden: self.get("hidden")?,
            layers: self.get("layers")?,
            embed_dim: self.get("embed_dim")?,
            vocab_size,
        })
    }

    pub fn agwe_train(&self) -> Result<AgweTrainConfig> {
        let cfg = AgweTrainConfig {
            contrastive: ContrastiveConfig {
                margin: self.get("margin")?,
                k_start: self.get("k_start")?,
                k_end: self.get("k_end")?,
                k_anneal_batches: self.get("k_anneal_batches")?,
                batch_size: self.get("agwe_batch")?,
            },
            learning_rate: self.get("agwe_lr")?,
            max_epochs: self.get("agwe_epochs")?,
            dropout: self.get("agwe_dropout")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn a2w_train(&self) -> Result<A2wTrainConfig> {
        let clip: f64 = self.get("clip_norm")?;
        let cfg = A2wTrainConfig {
            mode: self.mode()?,
            learning_rate: self.get("a2w_lr")?,
            momentum: self.get("a2w_momentum")?,
            batch_size: self.get("a2w_batch")?,
            dropout: self.get("a2w_dropout")?,
            max_epochs: self.get("a2w_epochs")?,
            seed: self.seed()?,
            clip_norm: (clip != 0.0).then_some(clip),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            epochs: self.get("pretrain_epochs")?,
            learning_rate: self.get("pretrain_lr")?,
            batch_size: self.get("a2w_batch")?,
            seed: self.seed()?,
        })
    }

    pub fn n_best(&self) -> Result<usize> {
        let n = self.get("n_best")?;
        if n == 0 {
            return Err(Error::config("n_best must be at least 1"));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = RunConfig::parse("# toy\nseed = 7\nmode=frozen # comment\n\n").unwrap();
        assert_eq!(cfg.seed().unwrap(), 7);
        assert_eq!(cfg.mode().unwrap(), PredictionMode::Frozen);
        cfg.apply_overrides(&["seed=9", "lambda = 0.25"]).unwrap();
        assert_eq!(cfg.seed().unwrap(), 9);
        assert_eq!(cfg.get::<f64>("lambda").unwrap(), 0.25);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in ["sed = 1", "seed", "seed = x", "word_len = 5-3"] {
            let e = RunConfig::parse(text).and_then(|c| c.seed().and(c.synthetic().map(|_| ())));
            assert!(matches!(e, Err(Error::Config(_))), "{text}: {e:?}");
        }
        let cfg = RunConfig::parse("mode = regularized\nlambda = 1.0").unwrap();
        assert!(matches!(cfg.mode(), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trips() {
        let cfg = RunConfig::parse("seed = 3\nhidden = 8").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn default_paths_follow_mode() {
        let cfg = RunConfig::parse("run_dir = out\nmode = frozen").unwrap();
        assert_eq!(cfg.a2w_checkpoint().unwrap(), PathBuf::from("out/a2w-frozen.ckpt"));
        assert_eq!(cfg.agwe_checkpoint().unwrap(), PathBuf::from("out/agwe.ckpt"));
        assert_eq!(cfg.hypotheses().unwrap(), PathBuf::from("out/hyp-frozen.jsonl"));
    }
}
