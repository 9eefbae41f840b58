//! On-disk corpus layout.
//!
//! ```text
//! <dir>/vocab.tsv     word<TAB>training count<TAB>spelling
//! <dir>/lexicon.tsv   word<TAB>spelling, for every word in any split
//! <dir>/utts.jsonl    {"id", "split", "words", "alignments", "features"}
//! <dir>/feats/<id>.bin
//! ```
//!
//! Feature files hold an 8-byte header (frames and feature dimension as
//! little-endian `u32`) followed by row-major little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::alphabet::CharSequence;
use super::spell::spell;
use super::synth::SyntheticCorpus;
use super::utterance::{Span, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct UttRecord {
    id: String,
    split: Split,
    words: Vec<String>,
    alignments: Vec<(usize, usize)>,
    features: String,
}

/// A corpus loaded from (or destined for) a corpus directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub heldout: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub lexicon: BTreeMap<String, CharSequence>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Heldout => &self.heldout,
            Split::Test => &self.test,
        }
    }

    /// Word counts over the training split.
    pub fn train_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for w in self.train.iter().flat_map(|u| &u.words) {
            *counts.entry(w.clone()).or_default() += 1;
        }
        counts
    }
}

impl From<SyntheticCorpus> for Corpus {
    fn from(s: SyntheticCorpus) -> Self {
        Self {
            train: s.train,
            heldout: s.heldout,
            test: s.test,
            lexicon: s.lexicon,
        }
    }
}

pub fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (t, f) = m.shape();
    let dim = |n: usize| u32::try_from(n).map_err(|_| Error::data("matrix too large for feature file"));
    w.write_all(&dim(t)?.to_le_bytes())?;
    w.write_all(&dim(f)?.to_le_bytes())?;
    for &x in m.as_slice() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::data(format!("{}: truncated feature header", path.display())));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let f = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[8..];
    if payload.len() != t * f * 4 {
        return Err(Error::data(format!(
            "{}: header says {t}x{f} but payload has {} bytes",
            path.display(),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::from_vec(t, f, data)
}

fn sanitize(id: &str) -> Result<&str> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(Error::data(format!("utterance id {id:?} is not usable as a file name")));
    }
    Ok(id)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join("feats"))?;

    let mut vocab = BufWriter::new(File::create(dir.join("vocab.tsv"))?);
    for (word, count) in corpus.train_counts() {
        writeln!(vocab, "{word}\t{count}\t{}", spell(&word)?)?;
    }
    vocab.flush()?;

    let mut lex = BufWriter::new(File::create(dir.join("lexicon.tsv"))?);
    for (word, chars) in &corpus.lexicon {
        writeln!(lex, "{word}\t{chars}")?;
    }
    lex.flush()?;

    let mut utts = BufWriter::new(File::create(dir.join("utts.jsonl"))?);
    for (split, list) in [
        (Split::Train, &corpus.train),
        (Split::Heldout, &corpus.heldout),
        (Split::Test, &corpus.test),
    ] {
        for u in list {
            let rel = format!("feats/{}.bin", sanitize(&u.id)?);
            write_features(&dir.join(&rel), &u.features)?;
            let rec = UttRecord {
                id: u.id.clone(),
                split,
                words: u.words.clone(),
                alignments: u.alignments.iter().map(|s| (s.start, s.end)).collect(),
                features: rel,
            };
            serde_json::to_writer(&mut utts, &rec)?;
            utts.write_all(b"\n")?;
        }
    }
    utts.flush()?;
    Ok(())
}

/// Reads `vocab.tsv` as `(word, count)` pairs.
pub fn read_vocab_counts(path: &Path) -> Result<Vec<(String, usize)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(word), Some(count)) = (cols.next(), cols.next()) else {
            return Err(Error::data(format!(
                "{}:{}: expected word<TAB>count",
                path.display(),
                n + 1
            )));
        };
        let count = count
            .parse()
            .map_err(|_| Error::data(format!("{}:{}: bad count {count:?}", path.display(), n + 1)))?;
        out.push((word.to_string(), count));
    }
    Ok(out)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let lex_path = dir.join("lexicon.tsv");
    if lex_path.exists() {
        for line in BufReader::new(File::open(&lex_path)?).lines() {
            let line = line?;
            if let Some(word) = line.split('\t').next().filter(|w| !w.is_empty()) {
                corpus.lexicon.insert(word.to_string(), spell(word)?);
            }
        }
    }
    let utts_path = dir.join("utts.jsonl");
    let reader =
        BufReader::new(File::open(&utts_path).map_err(|e| Error::data(format!("{}: {e}", utts_path.display())))?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UttRecord = serde_json::from_str(&line)?;
        let features = read_features(&dir.join(&rec.features))?;
        let spans = rec.alignments.iter().map(|&(a, b)| Span::new(a, b)).collect();
        let u = Utterance::new(rec.id, features, rec.words, spans)?;
        match rec.split {
            Split::Train => corpus.train.push(u),
            Split::Heldout => corpus.heldout.push(u),
            Split::Test => corpus.test.push(u),
        }
    }
    Ok(corpus)
}
