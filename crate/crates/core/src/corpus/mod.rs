//! Corpus data model: character alphabet, spelling, vocabularies, utterances
//! with word alignments, the synthetic generator and the on-disk format.

mod alphabet;
pub mod io;
mod spell;
pub mod synth;
mod utterance;
mod vocab;

pub use alphabet::{CharAlphabet, CharSequence, ALPHABET_SIZE, NOISE_MARKERS};
pub use io::{read_corpus, write_corpus, Corpus, Split};
pub use spell::spell;
pub use synth::{generate_synthetic_corpus, IntRange, SyntheticConfig, SyntheticCorpus};
pub use utterance::{extract_segments, Span, Utterance, WordSegment, DEFAULT_MIN_SEGMENT_FRAMES};
pub use vocab::{build_vocabulary, VocabEntry, Vocabulary, BLANK, UNK};
