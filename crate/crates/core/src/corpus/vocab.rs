use std::collections::{BTreeMap, HashMap};

use super::alphabet::CharSequence;
use super::spell::spell;
use crate::error::{Error, Result};

pub const BLANK: &str = "<blank>";
pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq)]
pub struct VocabEntry {
    pub word: String,
    pub count: usize,
    /// `None` for the reserved symbols.
    pub chars: Option<CharSequence>,
}

/// Word inventory with dense ids. Id 0 is the CTC blank, id 1 is `<unk>`,
/// and the kept words follow in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub const BLANK_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Keeps every word whose count reaches `min_count`.
    pub fn from_counts<I>(counts: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (String, usize)>,
    {
        let mut merged: BTreeMap<String, usize> = BTreeMap::new();
        for (w, c) in counts {
            if w == BLANK || w == UNK {
                return Err(Error::data(format!("{w} is a reserved symbol")));
            }
            *merged.entry(w).or_default() += c;
        }
        let mut entries = vec![
            VocabEntry {
                word: BLANK.to_string(),
                count: 0,
                chars: None,
            },
            VocabEntry {
                word: UNK.to_string(),
                count: 0,
                chars: None,
            },
        ];
        for (word, count) in merged {
            if count >= min_count {
                let chars = spell(&word)?;
                entries.push(VocabEntry {
                    word,
                    count,
                    chars: Some(chars),
                });
            } else {
                entries[Self::UNK_ID].count += count;
            }
        }
        let index = entries.iter().enumerate().map(|(i, e)| (e.word.clone(), i)).collect();
        Ok(Self {
            entries,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    /// Id of `word`, or `None` when it is out of vocabulary.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Id of `word`, mapping anything unknown to `<unk>`.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.entries[id].word
    }

    pub fn chars(&self, id: usize) -> Option<&CharSequence> {
        self.entries[id].chars.as_ref()
    }

    pub fn is_reserved(id: usize) -> bool {
        id == Self::BLANK_ID || id == Self::UNK_ID
    }

    /// Ids of the non-reserved words.
    pub fn word_ids(&self) -> std::ops::Range<usize> {
        2..self.entries.len()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }
}

/// Counts words over `transcripts` and keeps those seen at least `min_count` times.
pub fn build_vocabulary<S: AsRef<str>>(transcripts: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if transcripts.is_empty() {
        return Err(Error::data("cannot build a vocabulary from zero transcripts"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for w in transcripts.iter().flatten() {
        *counts.entry(w.as_ref().to_string()).or_default() += 1;
    }
    Vocabulary::from_counts(counts, min_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn threshold_sends_rare_words_to_unk() {
        let v = build_vocabulary(&[t(&["A", "A", "B"]), t(&["A"])], 2).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.word(0), BLANK);
        assert_eq!(v.word(1), UNK);
        assert_eq!(v.word(2), "A");
        assert_eq!(v.id("B"), Vocabulary::UNK_ID);
        assert_eq!(v.entries()[2].count, 3);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = build_vocabulary(&[t(&["X", "Y", "Z"])], 1).unwrap();
        assert_eq!(v.len(), 5);
        assert!(["X", "Y", "Z"].iter().all(|w| v.get(w).is_some()));
    }

    #[test]
    fn empty_transcripts_are_an_error() {
        assert!(build_vocabulary::<String>(&[], 1).is_err());
    }

    #[test]
    fn reserved_words_rejected() {
        assert!(build_vocabulary(&[t(&[UNK])], 1).is_err());
    }

    proptest! {
        #[test]
        fn order_insensitive_and_idempotent(
            mut transcripts in prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["AB", "CD", "EF", "GH", "IJ"]), 0..6),
                1..8),
            min_count in 1usize..4,
        ) {
            let owned: Vec<Vec<String>> = transcripts.iter().map(|t| t.iter().map(|s| s.to_string()).collect()).collect();
            let a = build_vocabulary(&owned, min_count).unwrap();
            transcripts.reverse();
            let rev: Vec<Vec<String>> = transcripts.iter().map(|t| t.iter().rev().map(|s| s.to_string()).collect()).collect();
            let b = build_vocabulary(&rev, min_count).unwrap();
            prop_assert_eq!(&a, &b);
            let again = build_vocabulary(&owned, min_count).unwrap();
            prop_assert_eq!(a.entries(), again.entries());
            for e in &a.entries()[2..] {
                prop_assert!(e.count >= min_count);
            }
        }
    }
}
