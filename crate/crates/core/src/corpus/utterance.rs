use serde::{Deserialize, Serialize};

use super::alphabet::CharSequence;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Half-open frame interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Frames × features matrix with its word transcript and per-word alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Matrix,
    pub words: Vec<String>,
    pub alignments: Vec<Span>,
}

impl Utterance {
    pub fn new(id: String, features: Matrix, words: Vec<String>, alignments: Vec<Span>) -> Result<Self> {
        let u = Self {
            id,
            features,
            words,
            alignments,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.words.len() != self.alignments.len() {
            return Err(Error::data(format!(
                "utterance {}: {} words but {} alignments",
                self.id,
                self.words.len(),
                self.alignments.len()
            )));
        }
        let t = self.num_frames();
        let mut prev_end = 0;
        for span in &self.alignments {
            if span.is_empty() || span.start < prev_end || span.end > t {
                return Err(Error::data(format!(
                    "utterance {}: bad alignment [{}, {}) with {} frames",
                    self.id, span.start, span.end, t
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }
}

/// One word occurrence usable for embedding training.
#[derive(Clone, Debug, PartialEq)]
pub struct WordSegment {
    pub utterance_id: String,
    pub word_id: usize,
    pub chars: CharSequence,
    pub frames: Span,
}

pub const DEFAULT_MIN_SEGMENT_FRAMES: usize = 6;

/// In-vocabulary word segments spanning at least `min_frames` frames, in
/// transcript order.
pub fn extract_segments(u: &Utterance, vocab: &Vocabulary, min_frames: usize) -> Vec<WordSegment> {
    u.words
        .iter()
        .zip(&u.alignments)
        .filter_map(|(w, span)| {
            let id = vocab.get(w)?;
            if Vocabulary::is_reserved(id) || span.len() < min_frames {
                return None;
            }
            Some(WordSegment {
                utterance_id: u.id.clone(),
                word_id: id,
                chars: vocab.chars(id)?.clone(),
                frames: *span,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocabulary;

    fn utt(words: &[&str], spans: &[(usize, usize)], frames: usize) -> Utterance {
        Utterance::new(
            "u".into(),
            Matrix::zeros(frames, 2),
            words.iter().map(|s| s.to_string()).collect(),
            spans.iter().map(|&(a, b)| Span::new(a, b)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn short_segments_are_dropped() {
        let v = build_vocabulary(&[vec!["AB".to_string(), "CD".to_string()]], 1).unwrap();
        let u = utt(&["AB", "CD"], &[(0, 5), (5, 12)], 12);
        let segs = extract_segments(&u, &v, 6);
        assert_eq!(segs.len(), 1);
        assert_eq!(v.word(segs[0].word_id), "CD");
    }

    #[test]
    fn long_in_vocab_segments_all_kept() {
        let v = build_vocabulary(&[vec!["AB".to_string(), "CD".to_string()]], 1).unwrap();
        let u = utt(&["AB", "CD", "AB"], &[(0, 6), (7, 14), (14, 30)], 31);
        let segs = extract_segments(&u, &v, 6);
        assert_eq!(segs.iter().map(|s| s.frames.start).collect::<Vec<_>>(), vec![0, 7, 14]);
    }

    #[test]
    fn fully_filtered_utterance_gives_nothing() {
        let v = build_vocabulary(&[vec!["AB".to_string()]], 1).unwrap();
        let u = utt(&["ZZ", "AB"], &[(0, 8), (8, 10)], 10);
        assert!(extract_segments(&u, &v, 6).is_empty());
    }

    #[test]
    fn invalid_alignments_rejected() {
        let bad = Utterance::new(
            "u".into(),
            Matrix::zeros(5, 1),
            vec!["A".into(), "B".into()],
            vec![Span::new(0, 3), Span::new(2, 5)],
        );
        assert!(bad.is_err());
        let past_end = Utterance::new("u".into(), Matrix::zeros(5, 1), vec!["A".into()], vec![Span::new(0, 6)]);
        assert!(past_end.is_err());
        let mismatch = Utterance::new("u".into(), Matrix::zeros(5, 1), vec!["A".into()], vec![]);
        assert!(mismatch.is_err());
    }
}
