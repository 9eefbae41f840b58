//! Greedy transcription with out-of-vocabulary rescoring.
//!
//! When the first pass emits `<unk>`, the frames of that emission are scored
//! against every known word plus extra rows computed by the character view for
//! words never seen in training, and the best candidate replaces the `<unk>`.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agwe::EmbeddingModel;
use crate::corpus::{CharSequence, Span, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::recognizer::{PredictionMode, RecognizerModel};
use crate::tensor::{dot, log_softmax, norm, Matrix};

/// Words appended to the prediction layer at decode time.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedVocabulary {
    pub words: Vec<String>,
    pub chars: Vec<CharSequence>,
    /// One unit-norm row per extra word.
    pub rows: Matrix,
}

impl ExtendedVocabulary {
    pub fn empty(embed_dim: usize) -> Self {
        Self {
            words: Vec::new(),
            chars: Vec::new(),
            rows: Matrix::zeros(0, embed_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Character-view rows for `words`, which must be distinct and absent from
/// `base`.
pub fn extend_vocabulary(
    agwe: &EmbeddingModel,
    base: &Vocabulary,
    words: &[(String, CharSequence)],
) -> Result<ExtendedVocabulary> {
    let mut seen = BTreeSet::new();
    for (w, _) in words {
        if !seen.insert(w.as_str()) {
            return Err(Error::data(format!("word {w} listed twice in the extension")));
        }
        if base.get(w).is_some() {
            return Err(Error::data(format!("extension word {w} is already in the vocabulary")));
        }
    }
    let d = agwe.embed_dim();
    let mut rows = Matrix::zeros(words.len(), d);
    for (i, (w, c)) in words.iter().enumerate() {
        let g = agwe.embed_chars(c);
        let n = norm(&g);
        if n == 0.0 {
            return Err(Error::Numeric(format!("zero embedding for extension word {w}")));
        }
        rows.row_mut(i).iter_mut().zip(&g).for_each(|(r, v)| *r = v / n);
    }
    Ok(ExtendedVocabulary {
        words: words.iter().map(|(w, _)| w.clone()).collect(),
        chars: words.iter().map(|(_, c)| c.clone()).collect(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescore {
    /// Index into the transcript.
    pub position: usize,
    pub span: Span,
    /// Best candidates first, as `(word, summed log-probability)`.
    pub n_best: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub id: String,
    pub first_pass: Vec<String>,
    pub words: Vec<String>,
    pub rescored: Vec<Rescore>,
    /// Positions still holding `<unk>`.
    pub unresolved: Vec<usize>,
}

impl DecodeResult {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

pub const DEFAULT_N_BEST: usize = 5;

fn unk_positions(words: &[String]) -> Vec<usize> {
    let unk = crate::corpus::UNK;
    words
        .iter()
        .enumerate()
        .filter(|(_, w)| *w == unk)
        .map(|(i, _)| i)
        .collect()
}

/// First-pass greedy transcription only.
pub fn greedy_result(model: &RecognizerModel, utt: &Utterance, vocab: &Vocabulary) -> Result<DecodeResult> {
    let dec = model.transcribe(&utt.features)?;
    let words: Vec<String> = dec.labels.iter().map(|&id| vocab.word(id).to_string()).collect();
    Ok(DecodeResult {
        id: utt.id.clone(),
        first_pass: words.clone(),
        unresolved: unk_positions(&words),
        words,
        rescored: Vec::new(),
    })
}

/// Frames credited to emission `pos`: its own run plus its share of the blank
/// gaps on either side, split at the midpoint between neighbouring emissions.
fn scoring_span(spans: &[Span], pos: usize, frames: usize) -> Span {
    let own = spans[pos];
    let start = if pos == 0 {
        0
    } else {
        (spans[pos - 1].end + own.start).div_ceil(2)
    };
    let end = spans.get(pos + 1).map_or(frames, |next| (own.end + next.start) / 2);
    Span::new(start.min(own.start), end.max(own.end))
}

/// Greedy transcription, then every `<unk>` is rescored over the base words
/// and `ext`. A candidate's score is its log-softmax summed over the frames
/// of [`scoring_span`], under the prediction layer with the `<unk>` row
/// removed and the extension rows appended. Ties go to the alphabetically
/// first word.
pub fn decode_with_oov(
    model: &RecognizerModel,
    utt: &Utterance,
    vocab: &Vocabulary,
    ext: &ExtendedVocabulary,
    n_best: usize,
) -> Result<DecodeResult> {
    if ext.is_empty() {
        let r = greedy_result(model, utt, vocab)?;
        if !r.unresolved.is_empty() {
            log::warn!("{}: <unk> emitted with an empty extension; left in place", utt.id);
        }
        return Ok(r);
    }
    if model.mode != PredictionMode::Frozen {
        return Err(Error::config(
            "rescoring with an extended vocabulary needs a frozen-mode recognizer",
        ));
    }
    if ext.rows.cols() != model.prediction.cols() {
        return Err(Error::shape(format!(
            "extension rows have dimension {}, prediction layer {}",
            ext.rows.cols(),
            model.prediction.cols()
        )));
    }
    if n_best == 0 {
        return Err(Error::config("n_best must be at least 1"));
    }
    let pass = model.forward(&utt.features, None)?;
    let dec = crate::ctc::greedy_decode(&pass.logits, Vocabulary::BLANK_ID);
    let first_pass: Vec<String> = dec.labels.iter().map(|&id| vocab.word(id).to_string()).collect();
    let mut words = first_pass.clone();

    // Softmax support: every base row except <unk>, then the extension rows.
    let base_rows: Vec<usize> = (0..vocab.len()).filter(|&i| i != Vocabulary::UNK_ID).collect();
    let mut candidates: Vec<(String, usize)> = base_rows
        .iter()
        .enumerate()
        .filter(|(_, &id)| !Vocabulary::is_reserved(id))
        .map(|(slot, &id)| (vocab.word(id).to_string(), slot))
        .collect();
    candidates.extend(
        ext.words
            .iter()
            .enumerate()
            .map(|(j, w)| (w.clone(), base_rows.len() + j)),
    );

    let mut rescored = Vec::new();
    for (pos, &label) in dec.labels.iter().enumerate() {
        if label != Vocabulary::UNK_ID {
            continue;
        }
        let span = scoring_span(&dec.spans, pos, pass.projected.rows());
        let mut scores = vec![0.0; base_rows.len() + ext.len()];
        for t in span.start..span.end {
            let z = pass.projected.row(t);
            let logits: Vec<f64> = base_rows
                .iter()
                .map(|&id| dot(model.prediction.row(id), z))
                .chain(ext.rows.iter_rows().map(|r| dot(r, z)))
                .collect();
            for (s, l) in scores.iter_mut().zip(log_softmax(&logits)) {
                *s += l;
            }
        }
        let mut ranked: Vec<(String, f64)> = candidates.iter().map(|(w, slot)| (w.clone(), scores[*slot])).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(n_best);
        words[pos] = ranked[0].0.clone();
        rescored.push(Rescore {
            position: pos,
            span,
            n_best: ranked,
        });
    }
    Ok(DecodeResult {
        id: utt.id.clone(),
        unresolved: unk_positions(&words),
        first_pass,
        words,
        rescored,
    })
}

/// Writes one JSON record per utterance.
pub fn write_hypotheses<W: Write>(out: &mut W, results: &[DecodeResult]) -> Result<()> {
    for r in results {
        out.write_all(r.to_json_line()?.as_bytes())?;
    }
    Ok(())
}

pub fn read_hypotheses(text: &str) -> Result<Vec<DecodeResult>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::data(format!("hypothesis line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agwe::EmbeddingDims;
    use crate::corpus::{build_vocabulary, spell};
    use crate::nets::Pooling;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (EmbeddingModel, Vocabulary, RecognizerModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let agwe = EmbeddingModel::new(
            EmbeddingDims {
                feature_dim: 3,
                hidden: 4,
                layers: 1,
                char_embed_dim: 3,
                embed_dim: 5,
            },
            Pooling::Mean,
            &mut rng,
        )
        .unwrap();
        let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let vocab = build_vocabulary(&[words("CAT DOG EMU")], 1).unwrap();
        let model = RecognizerModel::from_embeddings(&agwe, &vocab, PredictionMode::Frozen, &mut rng).unwrap();
        (agwe, vocab, model)
    }

    fn utt_with(model: &RecognizerModel, target: usize, seed: u64) -> Utterance {
        // Random utterances until the first pass emits `target` somewhere.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..2000 {
            let feats = Matrix::uniform(8, 3, 3.0, &mut rng);
            if model.transcribe(&feats).unwrap().labels.contains(&target) {
                return Utterance::new("u".into(), feats, vec![], vec![]).unwrap();
            }
        }
        panic!("no utterance found");
    }

    #[test]
    fn extension_rows_match_initial_rows() {
        let (agwe, vocab, model) = setup();
        let other = build_vocabulary(&[vec!["ZZZ".to_string()]], 1).unwrap();
        let ext = extend_vocabulary(&agwe, &other, &[("CAT".into(), spell("CAT").unwrap())]).unwrap();
        let id = vocab.get("CAT").unwrap();
        assert_eq!(ext.rows.row(0), model.prediction.row(id));
    }

    #[test]
    fn extension_rejects_duplicates_and_known_words() {
        let (agwe, vocab, _) = setup();
        let yak = ("YAK".to_string(), spell("YAK").unwrap());
        assert!(extend_vocabulary(&agwe, &vocab, &[yak.clone(), yak.clone()]).is_err());
        assert!(extend_vocabulary(&agwe, &vocab, &[("DOG".into(), spell("DOG").unwrap())]).is_err());
        let ext = extend_vocabulary(&agwe, &vocab, &[yak, ("GNU".into(), spell("GNU").unwrap())]).unwrap();
        assert_eq!(ext.rows.shape(), (2, 5));
        for r in ext.rows.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_extension_is_greedy() {
        let (_, vocab, model) = setup();
        let u = utt_with(&model, Vocabulary::UNK_ID, 1);
        let a = decode_with_oov(&model, &u, &vocab, &ExtendedVocabulary::empty(5), 5).unwrap();
        let b = greedy_result(&model, &u, &vocab).unwrap();
        assert_eq!(a.to_json_line().unwrap(), b.to_json_line().unwrap());
        assert!(!a.unresolved.is_empty());
    }

    #[test]
    fn rescoring_only_touches_unk_positions() {
        let (agwe, vocab, model) = setup();
        let words: Vec<(String, CharSequence)> = ["YAK", "GNU", "OX"]
            .iter()
            .map(|w| (w.to_string(), spell(w).unwrap()))
            .collect();
        let ext = extend_vocabulary(&agwe, &vocab, &words).unwrap();
        for seed in 0..5 {
            let u = utt_with(&model, Vocabulary::UNK_ID, seed);
            let r = decode_with_oov(&model, &u, &vocab, &ext, 3).unwrap();
            assert!(r.unresolved.is_empty());
            assert!(!r.rescored.is_empty());
            for (i, (a, b)) in r.first_pass.iter().zip(&r.words).enumerate() {
                if a != crate::corpus::UNK {
                    assert_eq!(a, b);
                } else {
                    assert!(r.rescored.iter().any(|s| s.position == i && s.n_best[0].0 == *b));
                }
            }
            for s in &r.rescored {
                assert_eq!(s.n_best.len(), 3);
                assert!(s.n_best.windows(2).all(|w| w[0].1 >= w[1].1));
            }
        }
    }

    #[test]
    fn rescoring_ignores_extension_order() {
        let (agwe, vocab, model) = setup();
        let mut words: Vec<(String, CharSequence)> = ["YAK", "GNU", "OX", "BEE"]
            .iter()
            .map(|w| (w.to_string(), spell(w).unwrap()))
            .collect();
        let u = utt_with(&model, Vocabulary::UNK_ID, 3);
        let a = decode_with_oov(
            &model,
            &u,
            &vocab,
            &extend_vocabulary(&agwe, &vocab, &words).unwrap(),
            4,
        )
        .unwrap();
        words.reverse();
        let b = decode_with_oov(
            &model,
            &u,
            &vocab,
            &extend_vocabulary(&agwe, &vocab, &words).unwrap(),
            4,
        )
        .unwrap();
        assert_eq!(a.words, b.words);
        for (x, y) in a.rescored.iter().zip(&b.rescored) {
            for ((wx, sx), (wy, sy)) in x.n_best.iter().zip(&y.n_best) {
                assert_eq!(wx, wy);
                assert!((sx - sy).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_frozen_models_cannot_rescore() {
        let (agwe, vocab, mut model) = setup();
        model.mode = PredictionMode::Initialized;
        let ext = extend_vocabulary(&agwe, &vocab, &[("YAK".into(), spell("YAK").unwrap())]).unwrap();
        let u = Utterance::new("u".into(), Matrix::zeros(3, 3), vec![], vec![]).unwrap();
        assert!(decode_with_oov(&model, &u, &vocab, &ext, 5).is_err());
    }

    #[test]
    fn hypotheses_round_trip() {
        let r = DecodeResult {
            id: "x".into(),
            first_pass: vec!["<unk>".into()],
            words: vec!["YAK".into()],
            rescored: vec![Rescore {
                position: 0,
                span: Span::new(1, 3),
                n_best: vec![("YAK".into(), -0.5)],
            }],
            unresolved: vec![],
        };
        let mut buf = Vec::new();
        write_hypotheses(&mut buf, &[r.clone(), r.clone()]).unwrap();
        assert_eq!(
            read_hypotheses(std::str::from_utf8(&buf).unwrap()).unwrap(),
            vec![r.clone(), r]
        );
    }
}
