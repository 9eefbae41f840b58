//! Stage helpers shared by the command-line tool and the acceptance suite.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agwe::{multiview_loss, ContrastiveConfig, EmbeddingDims, EmbeddingModel, SegmentedUtterance};
use crate::config::RunConfig;
use crate::corpus::{spell, CharSequence, Corpus, Span, Utterance, Vocabulary, WordSegment};
use crate::ctc::ctc_loss;
use crate::decode::{extend_vocabulary, DecodeResult, ExtendedVocabulary};
use crate::error::{Error, Result};
use crate::eval::{edit_alignment, Edit};
use crate::nets::gradcheck::{check_gradients, GradReport};
use crate::nets::{BiRecurrentEncoder, CharEncoder, ParamVisitor, ParamVisitorMut, Params, Pooling, Projection};
use crate::recognizer::{embedding_targets, joint_loss, pretrain_char_ctc, PredictionMode, RecognizerModel};
use crate::seed::derived_rng;
use crate::tensor::{dot, Matrix};

const INIT_AGWE: u64 = 100;
const INIT_A2W: u64 = 200;

pub fn feature_dim(corpus: &Corpus) -> Result<usize> {
    corpus
        .train
        .first()
        .map(|u| u.features.cols())
        .ok_or_else(|| Error::data("corpus has no training utterances"))
}

pub fn vocabulary(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    let vocab = Vocabulary::from_counts(corpus.train_counts(), min_count)?;
    if vocab.word_ids().len() < 2 {
        return Err(Error::data(format!("fewer than two words reach min_count {min_count}")));
    }
    Ok(vocab)
}

pub fn new_embedding_model(cfg: &RunConfig, feature_dim: usize) -> Result<EmbeddingModel> {
    let mut rng = derived_rng(cfg.seed()?, &[INIT_AGWE]);
    EmbeddingModel::new(cfg.embedding_dims(feature_dim)?, cfg.pooling()?, &mut rng)
}

/// A fresh recognizer for the configured mode. Baseline models start from a
/// character-CTC pretrained encoder; the others take encoder, projection and
/// prediction rows from `agwe`.
pub fn new_recognizer(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    agwe: Option<&EmbeddingModel>,
    train: &[Utterance],
) -> Result<RecognizerModel> {
    let mode = cfg.mode()?;
    let seed = cfg.seed()?;
    let mut rng = derived_rng(seed, &[INIT_A2W]);
    let feature_dim = train
        .first()
        .map(|u| u.features.cols())
        .ok_or_else(|| Error::data("empty training set"))?;
    if mode.needs_embeddings() {
        let agwe = agwe.ok_or_else(|| Error::config(format!("mode {} needs an embedding model", mode.name())))?;
        if agwe.dims().feature_dim != feature_dim {
            return Err(Error::shape(format!(
                "embedding model expects {} features, corpus has {feature_dim}",
                agwe.dims().feature_dim
            )));
        }
        return RecognizerModel::from_embeddings(agwe, vocab, mode, &mut rng);
    }
    let mut model = RecognizerModel::new(cfg.recognizer_dims(feature_dim, vocab.len())?, mode, &mut rng)?;
    let pre = cfg.pretrain()?;
    if pre.epochs > 0 {
        let losses = pretrain_char_ctc(&mut model.encoder, train, &pre)?;
        for (i, l) in losses.iter().enumerate() {
            log::info!("pretrain epoch={} char_ctc_loss={l:.6}", i + 1);
        }
    }
    Ok(model)
}

/// Regularization targets when `mode` uses them.
pub fn targets_for(mode: PredictionMode, agwe: Option<&EmbeddingModel>, vocab: &Vocabulary) -> Result<Option<Matrix>> {
    match (mode, agwe) {
        (PredictionMode::Regularized { .. }, Some(a)) => Ok(Some(embedding_targets(a, vocab)?)),
        (PredictionMode::Regularized { .. }, None) => Err(Error::config("regularized mode needs an embedding model")),
        _ => Ok(None),
    }
}

/// Reads a word list (one word per line, blank lines and `#` comments
/// skipped) and spells each word.
pub fn read_word_list(text: &str) -> Result<Vec<(String, CharSequence)>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|w| Ok((w.to_string(), spell(w)?)))
        .collect()
}

/// Extension rows for `words`, skipping any already in `vocab`.
pub fn oov_extension(
    agwe: &EmbeddingModel,
    vocab: &Vocabulary,
    words: &[(String, CharSequence)],
) -> Result<ExtendedVocabulary> {
    let fresh: Vec<(String, CharSequence)> = words.iter().filter(|(w, _)| vocab.get(w).is_none()).cloned().collect();
    extend_vocabulary(agwe, vocab, &fresh)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OovReport {
    pub unk_emissions: usize,
    /// `<unk>` emissions that align to exactly one reference word.
    pub single_word: usize,
    /// Single-word emissions rescored to that reference word.
    pub recovered: usize,
}

impl OovReport {
    pub fn rate(&self) -> Option<f64> {
        (self.single_word > 0).then(|| self.recovered as f64 / self.single_word as f64)
    }

    pub fn add(&mut self, other: &OovReport) {
        self.unk_emissions += other.unk_emissions;
        self.single_word += other.single_word;
        self.recovered += other.recovered;
    }
}

/// Scores rescored `<unk>` emissions against the references. A first-pass
/// `<unk>` is single-word when the minimum-edit alignment substitutes it for
/// one reference word with no deletion on either side, i.e. it did not
/// swallow a neighbour.
pub fn oov_recovery(results: &[DecodeResult], refs: &[Utterance]) -> Result<OovReport> {
    let by_id: BTreeMap<&str, &Utterance> = refs.iter().map(|u| (u.id.as_str(), u)).collect();
    let mut report = OovReport::default();
    for r in results {
        let u = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::data(format!("no reference for utterance {}", r.id)))?;
        let ops = edit_alignment(&u.words, &r.first_pass);
        for (k, op) in ops.iter().enumerate() {
            let (ri, hi) = match *op {
                Edit::Substitute(ri, hi) | Edit::Match(ri, hi) => (ri, hi),
                Edit::Insert(hi) => {
                    if r.first_pass[hi] == crate::corpus::UNK {
                        report.unk_emissions += 1;
                    }
                    continue;
                }
                Edit::Delete(_) => continue,
            };
            if r.first_pass[hi] != crate::corpus::UNK {
                continue;
            }
            report.unk_emissions += 1;
            let deleted = |e: Option<&Edit>| matches!(e, Some(Edit::Delete(_)));
            if deleted(k.checked_sub(1).and_then(|j| ops.get(j))) || deleted(ops.get(k + 1)) {
                continue;
            }
            report.single_word += 1;
            if r.words[hi] == u.words[ri] {
                report.recovered += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Clone)]
struct LogitParams(Matrix);

impl Params for LogitParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        f(format!("{prefix}logits"), &self.0);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        f(format!("{prefix}logits"), &mut self.0);
    }
}

fn check_ctc(logits: &Matrix, labels: &[usize]) -> GradReport {
    check_gradients(
        &LogitParams(logits.clone()),
        |p| ctc_loss(&p.0, labels, 0).expect("feasible").0,
        |p| LogitParams(ctc_loss(&p.0, labels, 0).expect("feasible").1),
        1e-5,
    )
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradReport,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= self.tolerance
    }
}

fn tiny_vocab() -> Vocabulary {
    let counts = ["CAT", "DOG", "EMU"].iter().map(|w| (w.to_string(), 3));
    Vocabulary::from_counts(counts, 1).expect("static vocabulary")
}

/// Central finite-difference checks of every analytic gradient on small
/// random instances: CTC logits, both encoders, the projection, the
/// contrastive loss and the joint recognizer loss.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst_ctc: Option<GradReport> = None;
    for (t, v, labels) in [
        (6, 4, vec![1, 3, 3]),
        (5, 3, vec![2]),
        (8, 4, vec![1, 2, 1, 3]),
        (4, 2, vec![]),
    ] {
        let logits = Matrix::uniform(t, v, 2.0, &mut rng);
        let r = check_ctc(&logits, &labels);
        if worst_ctc.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error) {
            worst_ctc = Some(r);
        }
    }
    out.push(GradCheck {
        name: "ctc logits",
        tolerance: 1e-6,
        report: worst_ctc.expect("cases above"),
    });

    let enc = BiRecurrentEncoder::new(3, 3, 2, &mut rng);
    let x = Matrix::uniform(5, 3, 1.0, &mut rng);
    let w = Matrix::uniform(5, 6, 1.0, &mut rng);
    let mask_seed: u64 = rng.random();
    let run = |m: &BiRecurrentEncoder| m.forward(&x, 0.3, Some(&mut ChaCha8Rng::seed_from_u64(mask_seed)));
    out.push(GradCheck {
        name: "bidirectional encoder",
        tolerance: 1e-4,
        report: check_gradients(
            &enc,
            |m| dot(run(m).expect("valid input").output().as_slice(), w.as_slice()),
            |m| {
                let tr = run(m).expect("valid input");
                let mut g = m.zeros_like();
                m.backward(&tr, &w, &mut g);
                g
            },
            1e-5,
        ),
    });

    let chars = CharEncoder::new(4, 3, &mut rng);
    let word = spell("GRADIENT")?;
    let cw: Vec<f64> = (0..chars.output_dim()).map(|i| (i as f64 * 0.61).cos()).collect();
    out.push(GradCheck {
        name: "character encoder",
        tolerance: 1e-4,
        report: check_gradients(
            &chars,
            |m| dot(&m.forward(&word).output, &cw),
            |m| {
                let tr = m.forward(&word);
                let mut g = m.zeros_like();
                m.backward(&tr, &cw, &mut g);
                g
            },
            1e-5,
        ),
    });

    let proj = Projection::new(5, 3, true, &mut rng);
    let px: Vec<f64> = (0..5).map(|i| (i as f64 * 0.9).sin()).collect();
    let pw = [0.7, -1.1, 0.4];
    out.push(GradCheck {
        name: "projection",
        tolerance: 1e-4,
        report: check_gradients(
            &proj,
            |p| dot(&p.forward(&px), &pw),
            |p| {
                let mut g = p.zeros_like();
                p.backward(&px, &pw, &mut g);
                g
            },
            1e-5,
        ),
    });

    let vocab = tiny_vocab();
    let dims = EmbeddingDims {
        feature_dim: 3,
        hidden: 3,
        layers: 1,
        char_embed_dim: 3,
        embed_dim: 4,
    };
    let agwe = EmbeddingModel::new(dims, Pooling::Mean, &mut rng)?;
    let feats = [
        Matrix::uniform(7, 3, 1.0, &mut rng),
        Matrix::uniform(6, 3, 1.0, &mut rng),
    ];
    let seg = |w: &str, a: usize, b: usize| WordSegment {
        utterance_id: String::new(),
        word_id: vocab.id(w),
        chars: spell(w).expect("letters"),
        frames: Span::new(a, b),
    };
    let segmented = [
        SegmentedUtterance {
            features: &feats[0],
            segments: vec![seg("CAT", 0, 3), seg("DOG", 3, 7)],
        },
        SegmentedUtterance {
            features: &feats[1],
            segments: vec![seg("EMU", 0, 2), seg("CAT", 2, 6)],
        },
    ];
    let batch: Vec<&SegmentedUtterance> = segmented.iter().collect();
    // wide margin: every hinge active
    let contrastive = ContrastiveConfig {
        margin: 2.5,
        ..Default::default()
    };
    out.push(GradCheck {
        name: "contrastive embedding loss",
        tolerance: 1e-4,
        report: check_gradients(
            &agwe,
            |m| {
                multiview_loss(m, &batch, &contrastive, 2, None)
                    .expect("two types")
                    .0
                    .loss
            },
            |m| multiview_loss(m, &batch, &contrastive, 2, None).expect("two types").1,
            1e-5,
        ),
    });

    let lambda = 0.3;
    let mut rec = RecognizerModel::from_embeddings(&agwe, &vocab, PredictionMode::Regularized { lambda }, &mut rng)?;
    rec.prediction.as_mut_slice().iter_mut().for_each(|x| *x *= 1.3);
    let targets = embedding_targets(&agwe, &vocab)?;
    let utts = [
        Utterance::new(
            "a".into(),
            feats[0].clone(),
            vec!["CAT".into(), "DOG".into()],
            vec![Span::new(0, 3), Span::new(3, 7)],
        )?,
        Utterance::new(
            "b".into(),
            feats[1].clone(),
            vec!["EMU".into(), "XYZ".into()],
            vec![Span::new(0, 2), Span::new(2, 6)],
        )?,
    ];
    let ub: Vec<&Utterance> = utts.iter().collect();
    out.push(GradCheck {
        name: "joint recognizer loss",
        tolerance: 1e-4,
        report: check_gradients(
            &rec,
            |m| {
                joint_loss(m, &ub, &vocab, lambda, Some(&targets), None)
                    .expect("feasible")
                    .0
                    .total
            },
            |m| {
                joint_loss(m, &ub, &vocab, lambda, Some(&targets), None)
                    .expect("feasible")
                    .1
            },
            1e-5,
        ),
    });
    Ok(out)
}
