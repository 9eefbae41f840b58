//! CTC acoustics-to-word recognizer.
//!
//! Frames pass through a stacked BiLSTM and a linear projection to
//! `d`-dimensional vectors `z_t`; the prediction layer `W` (one row per
//! vocabulary entry, no bias) turns each into logits `W z_t`. The rows of `W`
//! can start from character-view embeddings, be pulled towards them by an L2
//! penalty, or stay fixed at them.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agwe::{vocab_embeddings, EmbeddingModel, SegmentedUtterance};
use crate::corpus::{spell, Utterance, Vocabulary, ALPHABET_SIZE};
use crate::ctc::{ctc_loss, greedy_decode, GreedyDecode};
use crate::error::{Error, Result};
use crate::eval::{cross_view_ap, wer, WerReport};
use crate::nets::{
    pool_segment, BiRecurrentEncoder, Checkpoint, Direction, EncoderTrace, LrSchedule, Optimizer, ParamVisitor,
    ParamVisitorMut, Params, Pooling, Projection, ScheduleAction, NESTEROV_MOMENTUM,
};
use crate::parallel::{par_map, par_map_indexed};
use crate::seed::{derive_seed, derived_rng};
use crate::tensor::{norm, Matrix};

pub const PREDICTION: &str = "prediction";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PredictionMode {
    Baseline,
    Initialized,
    Regularized { lambda: f64 },
    Frozen,
}

impl PredictionMode {
    pub fn parse(name: &str, lambda: f64) -> Result<Self> {
        let mode = match name {
            "baseline" => PredictionMode::Baseline,
            "initialized" => PredictionMode::Initialized,
            "regularized" => PredictionMode::Regularized { lambda },
            "frozen" => PredictionMode::Frozen,
            other => return Err(Error::config(format!("unknown recognizer mode {other:?}"))),
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PredictionMode::Baseline => "baseline",
            PredictionMode::Initialized => "initialized",
            PredictionMode::Regularized { .. } => "regularized",
            PredictionMode::Frozen => "frozen",
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            PredictionMode::Regularized { lambda } => *lambda,
            _ => 0.0,
        }
    }

    /// Whether the mode starts from an embedding model.
    pub fn needs_embeddings(&self) -> bool {
        !matches!(self, PredictionMode::Baseline)
    }

    pub fn validate(&self) -> Result<()> {
        if let PredictionMode::Regularized { lambda } = self {
            if !(0.0..1.0).contains(lambda) {
                return Err(Error::config(format!("lambda must lie in [0, 1), got {lambda}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizerDims {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizerModel {
    pub encoder: BiRecurrentEncoder,
    pub projection: Projection,
    /// `V × d`; row `y` is the embedding of word `y`.
    pub prediction: Matrix,
    pub mode: PredictionMode,
}

/// Forward activations for one utterance.
pub struct RecognizerPass {
    trace: EncoderTrace,
    /// Projected frames `z_t`, `T × d`.
    pub projected: Matrix,
    pub logits: Matrix,
}

impl RecognizerModel {
    /// Randomly initialised model.
    pub fn new<R: Rng + ?Sized>(dims: RecognizerDims, mode: PredictionMode, rng: &mut R) -> Result<Self> {
        mode.validate()?;
        if dims.feature_dim == 0 || dims.hidden == 0 || dims.layers == 0 || dims.embed_dim == 0 || dims.vocab_size < 3 {
            return Err(Error::config(format!("invalid recognizer dimensions {dims:?}")));
        }
        let encoder = BiRecurrentEncoder::new(dims.feature_dim, dims.hidden, dims.layers, rng);
        let projection = Projection::new(2 * dims.hidden, dims.embed_dim, true, rng);
        let prediction = Matrix::uniform(
            dims.vocab_size,
            dims.embed_dim,
            1.0 / (dims.embed_dim as f64).sqrt(),
            rng,
        );
        Ok(Self {
            encoder,
            projection,
            prediction,
            mode,
        })
    }

    /// Encoder and projection copied from the embedding model's acoustic view,
    /// prediction rows from its character view.
    pub fn from_embeddings<R: Rng + ?Sized>(
        agwe: &EmbeddingModel,
        vocab: &Vocabulary,
        mode: PredictionMode,
        rng: &mut R,
    ) -> Result<Self> {
        mode.validate()?;
        let d = agwe.embed_dim();
        let mut model = Self {
            encoder: agwe.acoustic.clone(),
            projection: agwe.projection.clone(),
            prediction: Matrix::zeros(vocab.len(), d),
            mode,
        };
        init_prediction_layer(&mut model, agwe, vocab, rng)?;
        Ok(model)
    }

    pub fn dims(&self) -> RecognizerDims {
        RecognizerDims {
            feature_dim: self.encoder.input_dim(),
            hidden: self.encoder.hidden_size(),
            layers: self.encoder.layers.len(),
            embed_dim: self.projection.output_dim(),
            vocab_size: self.prediction.rows(),
        }
    }

    pub fn forward(&self, features: &Matrix, dropout: Option<(f64, u64)>) -> Result<RecognizerPass> {
        let trace = match dropout {
            Some((p, seed)) if p > 0.0 => self.encoder.forward(features, p, Some(&mut derived_rng(seed, &[])))?,
            _ => self.encoder.forward::<rand_chacha::ChaCha8Rng>(features, 0.0, None)?,
        };
        let projected = self.projection.forward_rows(trace.output());
        let mut logits = Matrix::zeros(projected.rows(), self.prediction.rows());
        for t in 0..projected.rows() {
            self.prediction.matvec_acc(projected.row(t), logits.row_mut(t));
        }
        Ok(RecognizerPass {
            trace,
            projected,
            logits,
        })
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward(features, None)?.logits)
    }

    pub fn transcribe(&self, features: &Matrix) -> Result<GreedyDecode> {
        Ok(greedy_decode(&self.logits(features)?, Vocabulary::BLANK_ID))
    }

    /// Accumulates gradients for `d_logits` into `grads`.
    fn backward(&self, pass: &RecognizerPass, d_logits: &Matrix, grads: &mut RecognizerModel) {
        let h = pass.trace.output();
        let mut d_hidden = Matrix::zeros(h.rows(), h.cols());
        let mut dz = vec![0.0; self.projection.output_dim()];
        for t in 0..h.rows() {
            grads.prediction.outer_acc(d_logits.row(t), pass.projected.row(t));
            dz.fill(0.0);
            self.prediction.matvec_t_acc(d_logits.row(t), &mut dz);
            let dh = self.projection.backward(h.row(t), &dz, &mut grads.projection);
            d_hidden.row_mut(t).copy_from_slice(&dh);
        }
        self.encoder.backward(&pass.trace, &d_hidden, &mut grads.encoder);
    }
}

impl Params for RecognizerModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        self.encoder.visit(&format!("{prefix}encoder."), f);
        self.projection.visit(&format!("{prefix}projection."), f);
        f(format!("{prefix}{PREDICTION}"), &self.prediction);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.encoder.visit_mut(&format!("{prefix}encoder."), f);
        self.projection.visit_mut(&format!("{prefix}projection."), f);
        f(format!("{prefix}{PREDICTION}"), &mut self.prediction);
    }
}

/// Unit-normalised character-view embedding for each non-reserved word;
/// reserved rows are left at zero.
pub fn embedding_targets(agwe: &EmbeddingModel, vocab: &Vocabulary) -> Result<Matrix> {
    let mut targets = Matrix::zeros(vocab.len(), agwe.embed_dim());
    for (id, g) in vocab_embeddings(agwe, vocab) {
        let n = norm(&g);
        if n == 0.0 {
            return Err(Error::Numeric(format!("zero embedding for word {}", vocab.word(id))));
        }
        targets.row_mut(id).iter_mut().zip(&g).for_each(|(t, v)| *t = v / n);
    }
    Ok(targets)
}

/// Sets `w(y) = g(char(y)) / |g(char(y))|` for every non-reserved word and
/// draws fresh random rows for blank and unknown.
pub fn init_prediction_layer<R: Rng + ?Sized>(
    model: &mut RecognizerModel,
    agwe: &EmbeddingModel,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<()> {
    let d = model.projection.output_dim();
    if agwe.embed_dim() != d || model.prediction.cols() != d {
        return Err(Error::shape(format!(
            "embedding dimension {} does not match recognizer dimension {d}",
            agwe.embed_dim()
        )));
    }
    if model.prediction.rows() != vocab.len() {
        return Err(Error::shape(format!(
            "prediction layer has {} rows for a vocabulary of {}",
            model.prediction.rows(),
            vocab.len()
        )));
    }
    let mut w = embedding_targets(agwe, vocab)?;
    let bound = 1.0 / (d as f64).sqrt();
    for id in [Vocabulary::BLANK_ID, Vocabulary::UNK_ID] {
        w.row_mut(id)
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-bound..=bound));
    }
    model.prediction = w;
    Ok(())
}

/// `Σ_y |t_y - w_y|²` over the distinct words in `batch_words`, with its
/// gradient with respect to `W`.
pub fn regularizer(w: &Matrix, batch_words: &BTreeSet<usize>, targets: &Matrix) -> Result<(f64, Matrix)> {
    if w.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "prediction layer {:?} vs targets {:?}",
            w.shape(),
            targets.shape()
        )));
    }
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let mut penalty = 0.0;
    for &y in batch_words {
        if Vocabulary::is_reserved(y) || y >= w.rows() {
            continue;
        }
        for ((g, &wv), &tv) in grad.row_mut(y).iter_mut().zip(w.row(y)).zip(targets.row(y)) {
            let diff = wv - tv;
            penalty += diff * diff;
            *g = 2.0 * diff;
        }
    }
    Ok((penalty, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    /// Summed CTC loss over the utterances that could be aligned.
    pub ctc: f64,
    pub penalty: f64,
    pub total: f64,
    pub utterances: usize,
    pub skipped: usize,
}

/// Distinct non-reserved vocabulary words in the batch transcripts.
pub fn batch_words(batch: &[&Utterance], vocab: &Vocabulary) -> BTreeSet<usize> {
    batch
        .iter()
        .flat_map(|u| u.words.iter())
        .filter_map(|w| vocab.get(w))
        .filter(|&id| !Vocabulary::is_reserved(id))
        .collect()
}

/// `(1-λ) Σ CTC + λ Σ_y |t_y - w_y|²` for a batch, with its gradient.
/// Utterances too short for their transcript are skipped and counted.
pub fn joint_loss(
    model: &RecognizerModel,
    batch: &[&Utterance],
    vocab: &Vocabulary,
    lambda: f64,
    targets: Option<&Matrix>,
    dropout: Option<(f64, u64)>,
) -> Result<(JointLoss, RecognizerModel)> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    if model.prediction.rows() != vocab.len() {
        return Err(Error::shape("recognizer and vocabulary sizes differ"));
    }
    let zero = model.zeros_like();
    let per_utt = par_map_indexed(batch, |i, u| -> Result<Option<(f64, RecognizerModel)>> {
        let labels = vocab.encode(&u.words);
        let drop = dropout.map(|(p, s)| (p, derive_seed(s, &[i as u64])));
        let pass = model.forward(&u.features, drop)?;
        let (loss, d_logits) = match ctc_loss(&pass.logits, &labels, Vocabulary::BLANK_ID) {
            Ok(r) => r,
            Err(Error::InfeasibleAlignment { .. }) => {
                log::warn!("utterance {} cannot be aligned to its transcript; skipped", u.id);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let mut g = zero.clone();
        model.backward(&pass, &d_logits, &mut g);
        Ok(Some((loss, g)))
    });
    let mut out = JointLoss::default();
    let mut grads = zero;
    for r in per_utt {
        match r? {
            Some((loss, g)) => {
                out.ctc += loss;
                out.utterances += 1;
                grads.add_from(&g);
            }
            None => out.skipped += 1,
        }
    }
    grads.scale(1.0 - lambda);
    out.total = (1.0 - lambda) * out.ctc;
    if lambda > 0.0 {
        let targets = targets.ok_or_else(|| Error::config("a positive lambda needs embedding targets"))?;
        let (penalty, g) = regularizer(&model.prediction, &batch_words(batch, vocab), targets)?;
        out.penalty = penalty;
        out.total += lambda * penalty;
        crate::tensor::axpy(lambda, g.as_slice(), grads.prediction.as_mut_slice());
    }
    if !out.total.is_finite() {
        return Err(Error::Numeric(format!("joint loss is {}", out.total)));
    }
    Ok((out, grads))
}

/// Greedy transcript with `<unk>` for the unknown-word id.
pub fn transcribe_words(model: &RecognizerModel, utt: &Utterance, vocab: &Vocabulary) -> Result<Vec<String>> {
    let dec = model.transcribe(&utt.features)?;
    Ok(dec.labels.iter().map(|&id| vocab.word(id).to_string()).collect())
}

pub fn heldout_wer(model: &RecognizerModel, utts: &[Utterance], vocab: &Vocabulary) -> Result<WerReport> {
    let hyps = par_map(utts, |u| transcribe_words(model, u, vocab))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<String>> = utts.iter().map(|u| u.words.clone()).collect();
    wer(&refs, &hyps)
}

/// Cross-view AP between mean-pooled projected frames of held-out word
/// segments and the prediction-layer rows of the vocabulary words.
pub fn prediction_layer_ap(
    model: &RecognizerModel,
    heldout: &[SegmentedUtterance<'_>],
    vocab: &Vocabulary,
) -> Result<f64> {
    let per_utt = par_map(heldout, |u| -> Result<Vec<(Vec<f64>, usize)>> {
        let pass = model.forward(u.features, None)?;
        u.segments
            .iter()
            .map(|s| Ok((pool_segment(&pass.projected, s.frames, Pooling::Mean)?, s.word_id)))
            .collect()
    });
    let mut segments = Vec::new();
    for r in per_utt {
        segments.extend(r?);
    }
    let words: Vec<(usize, Vec<f64>)> = vocab
        .word_ids()
        .map(|id| (id, model.prediction.row(id).to_vec()))
        .collect();
    cross_view_ap(&segments, &words)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2wTrainConfig {
    pub mode: PredictionMode,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Rescales the batch gradient to this global L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for A2wTrainConfig {
    fn default() -> Self {
        Self {
            mode: PredictionMode::Baseline,
            learning_rate: 0.02,
            momentum: NESTEROV_MOMENTUM,
            batch_size: 64,
            dropout: 0.25,
            max_epochs: 20,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl A2wTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Scales `grads` down to global norm `max_norm` if it exceeds it.
pub fn clip_global_norm<M: Params>(grads: &mut M, max_norm: f64) -> f64 {
    let total = grads
        .named()
        .iter()
        .map(|(_, m)| m.as_slice().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        grads.scale(max_norm / total);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2wEpoch {
    pub epoch: usize,
    pub ctc_loss: f64,
    pub penalty: f64,
    pub heldout_wer: f64,
    pub learning_rate: f64,
    pub skipped_utterances: usize,
    pub action: ScheduleAction,
}

impl A2wEpoch {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} ctc_loss={:.6} penalty={:.6} heldout_wer={:.6} lr={:e} skipped={} action={:?}",
            self.epoch,
            self.ctc_loss,
            self.penalty,
            self.heldout_wer,
            self.learning_rate,
            self.skipped_utterances,
            self.action
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct A2wMeta {
    kind: String,
    dims: RecognizerDims,
    vocabulary: Vec<String>,
    config: A2wTrainConfig,
    schedule: LrSchedule,
    history: Vec<A2wEpoch>,
    optimizer_steps: u64,
    learning_rate: f64,
    stopped: bool,
}

pub const A2W_CHECKPOINT_KIND: &str = "a2w";

#[derive(Clone, Debug)]
pub struct A2wTrainer {
    pub config: A2wTrainConfig,
    pub model: RecognizerModel,
    pub best: RecognizerModel,
    /// Unit-normalised embedding targets, present in regularised mode.
    pub targets: Option<Matrix>,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub history: Vec<A2wEpoch>,
    pub stopped: bool,
}

impl A2wTrainer {
    pub fn new(model: RecognizerModel, targets: Option<Matrix>, config: A2wTrainConfig) -> Result<Self> {
        config.validate()?;
        if model.mode != config.mode {
            return Err(Error::config("model mode and training mode differ"));
        }
        if config.mode.lambda() > 0.0 && targets.is_none() {
            return Err(Error::config("regularized training needs embedding targets"));
        }
        let mut optimizer = Optimizer::sgd_nesterov(config.learning_rate, config.momentum);
        if config.mode == PredictionMode::Frozen {
            optimizer.freeze(PREDICTION);
        }
        Ok(Self {
            schedule: LrSchedule::new(config.learning_rate),
            best: model.clone(),
            model,
            targets,
            optimizer,
            config,
            history: Vec::new(),
            stopped: false,
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn finished(&self) -> bool {
        self.stopped || self.epoch() >= self.config.max_epochs
    }

    pub fn run_epoch(&mut self, train: &[Utterance], heldout: &[Utterance], vocab: &Vocabulary) -> Result<&A2wEpoch> {
        if train.is_empty() {
            return Err(Error::data("empty training set"));
        }
        let epoch = self.epoch();
        let seed = self.config.seed;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derived_rng(seed, &[3, epoch as u64]));
        let lambda = self.config.mode.lambda();
        let (mut ctc, mut penalty, mut skipped) = (0.0, 0.0, 0);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &train[i]).collect();
            let drop_seed = derive_seed(seed, &[4, epoch as u64, b as u64]);
            let (loss, grads) = joint_loss(
                &self.model,
                &batch,
                vocab,
                lambda,
                self.targets.as_ref(),
                Some((self.config.dropout, drop_seed)),
            )?;
            let mut grads = grads;
            if let Some(c) = self.config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            self.optimizer.step(&mut self.model, &grads)?;
            ctc += loss.ctc;
            penalty += loss.penalty;
            skipped += loss.skipped;
        }
        let report = heldout_wer(&self.model, heldout, vocab)?;
        let action = self.schedule.epoch_end(report.wer, Direction::Minimize);
        if self.schedule.improved() {
            self.best = self.model.clone();
        }
        match action {
            ScheduleAction::DecayAndRestore => {
                self.model = self.best.clone();
                self.optimizer.reset_state();
                self.optimizer.learning_rate = self.schedule.learning_rate;
            }
            ScheduleAction::Stop => self.stopped = true,
            ScheduleAction::Continue => {}
        }
        self.history.push(A2wEpoch {
            epoch: epoch + 1,
            ctc_loss: ctc / (train.len() - skipped).max(1) as f64,
            penalty,
            heldout_wer: report.wer,
            learning_rate: self.schedule.learning_rate,
            skipped_utterances: skipped,
            action,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn train<F>(
        &mut self,
        train: &[Utterance],
        heldout: &[Utterance],
        vocab: &Vocabulary,
        mut after_epoch: F,
    ) -> Result<()>
    where
        F: FnMut(&A2wTrainer) -> Result<()>,
    {
        while !self.finished() {
            self.run_epoch(train, heldout, vocab)?;
            after_epoch(self)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary) -> Result<Checkpoint> {
        let mut tensors = self.model.to_table("model.");
        tensors.extend(self.best.to_table("best."));
        if let Some(t) = &self.targets {
            tensors.insert("targets".into(), t.clone());
        }
        tensors.extend(
            self.optimizer
                .state_table()
                .into_iter()
                .map(|(k, v)| (format!("optim.{k}"), v)),
        );
        let meta = A2wMeta {
            kind: A2W_CHECKPOINT_KIND.into(),
            dims: self.model.dims(),
            vocabulary: vocab.entries().iter().map(|e| e.word.clone()).collect(),
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            history: self.history.clone(),
            optimizer_steps: self.optimizer.steps(),
            learning_rate: self.optimizer.learning_rate,
            stopped: self.stopped,
        };
        Checkpoint::new(tensors, &meta)
    }

    /// Restores a trainer, checking that `vocab` matches the one it was
    /// trained with.
    pub fn from_checkpoint(ck: &Checkpoint, vocab: &Vocabulary) -> Result<Self> {
        let meta: A2wMeta = ck.metadata_as()?;
        if meta.kind != A2W_CHECKPOINT_KIND {
            return Err(Error::data(format!(
                "expected an {A2W_CHECKPOINT_KIND} checkpoint, found {}",
                meta.kind
            )));
        }
        let words: Vec<&str> = vocab.entries().iter().map(|e| e.word.as_str()).collect();
        if meta.vocabulary != words {
            return Err(Error::data(
                "checkpoint vocabulary does not match the corpus vocabulary",
            ));
        }
        let load = |prefix: &str| -> Result<RecognizerModel> {
            let mut m = RecognizerModel::new(meta.dims, meta.config.mode, &mut derived_rng(0, &[]))?;
            m.load_from(prefix, &ck.tensors)?;
            Ok(m)
        };
        let mut optimizer = Optimizer::sgd_nesterov(meta.learning_rate, meta.config.momentum);
        if meta.config.mode == PredictionMode::Frozen {
            optimizer.freeze(PREDICTION);
        }
        optimizer.restore_state(meta.optimizer_steps, &ck.section("optim."));
        Ok(Self {
            model: load("model.")?,
            best: load("best.")?,
            targets: ck.tensors.get("targets").cloned(),
            optimizer,
            schedule: meta.schedule,
            history: meta.history,
            stopped: meta.stopped,
            config: meta.config,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Character-level CTC training of an encoder through a throwaway output
/// layer. Returns the mean per-utterance loss of each epoch.
pub fn pretrain_char_ctc(
    encoder: &mut BiRecurrentEncoder,
    train: &[Utterance],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::data("empty training set"));
    }
    let blank = ALPHABET_SIZE;
    let labels: Vec<Vec<usize>> = train
        .iter()
        .map(|u| -> Result<Vec<usize>> {
            let mut out = Vec::new();
            for w in &u.words {
                out.extend(spell(w)?.ids().iter().map(|&c| c as usize));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut rng = derived_rng(cfg.seed, &[5]);
    let mut head = CharHead {
        encoder: encoder.clone(),
        output: Projection::new(encoder.output_dim(), ALPHABET_SIZE + 1, true, &mut rng),
    };
    let mut opt = Optimizer::adam(cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derived_rng(cfg.seed, &[6, epoch as u64]));
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let zero = head.zeros_like();
            let results = par_map(chunk, |&i| -> Result<Option<(f64, CharHead)>> {
                let trace = head
                    .encoder
                    .forward::<rand_chacha::ChaCha8Rng>(&train[i].features, 0.0, None)?;
                let logits = head.output.forward_rows(trace.output());
                let (loss, d_logits) = match ctc_loss(&logits, &labels[i], blank) {
                    Ok(r) => r,
                    Err(Error::InfeasibleAlignment { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let mut g = zero.clone();
                let h = trace.output();
                let mut d_hidden = Matrix::zeros(h.rows(), h.cols());
                for t in 0..h.rows() {
                    let dh = head.output.backward(h.row(t), d_logits.row(t), &mut g.output);
                    d_hidden.row_mut(t).copy_from_slice(&dh);
                }
                head.encoder.backward(&trace, &d_hidden, &mut g.encoder);
                Ok(Some((loss, g)))
            });
            let mut grads = zero;
            let mut n = 0;
            for r in results {
                if let Some((loss, g)) = r? {
                    total += loss;
                    grads.add_from(&g);
                    n += 1;
                }
            }
            if n > 0 {
                grads.scale(1.0 / n as f64);
                opt.step(&mut head, &grads)?;
                count += n;
            }
        }
        losses.push(total / count.max(1) as f64);
    }
    *encoder = head.encoder;
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq)]
struct CharHead {
    encoder: BiRecurrentEncoder,
    output: Projection,
}

impl Params for CharHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        self.encoder.visit(&format!("{prefix}encoder."), f);
        self.output.visit(&format!("{prefix}output."), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.encoder.visit_mut(&format!("{prefix}encoder."), f);
        self.output.visit_mut(&format!("{prefix}output."), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agwe::EmbeddingDims;
    use crate::corpus::{build_vocabulary, Span};
    use crate::eval::cosine_distance;
    use crate::nets::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Vocabulary, Vec<Utterance>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let utts = vec![
            Utterance::new(
                "a".into(),
                Matrix::uniform(6, 3, 1.0, &mut rng),
                words("CAT DOG"),
                vec![Span::new(0, 3), Span::new(3, 6)],
            )
            .unwrap(),
            Utterance::new(
                "b".into(),
                Matrix::uniform(5, 3, 1.0, &mut rng),
                words("DOG ZEBRA"),
                vec![Span::new(0, 2), Span::new(2, 5)],
            )
            .unwrap(),
        ];
        let transcripts = vec![words("CAT DOG"), words("DOG")];
        let vocab = build_vocabulary(&transcripts, 1).unwrap();
        (vocab, utts, rng)
    }

    fn agwe(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingModel {
        EmbeddingModel::new(
            EmbeddingDims {
                feature_dim: 3,
                hidden: 3,
                layers: 2,
                char_embed_dim: 3,
                embed_dim: d,
            },
            Pooling::Mean,
            rng,
        )
        .unwrap()
    }

    #[test]
    fn init_rows_are_unit_character_embeddings() {
        let (vocab, _, mut rng) = toy();
        let e = agwe(&mut rng, 4);
        let m = RecognizerModel::from_embeddings(&e, &vocab, PredictionMode::Initialized, &mut rng).unwrap();
        for id in vocab.word_ids() {
            let row = m.prediction.row(id);
            assert!((norm(row) - 1.0).abs() < 1e-12);
            let g = e.embed_chars(vocab.chars(id).unwrap());
            assert!(cosine_distance(row, &g).unwrap().abs() < 1e-12);
        }
        assert!((norm(m.prediction.row(Vocabulary::BLANK_ID)) - 1.0).abs() > 1e-6);
    }

    #[test]
    fn init_rejects_dimension_mismatch() {
        let (vocab, _, mut rng) = toy();
        let e = agwe(&mut rng, 4);
        let dims = RecognizerDims {
            feature_dim: 3,
            hidden: 3,
            layers: 1,
            embed_dim: 5,
            vocab_size: vocab.len(),
        };
        let mut m = RecognizerModel::new(dims, PredictionMode::Initialized, &mut rng).unwrap();
        assert!(init_prediction_layer(&mut m, &e, &vocab, &mut rng).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let targets = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        let words: BTreeSet<usize> = [2, 3].into_iter().collect();
        let (p, g) = regularizer(&targets, &words, &targets).unwrap();
        assert_eq!(p, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        let mut w = targets.clone();
        w.set(2, 0, 0.6 + 0.01);
        let (p, g) = regularizer(&w, &[2].into_iter().collect(), &targets).unwrap();
        assert!((p - 1e-4).abs() < 1e-15);
        assert!((g.get(2, 0) - 0.02).abs() < 1e-12);
        assert_eq!(g.get(3, 0), 0.0);
    }

    #[test]
    fn repeated_batch_words_count_once() {
        let (vocab, utts, _) = toy();
        let batch = vec![&utts[0], &utts[1], &utts[1]];
        let words = batch_words(&batch, &vocab);
        assert_eq!(words.len(), 2);
    }

    #[test]
    fn lambda_zero_equals_summed_ctc() {
        let (vocab, utts, mut rng) = toy();
        let e = agwe(&mut rng, 4);
        let m = RecognizerModel::from_embeddings(&e, &vocab, PredictionMode::Regularized { lambda: 0.0 }, &mut rng)
            .unwrap();
        let targets = embedding_targets(&e, &vocab).unwrap();
        let batch: Vec<&Utterance> = utts.iter().collect();
        let (loss, _) = joint_loss(&m, &batch, &vocab, 0.0, Some(&targets), None).unwrap();
        let direct: f64 = utts
            .iter()
            .map(|u| {
                ctc_loss(
                    &m.logits(&u.features).unwrap(),
                    &vocab.encode(&u.words),
                    Vocabulary::BLANK_ID,
                )
                .unwrap()
                .0
            })
            .sum();
        assert!((loss.total - direct).abs() < 1e-12);

        // Rows at their targets leave only the CTC share.
        let (loss, _) = joint_loss(&m, &batch, &vocab, 0.99, Some(&targets), None).unwrap();
        assert_eq!(loss.penalty, 0.0);
        assert!((loss.total - 0.01 * direct).abs() < 1e-12);
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        let (vocab, utts, mut rng) = toy();
        let e = agwe(&mut rng, 4);
        let mut m = RecognizerModel::from_embeddings(&e, &vocab, PredictionMode::Regularized { lambda: 0.3 }, &mut rng)
            .unwrap();
        let targets = embedding_targets(&e, &vocab).unwrap();
        m.prediction.as_mut_slice().iter_mut().for_each(|x| *x *= 1.3);
        let batch: Vec<&Utterance> = utts.iter().collect();
        let report = check_gradients(
            &m,
            |m| {
                joint_loss(m, &batch, &vocab, 0.3, Some(&targets), None)
                    .unwrap()
                    .0
                    .total
            },
            |m| joint_loss(m, &batch, &vocab, 0.3, Some(&targets), None).unwrap().1,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn frozen_training_keeps_prediction_bits() {
        let (vocab, utts, mut rng) = toy();
        let e = agwe(&mut rng, 4);
        let m = RecognizerModel::from_embeddings(&e, &vocab, PredictionMode::Frozen, &mut rng).unwrap();
        let before = m.clone();
        let cfg = A2wTrainConfig {
            mode: PredictionMode::Frozen,
            batch_size: 1,
            max_epochs: 3,
            ..Default::default()
        };
        let mut t = A2wTrainer::new(m, None, cfg).unwrap();
        t.train(&utts, &utts, &vocab, |_| Ok(())).unwrap();
        assert_eq!(t.model.prediction, before.prediction);
        assert_eq!(t.best.prediction, before.prediction);
        assert_ne!(t.model.encoder, before.encoder);
    }

    #[test]
    fn lambda_zero_run_matches_baseline_trace() {
        let (vocab, utts, mut rng) = toy();
        let e = agwe(&mut rng, 4);
        let m = RecognizerModel::from_embeddings(&e, &vocab, PredictionMode::Initialized, &mut rng).unwrap();
        let targets = embedding_targets(&e, &vocab).unwrap();
        let run = |mode: PredictionMode, targets: Option<Matrix>| {
            let mut model = m.clone();
            model.mode = mode;
            let cfg = A2wTrainConfig {
                mode,
                batch_size: 2,
                max_epochs: 3,
                ..Default::default()
            };
            let mut t = A2wTrainer::new(model, targets, cfg).unwrap();
            t.train(&utts, &utts, &vocab, |_| Ok(())).unwrap();
            t.history.iter().map(|h| h.ctc_loss).collect::<Vec<_>>()
        };
        let a = run(PredictionMode::Initialized, None);
        let b = run(PredictionMode::Regularized { lambda: 0.0 }, Some(targets));
        assert_eq!(a, b);
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        assert!(PredictionMode::parse("regularized", 1.0).is_err());
        assert!(PredictionMode::parse("regularized", -0.1).is_err());
        assert!(PredictionMode::parse("regularized", 0.5).is_ok());
        assert!(PredictionMode::parse("nope", 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip_checks_vocabulary() {
        let (vocab, utts, mut rng) = toy();
        let dims = RecognizerDims {
            feature_dim: 3,
            hidden: 2,
            layers: 1,
            embed_dim: 3,
            vocab_size: vocab.len(),
        };
        let m = RecognizerModel::new(dims, PredictionMode::Baseline, &mut rng).unwrap();
        let cfg = A2wTrainConfig {
            batch_size: 1,
            max_epochs: 1,
            ..Default::default()
        };
        let mut t = A2wTrainer::new(m, None, cfg).unwrap();
        t.train(&utts, &utts, &vocab, |_| Ok(())).unwrap();
        let ck = t.to_checkpoint(&vocab).unwrap();
        let back = A2wTrainer::from_checkpoint(&ck, &vocab).unwrap();
        assert_eq!(back.model, t.model);
        assert_eq!(back.history, t.history);
        let other = build_vocabulary(&[vec!["X".to_string()]], 1).unwrap();
        assert!(A2wTrainer::from_checkpoint(&ck, &other).is_err());
    }
}
