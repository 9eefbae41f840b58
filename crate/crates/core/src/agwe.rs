//! Acoustically grounded word embeddings.
//!
//! An acoustic view `f` (stacked BiLSTM over the utterance, pooled over a word
//! segment) and a character view `g` (BiLSTM over the spelling) share one
//! projection into a `d`-dimensional space. Training pulls each segment
//! towards its word's spelling embedding and pushes away the `k` nearest
//! wrong-word candidates of the mini-batch, in both directions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_segments, CharSequence, Span, Utterance, Vocabulary, WordSegment};
use crate::error::{Error, Result};
use crate::eval::{cosine_distance, cross_view_ap};
use crate::nets::{
    pool_segment, pool_segment_backward, BiRecurrentEncoder, CharEncoder, Checkpoint, Direction, LrSchedule, Optimizer,
    ParamVisitor, ParamVisitorMut, Params, Pooling, Projection, ScheduleAction,
};
use crate::parallel::{par_map, par_map_indexed};
use crate::seed::derived_rng;
use crate::tensor::{axpy, dot, norm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub feature_dim: usize,
    /// Hidden units per direction, shared by both views.
    pub hidden: usize,
    pub layers: usize,
    pub char_embed_dim: usize,
    pub embed_dim: usize,
}

impl EmbeddingDims {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.hidden == 0
            || self.layers == 0
            || self.char_embed_dim == 0
            || self.embed_dim == 0
        {
            return Err(Error::config(format!(
                "all embedding dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub acoustic: BiRecurrentEncoder,
    pub chars: CharEncoder,
    pub projection: Projection,
    pub pooling: Pooling,
}

impl EmbeddingModel {
    pub fn new<R: Rng + ?Sized>(dims: EmbeddingDims, pooling: Pooling, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let acoustic = BiRecurrentEncoder::new(dims.feature_dim, dims.hidden, dims.layers, rng);
        let chars = CharEncoder::new(dims.char_embed_dim, dims.hidden, rng);
        let projection = Projection::new(2 * dims.hidden, dims.embed_dim, true, rng);
        Ok(Self {
            acoustic,
            chars,
            projection,
            pooling,
        })
    }

    pub fn dims(&self) -> EmbeddingDims {
        EmbeddingDims {
            feature_dim: self.acoustic.input_dim(),
            hidden: self.acoustic.hidden_size(),
            layers: self.acoustic.layers.len(),
            char_embed_dim: self.chars.embedding.cols(),
            embed_dim: self.projection.output_dim(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.output_dim()
    }

    /// `g(c)`.
    pub fn embed_chars(&self, chars: &CharSequence) -> Vec<f64> {
        self.projection.forward(&self.chars.forward(chars).output)
    }

    /// `f(x)` for each span of one utterance.
    pub fn embed_segments(&self, features: &Matrix, spans: &[Span]) -> Result<Vec<Vec<f64>>> {
        let trace = self.acoustic.forward::<rand_chacha::ChaCha8Rng>(features, 0.0, None)?;
        spans
            .iter()
            .map(|&s| Ok(self.projection.forward(&pool_segment(trace.output(), s, self.pooling)?)))
            .collect()
    }

    pub fn from_table(
        dims: EmbeddingDims,
        pooling: Pooling,
        prefix: &str,
        table: &BTreeMap<String, Matrix>,
    ) -> Result<Self> {
        let mut rng = derived_rng(0, &[]);
        let mut m = Self::new(dims, pooling, &mut rng)?;
        m.load_from(prefix, table)?;
        Ok(m)
    }
}

impl Params for EmbeddingModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        self.acoustic.visit(&format!("{prefix}acoustic."), f);
        self.chars.visit(&format!("{prefix}chars."), f);
        self.projection.visit(&format!("{prefix}projection."), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.acoustic.visit_mut(&format!("{prefix}acoustic."), f);
        self.chars.visit_mut(&format!("{prefix}chars."), f);
        self.projection.visit_mut(&format!("{prefix}projection."), f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub k_start: usize,
    pub k_end: usize,
    pub k_anneal_batches: usize,
    pub batch_size: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            k_start: 15,
            k_end: 5,
            k_anneal_batches: 300,
            batch_size: 64,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config(format!("margin must be positive, got {}", self.margin)));
        }
        if self.k_end == 0 || self.k_start < self.k_end {
            return Err(Error::config(format!(
                "need k_start ≥ k_end ≥ 1, got {} and {}",
                self.k_start, self.k_end
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }

    /// Number of mined negatives after `batch` updates: linear from `k_start`
    /// to `k_end` over `k_anneal_batches`, rounded to the nearest integer.
    pub fn k_at(&self, batch: u64) -> usize {
        if self.k_anneal_batches == 0 || batch >= self.k_anneal_batches as u64 {
            return self.k_end;
        }
        let frac = batch as f64 / self.k_anneal_batches as f64;
        let k = self.k_start as f64 + (self.k_end as f64 - self.k_start as f64) * frac;
        k.round() as usize
    }
}

/// Cosine distance and its gradients with respect to both arguments.
pub fn cosine_distance_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Numeric("cosine distance of a zero vector".into()));
    }
    let c = dot(x, y) / (nx * ny);
    let dx = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| c * a / (nx * nx) - b / (nx * ny))
        .collect();
    let dy = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| c * b / (ny * ny) - a / (nx * ny))
        .collect();
    Ok((1.0 - c, dx, dy))
}

/// Indices of the `k` smallest distances among candidates whose word differs
/// from `anchor_word`; all of them if there are fewer. Ties go to the lower
/// index.
fn hardest(distances: &[(f64, usize)], anchor_word: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len())
        .filter(|&i| distances[i].1 != anchor_word)
        .collect();
    idx.sort_by(|&a, &b| distances[a].0.total_cmp(&distances[b].0).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean distance from `anchor` to its `k` nearest candidates labelled with a
/// different word.
pub fn mine_negatives(anchor: &[f64], candidates: &[(Vec<f64>, usize)], anchor_word: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let distances = candidates
        .iter()
        .map(|(v, w)| Ok((cosine_distance(anchor, v)?, *w)))
        .collect::<Result<Vec<_>>>()?;
    let chosen = hardest(&distances, anchor_word, k);
    if chosen.is_empty() {
        return Err(Error::data("no negative candidates with a different word in the batch"));
    }
    Ok(chosen.iter().map(|&i| distances[i].0).sum::<f64>() / chosen.len() as f64)
}

/// One utterance's features and its usable word segments.
#[derive(Clone, Debug)]
pub struct SegmentedUtterance<'a> {
    pub features: &'a Matrix,
    pub segments: Vec<WordSegment>,
}

impl<'a> SegmentedUtterance<'a> {
    /// Utterances left without any usable segment are dropped.
    pub fn collect(utts: &'a [Utterance], vocab: &Vocabulary, min_frames: usize) -> Vec<Self> {
        utts.iter()
            .map(|u| SegmentedUtterance {
                features: &u.features,
                segments: extract_segments(u, vocab, min_frames),
            })
            .filter(|s| !s.segments.is_empty())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MultiviewStats {
    pub loss: f64,
    pub pairs: usize,
    pub word_types: usize,
    /// Hinges with a positive argument, out of `2 * pairs`.
    pub active_hinges: usize,
}

struct AcousticPass {
    trace: crate::nets::EncoderTrace,
    pooled: Vec<Vec<f64>>,
}

/// Batch loss (mean over pairs of both hinge terms) and its parameter
/// gradient. `dropout` is `(p, seed)`; each utterance draws its own mask
/// stream from the seed.
pub fn multiview_loss(
    model: &EmbeddingModel,
    batch: &[&SegmentedUtterance<'_>],
    cfg: &ContrastiveConfig,
    k: usize,
    dropout: Option<(f64, u64)>,
) -> Result<(MultiviewStats, EmbeddingModel)> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let acoustic: Vec<Result<AcousticPass>> = par_map_indexed(batch, |i, u| {
        let trace = match dropout {
            Some((p, seed)) if p > 0.0 => {
                let mut rng = derived_rng(seed, &[i as u64]);
                model.acoustic.forward(u.features, p, Some(&mut rng))?
            }
            _ => model
                .acoustic
                .forward::<rand_chacha::ChaCha8Rng>(u.features, 0.0, None)?,
        };
        let pooled = u
            .segments
            .iter()
            .map(|s| pool_segment(trace.output(), s.frames, model.pooling))
            .collect::<Result<Vec<_>>>()?;
        Ok(AcousticPass { trace, pooled })
    });
    let acoustic = acoustic.into_iter().collect::<Result<Vec<_>>>()?;

    // One character-view embedding per word type.
    let mut types: BTreeMap<usize, &CharSequence> = BTreeMap::new();
    for u in batch {
        for s in &u.segments {
            types.entry(s.word_id).or_insert(&s.chars);
        }
    }
    if types.len() < 2 {
        return Err(Error::data(format!(
            "batch holds {} word type(s); need at least 2",
            types.len()
        )));
    }
    let type_ids: Vec<usize> = types.keys().copied().collect();
    let type_pos: BTreeMap<usize, usize> = type_ids.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    let char_traces = par_map(&types.values().copied().collect::<Vec<_>>(), |c| model.chars.forward(c));
    let g: Vec<Vec<f64>> = char_traces
        .iter()
        .map(|t| model.projection.forward(&t.output))
        .collect();

    // Pairs in batch order: (utterance, segment, type index).
    let mut pairs = Vec::new();
    for (ui, u) in batch.iter().enumerate() {
        for (si, s) in u.segments.iter().enumerate() {
            pairs.push((ui, si, type_pos[&s.word_id]));
        }
    }
    let a: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(ui, si, _)| model.projection.forward(&acoustic[ui].pooled[si]))
        .collect();
    let n = pairs.len();
    let m = cfg.margin;

    // Distance of every acoustic embedding to every word type.
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|ai| g.iter().map(|gc| cosine_distance(ai, gc)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let d = model.embed_dim();
    let mut d_a = vec![vec![0.0; d]; n];
    let mut d_g = vec![vec![0.0; d]; g.len()];
    let mut stats = MultiviewStats {
        pairs: n,
        word_types: g.len(),
        ..Default::default()
    };
    let scale = 1.0 / n as f64;
    let add_distance_grad =
        |i: usize, c: usize, w: f64, d_a: &mut Vec<Vec<f64>>, d_g: &mut Vec<Vec<f64>>| -> Result<()> {
            let (_, gx, gy) = cosine_distance_grad(&a[i], &g[c])?;
            axpy(w, &gx, &mut d_a[i]);
            axpy(w, &gy, &mut d_g[c]);
            Ok(())
        };
    for i in 0..n {
        let wi = pairs[i].2;
        let d_pos = dist[i][wi];

        // Segment as anchor, other word types as candidates.
        let cands: Vec<(f64, usize)> = (0..g.len()).map(|c| (dist[i][c], c)).collect();
        let neg = hardest(&cands, wi, k);
        let mean = neg.iter().map(|&c| dist[i][c]).sum::<f64>() / neg.len() as f64;
        let h = m + d_pos - mean;
        if h > 0.0 {
            stats.loss += h;
            stats.active_hinges += 1;
            add_distance_grad(i, wi, scale, &mut d_a, &mut d_g)?;
            for &c in &neg {
                add_distance_grad(i, c, -scale / neg.len() as f64, &mut d_a, &mut d_g)?;
            }
        }

        // Spelling as anchor, segments of other words as candidates.
        let cands: Vec<(f64, usize)> = (0..n).map(|j| (dist[j][wi], pairs[j].2)).collect();
        let neg = hardest(&cands, wi, k);
        if neg.is_empty() {
            return Err(Error::data("no acoustic negatives in the batch"));
        }
        let mean = neg.iter().map(|&j| dist[j][wi]).sum::<f64>() / neg.len() as f64;
        let h = m + d_pos - mean;
        if h > 0.0 {
            stats.loss += h;
            stats.active_hinges += 1;
            add_distance_grad(i, wi, scale, &mut d_a, &mut d_g)?;
            for &j in &neg {
                add_distance_grad(j, wi, -scale / neg.len() as f64, &mut d_a, &mut d_g)?;
            }
        }
    }
    stats.loss *= scale;
    if !stats.loss.is_finite() {
        return Err(Error::Numeric(format!("multi-view loss is {}", stats.loss)));
    }

    // Backward through the acoustic view, one utterance at a time.
    let mut offsets = Vec::with_capacity(batch.len());
    let mut off = 0;
    for u in batch {
        offsets.push(off);
        off += u.segments.len();
    }
    let zero_acoustic = model.acoustic.zeros_like();
    let zero_proj = model.projection.zeros_like();
    let acoustic_grads = par_map_indexed(batch, |ui, u| {
        let pass = &acoustic[ui];
        let mut gp = zero_proj.clone();
        let out = pass.trace.output();
        let mut d_hidden = Matrix::zeros(out.rows(), out.cols());
        for (si, s) in u.segments.iter().enumerate() {
            let dx = model
                .projection
                .backward(&pass.pooled[si], &d_a[offsets[ui] + si], &mut gp);
            pool_segment_backward(&dx, s.frames, model.pooling, &mut d_hidden);
        }
        let mut ge = zero_acoustic.clone();
        model.acoustic.backward(&pass.trace, &d_hidden, &mut ge);
        (ge, gp)
    });
    let zero_chars = model.chars.zeros_like();
    let char_grads = par_map_indexed(&char_traces, |c, trace| {
        let mut gp = zero_proj.clone();
        let dx = model.projection.backward(&trace.output, &d_g[c], &mut gp);
        let mut gc = zero_chars.clone();
        model.chars.backward(trace, &dx, &mut gc);
        (gc, gp)
    });

    let mut grads = model.zeros_like();
    for (ge, gp) in &acoustic_grads {
        grads.acoustic.add_from(ge);
        grads.projection.add_from(gp);
    }
    for (gc, gp) in &char_grads {
        grads.chars.add_from(gc);
        grads.projection.add_from(gp);
    }
    Ok((stats, grads))
}

/// Cross-view AP of held-out segments against every non-reserved vocabulary
/// word's character-view embedding.
pub fn heldout_ap(model: &EmbeddingModel, heldout: &[SegmentedUtterance<'_>], vocab: &Vocabulary) -> Result<f64> {
    let per_utt = par_map(heldout, |u| {
        let spans: Vec<Span> = u.segments.iter().map(|s| s.frames).collect();
        model.embed_segments(u.features, &spans).map(|embs| {
            embs.into_iter()
                .zip(&u.segments)
                .map(|(e, s)| (e, s.word_id))
                .collect::<Vec<_>>()
        })
    });
    let mut segments = Vec::new();
    for r in per_utt {
        segments.extend(r?);
    }
    let words = vocab_embeddings(model, vocab);
    cross_view_ap(&segments, &words)
}

/// `(word id, g(char(word)))` for every non-reserved word with a spelling.
pub fn vocab_embeddings(model: &EmbeddingModel, vocab: &Vocabulary) -> Vec<(usize, Vec<f64>)> {
    let ids: Vec<(usize, &CharSequence)> = vocab
        .word_ids()
        .filter_map(|id| vocab.chars(id).map(|c| (id, c)))
        .collect();
    par_map(&ids, |&(id, c)| (id, model.embed_chars(c)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgweTrainConfig {
    pub contrastive: ContrastiveConfig,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for AgweTrainConfig {
    fn default() -> Self {
        Self {
            contrastive: ContrastiveConfig::default(),
            learning_rate: 5e-4,
            max_epochs: 20,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl AgweTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.contrastive.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgweEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub heldout_ap: f64,
    pub learning_rate: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    pub action: ScheduleAction,
}

impl AgweEpoch {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} heldout_ap={:.6} lr={:e} batches={} skipped={} action={:?}",
            self.epoch, self.loss, self.heldout_ap, self.learning_rate, self.batches, self.skipped_batches, self.action
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AgweMeta {
    kind: String,
    dims: EmbeddingDims,
    pooling: Pooling,
    config: AgweTrainConfig,
    schedule: LrSchedule,
    history: Vec<AgweEpoch>,
    optimizer_steps: u64,
    learning_rate: f64,
    batches_seen: u64,
    stopped: bool,
}

pub const AGWE_CHECKPOINT_KIND: &str = "agwe";

/// Training state; everything needed to resume lives here.
#[derive(Clone, Debug)]
pub struct AgweTrainer {
    pub config: AgweTrainConfig,
    pub model: EmbeddingModel,
    pub best: EmbeddingModel,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub history: Vec<AgweEpoch>,
    pub batches_seen: u64,
    pub stopped: bool,
}

impl AgweTrainer {
    pub fn new(model: EmbeddingModel, config: AgweTrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: Optimizer::adam(config.learning_rate),
            schedule: LrSchedule::new(config.learning_rate),
            best: model.clone(),
            model,
            config,
            history: Vec::new(),
            batches_seen: 0,
            stopped: false,
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn finished(&self) -> bool {
        self.stopped || self.epoch() >= self.config.max_epochs
    }

    /// One pass over `train` followed by held-out evaluation and the
    /// schedule decision.
    pub fn run_epoch(
        &mut self,
        train: &[SegmentedUtterance<'_>],
        heldout: &[SegmentedUtterance<'_>],
        vocab: &Vocabulary,
    ) -> Result<&AgweEpoch> {
        if train.is_empty() {
            return Err(Error::data("no training utterances with usable word segments"));
        }
        let epoch = self.epoch();
        let seed = self.config.seed;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derived_rng(seed, &[1, epoch as u64]));
        let cfg = self.config.contrastive;
        let (mut loss_sum, mut batches, mut skipped) = (0.0, 0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SegmentedUtterance<'_>> = chunk.iter().map(|&i| &train[i]).collect();
            let k = cfg.k_at(self.batches_seen);
            let dropout_seed = crate::seed::derive_seed(seed, &[2, epoch as u64, b as u64]);
            let (stats, grads) =
                match multiview_loss(&self.model, &batch, &cfg, k, Some((self.config.dropout, dropout_seed))) {
                    Ok(r) => r,
                    Err(Error::Data(msg)) => {
                        log::warn!("skipping batch {b} of epoch {epoch}: {msg}");
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
            self.optimizer.step(&mut self.model, &grads)?;
            self.batches_seen += 1;
            loss_sum += stats.loss;
            batches += 1;
        }
        let ap = heldout_ap(&self.model, heldout, vocab)?;
        let action = self.schedule.epoch_end(ap, Direction::Maximize);
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
        self.history.push(AgweEpoch {
            epoch: epoch + 1,
            loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            heldout_ap: ap,
            learning_rate: self.schedule.learning_rate,
            batches,
            skipped_batches: skipped,
            action,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs epochs until the schedule stops or `max_epochs` is reached,
    /// calling `after_epoch` once per epoch.
    pub fn train<F>(
        &mut self,
        train: &[SegmentedUtterance<'_>],
        heldout: &[SegmentedUtterance<'_>],
        vocab: &Vocabulary,
        mut after_epoch: F,
    ) -> Result<()>
    where
        F: FnMut(&AgweTrainer) -> Result<()>,
    {
        while !self.finished() {
            self.run_epoch(train, heldout, vocab)?;
            after_epoch(self)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = self.model.to_table("model.");
        tensors.extend(self.best.to_table("best."));
        tensors.extend(
            self.optimizer
                .state_table()
                .into_iter()
                .map(|(k, v)| (format!("optim.{k}"), v)),
        );
        let meta = AgweMeta {
            kind: AGWE_CHECKPOINT_KIND.into(),
            dims: self.model.dims(),
            pooling: self.model.pooling,
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            history: self.history.clone(),
            optimizer_steps: self.optimizer.steps(),
            learning_rate: self.optimizer.learning_rate,
            batches_seen: self.batches_seen,
            stopped: self.stopped,
        };
        Checkpoint::new(tensors, &meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: AgweMeta = ck.metadata_as()?;
        if meta.kind != AGWE_CHECKPOINT_KIND {
            return Err(Error::data(format!(
                "expected an {AGWE_CHECKPOINT_KIND} checkpoint, found {}",
                meta.kind
            )));
        }
        let model = EmbeddingModel::from_table(meta.dims, meta.pooling, "model.", &ck.tensors)?;
        let best = EmbeddingModel::from_table(meta.dims, meta.pooling, "best.", &ck.tensors)?;
        let mut optimizer = Optimizer::adam(meta.learning_rate);
        optimizer.restore_state(meta.optimizer_steps, &ck.section("optim."));
        Ok(Self {
            config: meta.config,
            model,
            best,
            optimizer,
            schedule: meta.schedule,
            history: meta.history,
            batches_seen: meta.batches_seen,
            stopped: meta.stopped,
        })
    }
}

/// The best embedding model stored in an embedding checkpoint.
pub fn load_best_model(ck: &Checkpoint) -> Result<EmbeddingModel> {
    Ok(AgweTrainer::from_checkpoint(ck)?.best)
}
