//! Acoustic and character encoders, the linear projection and segment pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{BiLstm, BiLstmTrace};
use super::params::{ParamVisitor, ParamVisitorMut, Params};
use crate::corpus::{CharSequence, Span, ALPHABET_SIZE};
use crate::error::{Error, Result};
use crate::tensor::{axpy, Matrix};

/// Stacked bidirectional LSTM over feature frames.
#[derive(Clone, Debug, PartialEq)]
pub struct BiRecurrentEncoder {
    pub layers: Vec<BiLstm>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    /// Input to each layer (the features, then the masked outputs below).
    inputs: Vec<Matrix>,
    traces: Vec<BiLstmTrace>,
    /// Inverted-dropout masks applied to each layer output feeding the next.
    masks: Vec<Option<Vec<f64>>>,
}

impl EncoderTrace {
    /// Per-frame output of the top layer, `T × 2H`.
    pub fn output(&self) -> &Matrix {
        &self.traces.last().expect("at least one layer").output
    }
}

impl BiRecurrentEncoder {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| BiLstm::new(if l == 0 { input_dim } else { 2 * hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_size()
    }

    /// Runs the stack. When `dropout` carries an RNG, activations between
    /// layers are dropped with probability `dropout_p` and the survivors
    /// scaled by `1/(1-p)`; without one the pass is deterministic.
    pub fn forward<R: Rng>(&self, features: &Matrix, dropout_p: f64, dropout: Option<&mut R>) -> Result<EncoderTrace> {
        if features.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "encoder expects {} features per frame, got {}",
                self.input_dim(),
                features.cols()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::shape("cannot encode an empty utterance"));
        }
        let mut rng = dropout;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut x = features.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let trace = layer.forward(&x);
            let last = l + 1 == self.layers.len();
            let mut next = trace.output.clone();
            let mask = match rng.as_deref_mut() {
                Some(r) if !last && dropout_p > 0.0 => {
                    let keep = 1.0 / (1.0 - dropout_p);
                    let m: Vec<f64> = (0..next.len())
                        .map(|_| if r.random::<f64>() < dropout_p { 0.0 } else { keep })
                        .collect();
                    next.as_mut_slice().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            inputs.push(x);
            traces.push(trace);
            masks.push(mask);
            x = next;
        }
        Ok(EncoderTrace { inputs, traces, masks })
    }

    /// Accumulates parameter gradients for `d_output` (gradient w.r.t. the top
    /// layer's per-frame outputs).
    pub fn backward(&self, trace: &EncoderTrace, d_output: &Matrix, grads: &mut BiRecurrentEncoder) {
        let mut d = d_output.clone();
        for l in (0..self.layers.len()).rev() {
            if let Some(mask) = &trace.masks[l] {
                d.as_mut_slice().iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
            }
            let dx = self.layers[l].backward(&trace.inputs[l], &trace.traces[l], &d, &mut grads.layers[l]);
            if l == 0 {
                break;
            }
            d = dx;
        }
    }
}

impl Params for BiRecurrentEncoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}layer{i}."), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}layer{i}."), f);
        }
    }
}

/// Character embedding table followed by one bidirectional layer; the
/// sequence is summarised by the final state of each direction.
#[derive(Clone, Debug, PartialEq)]
pub struct CharEncoder {
    pub embedding: Matrix,
    pub rnn: BiLstm,
}

#[derive(Clone, Debug)]
pub struct CharTrace {
    ids: Vec<u8>,
    inputs: Matrix,
    trace: BiLstmTrace,
    pub output: Vec<f64>,
}

impl CharEncoder {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let embedding = Matrix::uniform(ALPHABET_SIZE, embed_dim, 1.0, rng);
        let rnn = BiLstm::new(embed_dim, hidden, rng);
        Self { embedding, rnn }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.rnn.hidden_size()
    }

    pub fn forward(&self, chars: &CharSequence) -> CharTrace {
        self.forward_ids(chars.ids()).expect("CharSequence ids are validated")
    }

    pub fn forward_ids(&self, ids: &[u8]) -> Result<CharTrace> {
        if ids.is_empty() {
            return Err(Error::shape("empty character sequence"));
        }
        let e = self.embedding.cols();
        let mut inputs = Matrix::zeros(ids.len(), e);
        for (t, &c) in ids.iter().enumerate() {
            if c as usize >= self.embedding.rows() {
                return Err(Error::data(format!("character id {c} outside alphabet")));
            }
            inputs.row_mut(t).copy_from_slice(self.embedding.row(c as usize));
        }
        let trace = self.rnn.forward(&inputs);
        let output = trace.final_state();
        Ok(CharTrace {
            ids: ids.to_vec(),
            inputs,
            trace,
            output,
        })
    }

    pub fn backward(&self, trace: &CharTrace, d_output: &[f64], grads: &mut CharEncoder) {
        let h = self.rnn.hidden_size();
        let t_len = trace.ids.len();
        let mut d_out = Matrix::zeros(t_len, 2 * h);
        d_out.row_mut(t_len - 1)[..h].copy_from_slice(&d_output[..h]);
        d_out.row_mut(0)[h..].copy_from_slice(&d_output[h..]);
        let dx = self.rnn.backward(&trace.inputs, &trace.trace, &d_out, &mut grads.rnn);
        for (t, &c) in trace.ids.iter().enumerate() {
            axpy(1.0, dx.row(t), grads.embedding.row_mut(c as usize));
        }
    }
}

impl Params for CharEncoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        f(format!("{prefix}embedding"), &self.embedding);
        self.rnn.visit(&format!("{prefix}rnn."), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        f(format!("{prefix}embedding"), &mut self.embedding);
        self.rnn.visit_mut(&format!("{prefix}rnn."), f);
    }
}

/// Affine map `y = W x + b` into the embedding space. `weight` is `d × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

impl Projection {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, with_bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weight = Matrix::uniform(output_dim, input_dim, bound, rng);
        let bias = with_bias.then(|| Matrix::uniform(1, output_dim, bound, rng));
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = match &self.bias {
            Some(b) => b.row(0).to_vec(),
            None => vec![0.0; self.output_dim()],
        };
        self.weight.matvec_acc(x, &mut y);
        y
    }

    /// Row-wise forward over a `T × in` matrix.
    pub fn forward_rows(&self, xs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(xs.rows(), self.output_dim());
        for t in 0..xs.rows() {
            out.row_mut(t).copy_from_slice(&self.forward(xs.row(t)));
        }
        out
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` and returns `dx = Wᵀ dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Projection) -> Vec<f64> {
        grads.weight.outer_acc(dy, x);
        if let Some(b) = grads.bias.as_mut() {
            axpy(1.0, dy, b.row_mut(0));
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.weight.matvec_t_acc(dy, &mut dx);
        dx
    }
}

impl Params for Projection {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        f(format!("{prefix}weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(format!("{prefix}bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        f(format!("{prefix}weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(format!("{prefix}bias"), b);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            other => Err(Error::config(format!("unknown pooling {other:?}"))),
        }
    }

    fn weight(self, span: Span) -> f64 {
        match self {
            Pooling::Mean => 1.0 / span.len() as f64,
            Pooling::Sum => 1.0,
        }
    }
}

/// Mean (or sum) of `hidden` rows in `span`.
pub fn pool_segment(hidden: &Matrix, span: Span, mode: Pooling) -> Result<Vec<f64>> {
    if span.is_empty() || span.end > hidden.rows() {
        return Err(Error::shape(format!(
            "span [{}, {}) invalid for {} frames",
            span.start,
            span.end,
            hidden.rows()
        )));
    }
    let mut out = vec![0.0; hidden.cols()];
    for t in span.start..span.end {
        axpy(1.0, hidden.row(t), &mut out);
    }
    let w = mode.weight(span);
    out.iter_mut().for_each(|x| *x *= w);
    Ok(out)
}

/// Adds the gradient of [`pool_segment`] for `d_pooled` into `d_hidden`.
pub fn pool_segment_backward(d_pooled: &[f64], span: Span, mode: Pooling, d_hidden: &mut Matrix) {
    let w = mode.weight(span);
    for t in span.start..span.end {
        axpy(w, d_pooled, d_hidden.row_mut(t));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::gradcheck::check_gradients;
    use crate::tensor::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_frame_encodes_to_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = BiRecurrentEncoder::new(4, 3, 2, &mut rng);
        let tr = enc.forward::<ChaCha8Rng>(&Matrix::zeros(1, 4), 0.25, None).unwrap();
        assert_eq!(tr.output().shape(), (1, 6));
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = BiRecurrentEncoder::new(4, 3, 2, &mut rng);
        let x = Matrix::uniform(6, 4, 1.0, &mut rng);
        let a = enc.forward::<ChaCha8Rng>(&x, 0.25, None).unwrap();
        let b = enc.forward::<ChaCha8Rng>(&x, 0.25, None).unwrap();
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = BiRecurrentEncoder::new(4, 3, 1, &mut rng);
        assert!(enc.forward::<ChaCha8Rng>(&Matrix::zeros(3, 5), 0.0, None).is_err());
        assert!(enc.forward::<ChaCha8Rng>(&Matrix::zeros(0, 4), 0.0, None).is_err());
        let chars = CharEncoder::new(3, 2, &mut rng);
        assert!(chars.forward_ids(&[]).is_err());
        assert!(chars.forward_ids(&[40]).is_err());
    }

    #[test]
    fn encoder_gradients_with_dropout_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = BiRecurrentEncoder::new(3, 3, 2, &mut rng);
        let x = Matrix::uniform(4, 3, 1.0, &mut rng);
        let w = Matrix::uniform(4, 6, 1.0, &mut rng);
        // the same dropout mask on every evaluation
        let run = |m: &BiRecurrentEncoder| {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            m.forward(&x, 0.3, Some(&mut r)).unwrap()
        };
        let report = check_gradients(
            &enc,
            |m| dot(run(m).output().as_slice(), w.as_slice()),
            |m| {
                let tr = run(m);
                let mut g = m.zeros_like();
                m.backward(&tr, &w, &mut g);
                g
            },
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn char_encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = CharEncoder::new(3, 4, &mut rng);
        let chars = CharSequence::new(vec![2, 0, 19, 0]).unwrap();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let report = check_gradients(
            &enc,
            |m| dot(&m.forward(&chars).output, &w),
            |m| {
                let tr = m.forward(&chars);
                let mut g = m.zeros_like();
                m.backward(&tr, &w, &mut g);
                g
            },
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn char_encoder_sees_both_directions() {
        // a permutation of the same characters should change the output for
        // essentially every random parameter draw
        let mut changed = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let enc = CharEncoder::new(4, 4, &mut rng);
            let a = enc.forward_ids(&[1, 2, 3]).unwrap().output;
            let b = enc.forward_ids(&[3, 1, 2]).unwrap().output;
            if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9) {
                changed += 1;
            }
        }
        assert_eq!(changed, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = CharEncoder::new(4, 4, &mut rng);
        assert_eq!(enc.forward_ids(&[7]).unwrap().output.len(), 8);
    }

    #[test]
    fn projection_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let proj = Projection::new(5, 3, true, &mut rng);
        let x = [0.3, -0.2, 0.9, 0.1, -0.5];
        let w = [1.0, -2.0, 0.5];
        let report = check_gradients(
            &proj,
            |p| dot(&p.forward(&x), &w),
            |p| {
                let mut g = p.zeros_like();
                p.backward(&x, &w, &mut g);
                g
            },
            1e-5,
        );
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn pooling_is_mean_of_span_rows() {
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![100.0, 100.0]]).unwrap();
        assert_eq!(
            pool_segment(&h, Span::new(0, 2), Pooling::Mean).unwrap(),
            vec![2.0, 3.0]
        );
        assert_eq!(
            pool_segment(&h, Span::new(1, 2), Pooling::Mean).unwrap(),
            vec![3.0, 4.0]
        );
        assert_eq!(pool_segment(&h, Span::new(0, 2), Pooling::Sum).unwrap(), vec![4.0, 6.0]);
        assert!(pool_segment(&h, Span::new(2, 2), Pooling::Mean).is_err());
        assert!(pool_segment(&h, Span::new(2, 4), Pooling::Mean).is_err());
        let constant = Matrix::from_rows(&vec![vec![0.5, -1.5]; 5]).unwrap();
        assert_eq!(
            pool_segment(&constant, Span::new(1, 5), Pooling::Mean).unwrap(),
            vec![0.5, -1.5]
        );
    }
}
