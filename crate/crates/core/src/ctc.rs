//! Connectionist temporal classification: loss, logit gradient, collapse and
//! greedy best-path decoding.
//!
//! The loss runs the forward–backward recursions over the blank-interleaved
//! label sequence in log space.

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::tensor::{argmax, log_add_exp, log_softmax, Matrix};

const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// Number of adjacent equal labels; each one forces a blank between them.
pub fn repeats(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `labels` under per-frame softmax of `logits`
/// (`T × V`), and its gradient with respect to `logits`.
pub fn ctc_loss(logits: &Matrix, labels: &[usize], blank: usize) -> Result<(f64, Matrix)> {
    let (t_len, v) = logits.shape();
    if v < 2 || blank >= v {
        return Err(Error::shape(format!(
            "need V ≥ 2 and blank < V, got V={v}, blank={blank}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= v || l == blank) {
        return Err(Error::data(format!("label {bad} is blank or outside 0..{v}")));
    }
    let reps = repeats(labels);
    if t_len == 0 || t_len < labels.len() + reps {
        return Err(Error::InfeasibleAlignment {
            frames: t_len,
            labels: labels.len(),
            repeats: reps,
        });
    }

    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| if s.is_multiple_of(2) { blank } else { labels[s / 2] };
    // a label may be reached by skipping the preceding blank when it differs
    // from the label two positions back
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);

    let logp: Vec<Vec<f64>> = (0..t_len).map(|t| log_softmax(logits.row(t))).collect();

    let mut alpha = vec![vec![LOG_ZERO; s_len]; t_len];
    alpha[0][0] = logp[0][blank];
    if s_len > 1 {
        alpha[0][1] = logp[0][ext(1)];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add_exp(a, alpha[t - 1][s - 1]);
            }
            if can_skip(s) {
                a = log_add_exp(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if a == LOG_ZERO { LOG_ZERO } else { a + logp[t][ext(s)] };
        }
    }

    // beta[t][s]: log-probability of finishing from state s at frame t,
    // excluding frame t's own emission
    let mut beta = vec![vec![LOG_ZERO; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s] + logp[t + 1][ext(s)];
            if s + 1 < s_len {
                b = log_add_exp(b, beta[t + 1][s + 1] + logp[t + 1][ext(s + 1)]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add_exp(b, beta[t + 1][s + 2] + logp[t + 1][ext(s + 2)]);
            }
            beta[t][s] = b;
        }
    }

    let mut log_likelihood = alpha[t_len - 1][s_len - 1];
    if s_len > 1 {
        log_likelihood = log_add_exp(log_likelihood, alpha[t_len - 1][s_len - 2]);
    }
    if !log_likelihood.is_finite() {
        return Err(Error::Numeric("CTC likelihood underflowed".into()));
    }

    let mut grad = Matrix::zeros(t_len, v);
    for t in 0..t_len {
        let row = grad.row_mut(t);
        for (k, g) in row.iter_mut().enumerate() {
            *g = logp[t][k].exp();
        }
        let mut occupancy = vec![LOG_ZERO; v];
        for s in 0..s_len {
            let k = ext(s);
            occupancy[k] = log_add_exp(occupancy[k], alpha[t][s] + beta[t][s]);
        }
        for (k, &occ) in occupancy.iter().enumerate() {
            if occ != LOG_ZERO {
                row[k] -= (occ - log_likelihood).exp();
            }
        }
    }
    Ok((-log_likelihood, grad))
}

/// Merges adjacent repeats, then removes blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GreedyDecode {
    pub labels: Vec<usize>,
    /// Frames whose argmax produced each emitted label.
    pub spans: Vec<Span>,
}

/// Per-frame argmax (lowest id on ties), collapsed.
pub fn greedy_decode(logits: &Matrix, blank: usize) -> GreedyDecode {
    let path: Vec<usize> = logits.iter_rows().map(argmax).collect();
    let mut labels = Vec::new();
    let mut spans = Vec::new();
    let mut t = 0;
    while t < path.len() {
        let start = t;
        while t < path.len() && path[t] == path[start] {
            t += 1;
        }
        if path[start] != blank {
            labels.push(path[start]);
            spans.push(Span::new(start, t));
        }
    }
    GreedyDecode { labels, spans }
}
