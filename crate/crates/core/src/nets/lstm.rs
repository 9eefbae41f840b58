//! Unidirectional and bidirectional LSTM layers with backprop through time.
//!
//! Gate layout inside the stacked `4H` dimension is `[input, forget, cell, output]`.

use rand::Rng;

use super::params::{ParamVisitor, ParamVisitorMut, Params};
use crate::tensor::{sigmoid, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Matrix,
}

/// Activations kept from the forward pass, indexed by original time step.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    /// Post-activation gates, `T × 4H`.
    gates: Matrix,
    cells: Matrix,
    tanh_cells: Matrix,
    /// Hidden outputs, `T × H`.
    pub hidden: Matrix,
    reverse: bool,
}

impl Lstm {
    /// Weights drawn from `U(-1/√H, 1/√H)`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_input: Matrix::uniform(4 * hidden, input_dim, bound, rng),
            w_hidden: Matrix::uniform(4 * hidden, hidden, bound, rng),
            bias: Matrix::uniform(1, 4 * hidden, bound, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    fn order(t_len: usize, reverse: bool) -> impl Iterator<Item = usize> {
        (0..t_len).map(move |s| if reverse { t_len - 1 - s } else { s })
    }

    /// Runs over `xs` (`T × input_dim`), right to left when `reverse`.
    pub fn forward(&self, xs: &Matrix, reverse: bool) -> LstmTrace {
        let h = self.hidden_size();
        let t_len = xs.rows();
        let mut gates = Matrix::zeros(t_len, 4 * h);
        let mut cells = Matrix::zeros(t_len, h);
        let mut tanh_cells = Matrix::zeros(t_len, h);
        let mut hidden = Matrix::zeros(t_len, h);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut pre = vec![0.0; 4 * h];
        for t in Self::order(t_len, reverse) {
            pre.copy_from_slice(self.bias.row(0));
            self.w_input.matvec_acc(xs.row(t), &mut pre);
            self.w_hidden.matvec_acc(&h_prev, &mut pre);
            let g = gates.row_mut(t);
            for j in 0..h {
                g[j] = sigmoid(pre[j]);
                g[h + j] = sigmoid(pre[h + j]);
                g[2 * h + j] = pre[2 * h + j].tanh();
                g[3 * h + j] = sigmoid(pre[3 * h + j]);
            }
            let g = gates.row(t);
            for j in 0..h {
                let c = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
                let tc = c.tanh();
                cells.set(t, j, c);
                tanh_cells.set(t, j, tc);
                hidden.set(t, j, g[3 * h + j] * tc);
            }
            h_prev.copy_from_slice(hidden.row(t));
            c_prev.copy_from_slice(cells.row(t));
        }
        LstmTrace {
            gates,
            cells,
            tanh_cells,
            hidden,
            reverse,
        }
    }

    /// Accumulates parameter gradients into `grads` given `d_hidden`
    /// (`T × H`, the loss gradient w.r.t. each output) and returns the
    /// gradient w.r.t. the inputs.
    pub fn backward(&self, xs: &Matrix, trace: &LstmTrace, d_hidden: &Matrix, grads: &mut Lstm) -> Matrix {
        let h = self.hidden_size();
        let t_len = xs.rows();
        let mut dx = Matrix::zeros(t_len, self.input_dim());
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        let zeros = vec![0.0; h];
        let steps: Vec<usize> = Self::order(t_len, trace.reverse).collect();
        for (s, &t) in steps.iter().enumerate().rev() {
            let (h_prev, c_prev) = if s == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (trace.hidden.row(steps[s - 1]), trace.cells.row(steps[s - 1]))
            };
            let g = trace.gates.row(t);
            let tc = trace.tanh_cells.row(t);
            let dh_out = d_hidden.row(t);
            for j in 0..h {
                let dh = dh_out[j] + dh_next[j];
                let (i, f, c_hat, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let d_o = dh * tc[j];
                let dc = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
                da[j] = dc * c_hat * i * (1.0 - i);
                da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - c_hat * c_hat);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            grads.w_input.outer_acc(&da, xs.row(t));
            grads.w_hidden.outer_acc(&da, h_prev);
            crate::tensor::axpy(1.0, &da, grads.bias.row_mut(0));
            self.w_input.matvec_t_acc(&da, dx.row_mut(t));
            dh_next.fill(0.0);
            self.w_hidden.matvec_t_acc(&da, &mut dh_next);
        }
        dx
    }
}

impl Params for Lstm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        f(format!("{prefix}w_input"), &self.w_input);
        f(format!("{prefix}w_hidden"), &self.w_hidden);
        f(format!("{prefix}bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        f(format!("{prefix}w_input"), &mut self.w_input);
        f(format!("{prefix}w_hidden"), &mut self.w_hidden);
        f(format!("{prefix}bias"), &mut self.bias);
    }
}

/// Forward and backward LSTMs whose outputs are concatenated per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// `T × 2H`: forward outputs then backward outputs.
    pub output: Matrix,
}

impl BiLstmTrace {
    /// Forward direction's output at the last frame followed by the backward
    /// direction's output at the first frame.
    pub fn final_state(&self) -> Vec<f64> {
        let t = self.output.rows();
        let mut out = self.fwd.hidden.row(t - 1).to_vec();
        out.extend_from_slice(self.bwd.hidden.row(0));
        out
    }
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = Lstm::new(input_dim, hidden, rng);
        let bwd = Lstm::new(input_dim, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn hidden_size(&self) -> usize {
        self.fwd.hidden_size()
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    pub fn forward(&self, xs: &Matrix) -> BiLstmTrace {
        let fwd = self.fwd.forward(xs, false);
        let bwd = self.bwd.forward(xs, true);
        let h = self.hidden_size();
        let mut output = Matrix::zeros(xs.rows(), 2 * h);
        for t in 0..xs.rows() {
            let row = output.row_mut(t);
            row[..h].copy_from_slice(fwd.hidden.row(t));
            row[h..].copy_from_slice(bwd.hidden.row(t));
        }
        BiLstmTrace { fwd, bwd, output }
    }

    pub fn backward(&self, xs: &Matrix, trace: &BiLstmTrace, d_output: &Matrix, grads: &mut BiLstm) -> Matrix {
        let h = self.hidden_size();
        let t_len = xs.rows();
        let mut d_fwd = Matrix::zeros(t_len, h);
        let mut d_bwd = Matrix::zeros(t_len, h);
        for t in 0..t_len {
            let row = d_output.row(t);
            d_fwd.row_mut(t).copy_from_slice(&row[..h]);
            d_bwd.row_mut(t).copy_from_slice(&row[h..]);
        }
        let mut dx = self.fwd.backward(xs, &trace.fwd, &d_fwd, &mut grads.fwd);
        dx.add_assign(&self.bwd.backward(xs, &trace.bwd, &d_bwd, &mut grads.bwd));
        dx
    }
}

impl Params for BiLstm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
        self.fwd.visit(&format!("{prefix}fwd."), f);
        self.bwd.visit(&format!("{prefix}bwd."), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.fwd.visit_mut(&format!("{prefix}fwd."), f);
        self.bwd.visit_mut(&format!("{prefix}bwd."), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weighted_sum(out: &Matrix, weights: &Matrix) -> f64 {
        crate::tensor::dot(out.as_slice(), weights.as_slice())
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = BiLstm::new(3, 4, &mut rng);
        let xs = Matrix::uniform(5, 3, 1.0, &mut rng);
        let w = Matrix::uniform(5, 8, 1.0, &mut rng);
        let report = check_gradients(
            &layer,
            |m| weighted_sum(&m.forward(&xs).output, &w),
            |m| {
                let trace = m.forward(&xs);
                let mut g = m.zeros_like();
                m.backward(&xs, &trace, &w, &mut g);
                g
            },
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Lstm::new(2, 3, &mut rng);
        let xs = Matrix::uniform(4, 2, 1.0, &mut rng);
        let w = Matrix::uniform(4, 3, 1.0, &mut rng);
        let trace = layer.forward(&xs, true);
        let mut g = layer.zeros_like();
        let dx = layer.backward(&xs, &trace, &w, &mut g);
        let eps = 1e-6;
        for i in 0..xs.len() {
            let mut plus = xs.clone();
            plus.as_mut_slice()[i] += eps;
            let mut minus = xs.clone();
            minus.as_mut_slice()[i] -= eps;
            let fd = (weighted_sum(&layer.forward(&plus, true).hidden, &w)
                - weighted_sum(&layer.forward(&minus, true).hidden, &w))
                / (2.0 * eps);
            assert!((fd - dx.as_slice()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn output_shape_and_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = BiLstm::new(3, 5, &mut rng);
        let trace = layer.forward(&Matrix::zeros(1, 3));
        assert_eq!(trace.output.shape(), (1, 10));
        assert_eq!(trace.final_state().len(), 10);
    }
}
