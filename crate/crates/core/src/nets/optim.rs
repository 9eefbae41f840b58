//! Adam and SGD with Nesterov momentum.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const NESTEROV_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    SgdNesterov { momentum: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    steps: u64,
    /// First moment (Adam) or velocity (SGD), one per parameter tensor.
    first: Vec<Matrix>,
    /// Second moment, Adam only.
    second: Vec<Matrix>,
    frozen: BTreeSet<String>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
            frozen: BTreeSet::new(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(
            OptimizerKind::Adam {
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                epsilon: ADAM_EPSILON,
            },
            learning_rate,
        )
    }

    pub fn sgd_nesterov(learning_rate: f64, momentum: f64) -> Self {
        Self::new(OptimizerKind::SgdNesterov { momentum }, learning_rate)
    }

    /// Excludes the named tensor from every future update.
    pub fn freeze(&mut self, name: impl Into<String>) {
        self.frozen.insert(name.into());
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Drops the moment buffers and the step counter.
    pub fn reset_state(&mut self) {
        self.steps = 0;
        self.first.clear();
        self.second.clear();
    }

    pub fn step<M: Params>(&mut self, params: &mut M, grads: &M) -> Result<()> {
        let grads = grads.named();
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.as_slice().iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|(_, g)| Matrix::zeros(g.rows(), g.cols())).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        let lr = self.learning_rate;
        let t = self.steps as i32;
        let (first, second, frozen, kind) = (&mut self.first, &mut self.second, &self.frozen, self.kind);
        let mut idx = 0;
        let mut mismatch = None;
        params.visit_mut("", &mut |name, p| {
            let k = idx;
            idx += 1;
            if mismatch.is_some() || frozen.contains(&name) {
                return;
            }
            let Some((_, g)) = grads.get(k) else {
                mismatch = Some(name);
                return;
            };
            if g.shape() != p.shape() {
                mismatch = Some(name);
                return;
            }
            let (p, g) = (p.as_mut_slice(), g.as_slice());
            match kind {
                OptimizerKind::Adam { beta1, beta2, epsilon } => {
                    let (m, v) = (first[k].as_mut_slice(), second[k].as_mut_slice());
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
                OptimizerKind::SgdNesterov { momentum } => {
                    let v = first[k].as_mut_slice();
                    for i in 0..p.len() {
                        v[i] = momentum * v[i] + g[i];
                        p[i] -= lr * (g[i] + momentum * v[i]);
                    }
                }
            }
        });
        match mismatch {
            Some(name) => Err(Error::shape(format!(
                "gradient for {name} does not match its parameter"
            ))),
            None => Ok(()),
        }
    }

    /// Moment buffers keyed `first.<i>` / `second.<i>` for checkpointing.
    pub fn state_table(&self) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        for (i, m) in self.first.iter().enumerate() {
            out.insert(format!("first.{i:04}"), m.clone());
        }
        for (i, m) in self.second.iter().enumerate() {
            out.insert(format!("second.{i:04}"), m.clone());
        }
        out
    }

    pub fn restore_state(&mut self, steps: u64, table: &BTreeMap<String, Matrix>) {
        self.steps = steps;
        self.first = table
            .iter()
            .filter(|(k, _)| k.starts_with("first."))
            .map(|(_, m)| m.clone())
            .collect();
        self.second = table
            .iter()
            .filter(|(k, _)| k.starts_with("second."))
            .map(|(_, m)| m.clone())
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::params::{ParamVisitor, ParamVisitorMut};

    #[derive(Clone, Debug, PartialEq)]
    struct Scalar(Matrix);

    impl Scalar {
        fn new(v: f64) -> Self {
            Scalar(Matrix::from_vec(1, 1, vec![v]).unwrap())
        }
        fn value(&self) -> f64 {
            self.0.get(0, 0)
        }
    }

    impl Params for Scalar {
        fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>) {
            f(format!("{prefix}x"), &self.0);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
            f(format!("{prefix}x"), &mut self.0);
        }
    }

    #[test]
    fn sgd_with_zero_gradient_leaves_params() {
        let mut opt = Optimizer::sgd_nesterov(0.02, 0.9);
        let mut p = Scalar::new(1.25);
        opt.step(&mut p, &Scalar::new(0.0)).unwrap();
        assert_eq!(p.value(), 1.25);
    }

    #[test]
    fn adam_first_step_matches_hand_calculation() {
        // m = 0.1 g, v = 0.001 g², bias corrections give m̂ = g, v̂ = g²,
        // so the step is lr·g/(|g| + ε)
        let (lr, g) = (0.0005, 0.5);
        let mut opt = Optimizer::adam(lr);
        let mut p = Scalar::new(0.0);
        opt.step(&mut p, &Scalar::new(g)).unwrap();
        let expected = -lr * g / (g + 1e-8);
        assert!((p.value() - expected).abs() < 1e-15, "{} vs {expected}", p.value());
    }

    #[test]
    fn nesterov_momentum_matches_closed_form() {
        // velocity after n steps of unit gradient is (1-μⁿ)/(1-μ); each step
        // moves by lr·(1 + μ·vₙ)
        let (lr, mu) = (0.02, 0.9);
        let mut opt = Optimizer::sgd_nesterov(lr, mu);
        let mut p = Scalar::new(0.0);
        for _ in 0..2 {
            opt.step(&mut p, &Scalar::new(1.0)).unwrap();
        }
        let closed: f64 = (1..=2)
            .map(|n| {
                let v = (1.0 - mu_pow(mu, n)) / (1.0 - mu);
                lr * (1.0 + mu * v)
            })
            .sum();
        assert!((p.value() + closed).abs() < 1e-15);
        assert!((closed - 0.0922).abs() < 1e-12);
    }

    fn mu_pow(mu: f64, n: i32) -> f64 {
        mu.powi(n)
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = Optimizer::adam(0.1);
        let mut p = Scalar::new(0.0);
        assert!(matches!(
            opt.step(&mut p, &Scalar::new(f64::NAN)),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p.value(), 0.0);
    }

    #[test]
    fn frozen_tensor_is_never_touched() {
        let mut opt = Optimizer::sgd_nesterov(0.5, 0.9);
        opt.freeze("x");
        let mut p = Scalar::new(3.0);
        for _ in 0..3 {
            opt.step(&mut p, &Scalar::new(1.0)).unwrap();
        }
        assert_eq!(p.value().to_bits(), 3.0f64.to_bits());
    }

    #[test]
    fn state_round_trip() {
        let mut opt = Optimizer::adam(0.1);
        let mut p = Scalar::new(0.0);
        opt.step(&mut p, &Scalar::new(0.3)).unwrap();
        let mut other = Optimizer::adam(0.1);
        other.restore_state(opt.steps(), &opt.state_table());
        assert_eq!(other, opt);
    }
}
