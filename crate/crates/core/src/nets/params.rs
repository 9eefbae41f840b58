//! Named parameter tables.
//!
//! Models expose their tensors through a visitor so the optimizers, the
//! checkpoint writer and the gradient checker can walk them in one fixed
//! order. A gradient buffer is simply another instance of the model type.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub type ParamVisitor<'a, 'f> = dyn FnMut(String, &'a Matrix) + 'f;
pub type ParamVisitorMut<'f> = dyn FnMut(String, &mut Matrix) + 'f;

pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>);

    fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, m| out.push((name, m)));
        out
    }

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, m| m.fill(0.0));
        z
    }

    /// `self += other`, tensor by tensor.
    fn add_from(&mut self, other: &Self) {
        let theirs = other.named();
        let mut i = 0;
        self.visit_mut("", &mut |_, m| {
            m.add_assign(theirs[i].1);
            i += 1;
        });
    }

    fn scale(&mut self, s: f64) {
        self.visit_mut("", &mut |_, m| m.as_mut_slice().iter_mut().for_each(|x| *x *= s));
    }

    fn flatten(&self) -> Vec<f64> {
        self.named()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, m)| m.as_slice().iter().all(|x| x.is_finite()))
    }

    /// Copies tensors out of `table`, prefixed with `prefix`. Every parameter
    /// must be present with a matching shape.
    fn load_from(&mut self, prefix: &str, table: &BTreeMap<String, Matrix>) -> Result<()> {
        let mut err = None;
        self.visit_mut(prefix, &mut |name, m| {
            if err.is_some() {
                return;
            }
            match table.get(&name) {
                Some(src) if src.shape() == m.shape() => m.as_mut_slice().copy_from_slice(src.as_slice()),
                Some(src) => {
                    err = Some(Error::shape(format!(
                        "tensor {name}: expected {:?}, found {:?}",
                        m.shape(),
                        src.shape()
                    )))
                }
                None => err = Some(Error::data(format!("tensor {name} missing"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Tensors keyed by `prefix + name`.
    fn to_table(&self, prefix: &str) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        self.visit(prefix, &mut |name, m| {
            out.insert(name, m.clone());
        });
        out
    }
}
