//! Central finite-difference checks for analytic gradients.

use super::params::Params;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Perturbs every parameter of `model` by `±step` and compares the central
/// difference of `loss` against the gradient returned by `grad`.
pub fn check_gradients<M, L, G>(model: &M, loss: L, grad: G, step: f64) -> GradReport
where
    M: Params + Clone,
    L: Fn(&M) -> f64,
    G: Fn(&M) -> M,
{
    let analytic = grad(model);
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .named()
        .into_iter()
        .map(|(n, m)| (n, m.as_slice().to_vec()))
        .collect();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = model.clone();
    for (k, (name, values)) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let set = |m: &mut M, value: Option<f64>| -> f64 {
                let mut idx = 0;
                let mut old = 0.0;
                m.visit_mut("", &mut |_, t| {
                    if idx == k {
                        old = t.as_slice()[i];
                        if let Some(v) = value {
                            t.as_mut_slice()[i] = v;
                        }
                    }
                    idx += 1;
                });
                old
            };
            let orig = set(&mut probe, None);
            set(&mut probe, Some(orig + step));
            let up = loss(&probe);
            set(&mut probe, Some(orig - step));
            let down = loss(&probe);
            set(&mut probe, Some(orig));
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}] analytic={a:.6e} numeric={numeric:.6e}");
            }
        }
    }
    report
}
