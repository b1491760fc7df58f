//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::ParamTree;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradientReport {
    pub checked: usize,
    pub worst_relative: f64,
    pub mismatches: Vec<GradientMismatch>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.checked > 0
    }
}

/// Relative error with an absolute floor so that entries whose true
/// gradient is zero do not divide by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= 1e-9 {
        return 0.0;
    }
    diff / a.abs().max(b.abs())
}

/// Compares reverse-mode gradients of `loss` against central differences
/// on up to `per_tensor` random entries of every parameter.
pub fn check_gradients<R, F>(params: &ParamTree, per_tensor: usize, eps: f64, tol: f64, rng: &mut R, loss: F) -> Result<GradientReport>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |p: &ParamTree| -> Result<f64> {
        let mut g = Graph::inference(p);
        let l = loss(&mut g)?;
        Ok(g.scalar(l))
    };
    let mut report = GradientReport::default();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name)?.len();
        let picks = sample(rng, len, per_tensor.min(len)).into_vec();
        let analytic = grads.get(&name).map(|t| t.data.clone()).unwrap_or_else(|_| vec![0.0; len]);
        for idx in picks {
            let orig = params.get(&name)?.data[idx];
            probe.get_mut(&name).expect("cloned").data[idx] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("cloned").data[idx] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("cloned").data[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(analytic[idx], numeric);
            report.checked += 1;
            report.worst_relative = report.worst_relative.max(rel);
            if rel > tol {
                report.mismatches.push(GradientMismatch { name: name.clone(), index: idx, analytic: analytic[idx], numeric });
            }
        }
    }
    Ok(report)
}
