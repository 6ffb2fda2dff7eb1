//! Finite-difference verification of recorded gradients.

use super::graph::{Graph, NodeId, Result};
use super::tensor::Tensor;

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Relative error between an analytic and a numeric gradient entry.
///
/// The denominator floors at 1e-3 so that finite-difference noise on
/// near-zero gradients does not register as disagreement while genuine
/// rule errors still do.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar-valued tensor function.
pub fn fd_gradient<F>(f: &F, x: &Tensor, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let out = f(&mut g, xn)?;
    Ok(g.value(out).get(0, 0))
}

/// Compares the recorded gradient of `f` at `x` against central finite
/// differences and returns the max relative error over all entries.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xn = g.leaf(x.clone(), true);
    let out = f(&mut g, xn)?;
    g.backward(out)?;
    let analytic = g
        .grad(xn)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    let numeric = fd_gradient(&f, x, eps)?;
    Ok(max_rel_err(&analytic, &numeric))
}

/// Central-difference comparison with kink-robust step refinement.
///
/// `eval_at(delta)` evaluates the scalar function with one coordinate
/// shifted by `delta`. The probe starts at `eps` and shrinks when the
/// estimate disagrees with the analytic value: a probe that straddles a
/// piecewise-linear kink (leaky ReLU, max) is contaminated only while the
/// step reaches across it, so the disagreement vanishes at smaller steps,
/// whereas a wrong gradient rule disagrees at every step. Returns the
/// best relative error across the ladder.
pub fn adaptive_fd_rel_err(
    analytic: f64,
    mut eval_at: impl FnMut(f64) -> f64,
    eps: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    let mut step = eps;
    for _ in 0..3 {
        let plus = eval_at(step);
        let minus = eval_at(-step);
        let numeric = (plus - minus) / (2.0 * step);
        best = best.min(rel_err(analytic, numeric));
        if best < 1e-6 {
            break;
        }
        step /= 8.0;
    }
    best
}
