use crate::dsgd::NodeStates;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq};
use crate::problems::{shift_problem, Problem};

/// `(1/n) sum ||y_i||^2 - (1/n^2) ||sum y_i||^2`, evaluated as the spread
/// `(1/n) sum ||y_i - ybar||^2` so it never goes negative.
pub fn sigma_y(anchors: &NodeStates) -> f64 {
    anchors.consensus_error() / anchors.n() as f64
}

/// Inner problem of outer step `k`: node `i` minimizes
/// `f_i(x) + (kappa/2) ||x - y_i||^2`.
pub fn surrogate(p: &Problem, anchors: &NodeStates, kappa: f64) -> Result<Problem> {
    shift_problem(p, anchors.as_slice(), kappa)
}

/// `H(X) = (1/n) sum [f_i(x_i) + (kappa/2) ||x_i - y_i||^2] - (kappa/2) sigma_y`
pub fn evaluate_big_h(p: &Problem, x: &NodeStates, anchors: &NodeStates, kappa: f64) -> Result<f64> {
    if x.n() != p.n() || x.d() != p.d() || anchors.n() != p.n() || anchors.d() != p.d() {
        return Err(Error::DimensionMismatch("states, anchors and problem disagree".into()));
    }
    let n = p.n();
    let total: f64 = (0..n)
        .map(|i| p.local(i).value(x.row(i)) + 0.5 * kappa * dist_sq(x.row(i), anchors.row(i)))
        .sum();
    Ok(total / n as f64 - 0.5 * kappa * sigma_y(anchors))
}

/// `h(x) = f(x) + (kappa/2) ||x - ybar||^2`
pub fn evaluate_h(p: &Problem, x: &[f64], ybar: &[f64], kappa: f64) -> f64 {
    p.value(x) + 0.5 * kappa * dist_sq(x, ybar)
}

/// `grad h(x) = grad f(x) + kappa (x - ybar)`
pub fn grad_h(p: &Problem, x: &[f64], ybar: &[f64], kappa: f64) -> Vec<f64> {
    let mut g = p.full_grad(x);
    axpy(kappa, x, &mut g);
    axpy(-kappa, ybar, &mut g);
    g
}
