use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dist_sq, dot, half_quad_form, sym_matvec};

/// Gradient noise of a local oracle `F_i(x, xi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseModel {
    None,
    /// `grad f_i(x) + sigma * N(0, I_d)`.
    AdditiveGaussian { sigma: f64 },
    /// Average of `batch` per-sample gradients drawn uniformly with
    /// replacement. Only finite-sum objectives support it.
    Minibatch { batch: usize },
}

impl NoiseModel {
    pub fn is_none(&self) -> bool {
        matches!(self, NoiseModel::None)
    }
}

/// Deterministic part of a local objective `f_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseObjective {
    /// `0.5 (x - b)^T A (x - b)`, `A` symmetric, row-major.
    Quadratic { a: Vec<f64>, b: Vec<f64> },
    /// `(1/m) sum_j log(1 + exp(-y_j <a_j, x>)) + (l2/2) ||x||^2`, features row-major `m x d`.
    Logistic {
        features: Vec<f64>,
        labels: Vec<f64>,
        l2: f64,
    },
}

impl BaseObjective {
    pub fn dim(&self) -> usize {
        match self {
            BaseObjective::Quadratic { b, .. } => b.len(),
            BaseObjective::Logistic { features, labels, .. } => features.len() / labels.len(),
        }
    }

    fn value(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        match self {
            BaseObjective::Quadratic { a, b } => {
                for ((s, xi), bi) in scratch.iter_mut().zip(x).zip(b) {
                    *s = xi - bi;
                }
                let diff = scratch.to_vec();
                half_quad_form(a, &diff, scratch)
            }
            BaseObjective::Logistic { features, labels, l2 } => {
                let d = x.len();
                let m = labels.len();
                let loss: f64 = labels
                    .iter()
                    .enumerate()
                    .map(|(j, &y)| softplus(-y * dot(&features[j * d..(j + 1) * d], x)))
                    .sum();
                loss / m as f64 + 0.5 * l2 * dot(x, x)
            }
        }
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match self {
            BaseObjective::Quadratic { a, b } => {
                for ((s, xi), bi) in scratch.iter_mut().zip(x).zip(b) {
                    *s = xi - bi;
                }
                sym_matvec(a, scratch, out);
            }
            BaseObjective::Logistic { features, labels, l2 } => {
                let d = x.len();
                let m = labels.len() as f64;
                out.fill(0.0);
                for (j, &y) in labels.iter().enumerate() {
                    let row = &features[j * d..(j + 1) * d];
                    axpy(sample_coeff(row, y, x) / m, row, out);
                }
                axpy(*l2, x, out);
            }
        }
    }

    /// Gradient of the per-sample function `F(x, j)` (loss_j + l2 term).
    fn sample_grad_into(&self, j: usize, x: &[f64], out: &mut [f64]) {
        match self {
            BaseObjective::Logistic { features, labels, l2 } => {
                let d = x.len();
                let row = &features[j * d..(j + 1) * d];
                out.fill(0.0);
                axpy(sample_coeff(row, labels[j], x), row, out);
                axpy(*l2, x, out);
            }
            BaseObjective::Quadratic { .. } => unreachable!("quadratics are not finite sums"),
        }
    }

    fn samples(&self) -> Option<usize> {
        match self {
            BaseObjective::Logistic { labels, .. } => Some(labels.len()),
            BaseObjective::Quadratic { .. } => None,
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        match self {
            BaseObjective::Quadratic { a, .. } => DMatrix::from_row_slice(d, d, a),
            BaseObjective::Logistic { features, labels, l2 } => {
                let m = labels.len() as f64;
                let mut h = DMatrix::identity(d, d) * *l2;
                for (j, &y) in labels.iter().enumerate() {
                    let row = &features[j * d..(j + 1) * d];
                    let s = sigmoid(y * dot(row, x));
                    let w = s * (1.0 - s) / m;
                    for r in 0..d {
                        for c in 0..d {
                            h[(r, c)] += w * row[r] * row[c];
                        }
                    }
                }
                h
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// d/dx log(1 + exp(-y <a, x>)) = coeff * a
fn sample_coeff(row: &[f64], y: f64, x: &[f64]) -> f64 {
    -y * sigmoid(-y * dot(row, x))
}

/// `(kappa/2) ||x - anchor||^2 + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxTerm {
    pub kappa: f64,
    pub anchor: Vec<f64>,
    pub offset: f64,
}

impl ProxTerm {
    /// Sum of two proximal terms, folded into a single one.
    fn merge(&self, kappa: f64, anchor: &[f64]) -> ProxTerm {
        let total = self.kappa + kappa;
        let merged: Vec<f64> = self
            .anchor
            .iter()
            .zip(anchor)
            .map(|(a, b)| (self.kappa * a + kappa * b) / total)
            .collect();
        let offset = self.offset + 0.5 * self.kappa * kappa / total * dist_sq(&self.anchor, anchor);
        ProxTerm {
            kappa: total,
            anchor: merged,
            offset,
        }
    }
}

/// One node's objective `f_i`, optionally shifted by a proximal term, with its
/// stochastic oracle.
#[derive(Clone, Debug)]
pub struct LocalObjective {
    base: Arc<BaseObjective>,
    prox: Option<ProxTerm>,
    noise: NoiseModel,
}

impl LocalObjective {
    pub fn new(base: BaseObjective, noise: NoiseModel) -> Self {
        LocalObjective {
            base: Arc::new(base),
            prox: None,
            noise,
        }
    }

    pub fn base(&self) -> &BaseObjective {
        &self.base
    }

    pub fn prox(&self) -> Option<&ProxTerm> {
        self.prox.as_ref()
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub(crate) fn shifted(&self, kappa: f64, anchor: &[f64]) -> LocalObjective {
        let prox = match &self.prox {
            Some(p) => p.merge(kappa, anchor),
            None => ProxTerm {
                kappa,
                anchor: anchor.to_vec(),
                offset: 0.0,
            },
        };
        LocalObjective {
            base: Arc::clone(&self.base),
            prox: Some(prox),
            noise: self.noise,
        }
    }

    pub(crate) fn with_prox(mut self, prox: Option<ProxTerm>) -> Self {
        self.prox = prox;
        self
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; x.len()];
        let mut v = self.base.value(x, &mut scratch);
        if let Some(p) = &self.prox {
            v += 0.5 * p.kappa * dist_sq(x, &p.anchor) + p.offset;
        }
        v
    }

    /// Exact gradient into `out`; `scratch` must have length `d`.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.base.grad_into(x, out, scratch);
        self.add_prox_grad(x, out);
    }

    fn add_prox_grad(&self, x: &[f64], out: &mut [f64]) {
        if let Some(p) = &self.prox {
            for ((o, xi), ai) in out.iter_mut().zip(x).zip(&p.anchor) {
                *o += p.kappa * (xi - ai);
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        let mut scratch = vec![0.0; x.len()];
        self.grad_into(x, &mut out, &mut scratch);
        out
    }

    /// One draw of `grad F_i(x, xi)`. Noise-free oracles consume no randomness.
    pub fn stoch_grad_into<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, out: &mut [f64], scratch: &mut [f64]) {
        match self.noise {
            NoiseModel::None => self.grad_into(x, out, scratch),
            NoiseModel::AdditiveGaussian { sigma } => {
                self.grad_into(x, out, scratch);
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o += sigma * z;
                }
            }
            NoiseModel::Minibatch { batch } => {
                let m = self.base.samples().expect("minibatch noise on a finite-sum objective");
                out.fill(0.0);
                for _ in 0..batch {
                    let j = rng.random_range(0..m);
                    self.base.sample_grad_into(j, x, scratch);
                    axpy(1.0 / batch as f64, scratch, out);
                }
                self.add_prox_grad(x, out);
            }
        }
    }

    /// Smoothness constant of the sampled functions `F_i(., xi)`, without prox.
    pub fn base_smoothness(&self) -> f64 {
        match &*self.base {
            BaseObjective::Quadratic { a, .. } => {
                let d = self.dim();
                let eig = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(d, d, a));
                eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v))
            }
            BaseObjective::Logistic { features, labels, l2 } => {
                let d = self.dim();
                (0..labels.len())
                    .map(|j| 0.25 * dot(&features[j * d..(j + 1) * d], &features[j * d..(j + 1) * d]))
                    .fold(0.0f64, f64::max)
                    + l2
            }
        }
    }

    /// `E || grad F_i(x, xi) - grad f_i(x) ||^2`, exact for every noise model.
    pub fn noise_variance(&self, x: &[f64]) -> f64 {
        match self.noise {
            NoiseModel::None => 0.0,
            NoiseModel::AdditiveGaussian { sigma } => x.len() as f64 * sigma * sigma,
            NoiseModel::Minibatch { batch } => {
                let m = self.base.samples().expect("finite-sum objective");
                let d = x.len();
                let mut scratch = vec![0.0; d];
                let mut mean = vec![0.0; d];
                self.base.grad_into(x, &mut mean, &mut scratch);
                let mut g = vec![0.0; d];
                let spread: f64 = (0..m)
                    .map(|j| {
                        self.base.sample_grad_into(j, x, &mut g);
                        dist_sq(&g, &mean)
                    })
                    .sum::<f64>()
                    / m as f64;
                spread / batch as f64
            }
        }
    }

    pub(crate) fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = self.base.hessian(x);
        if let Some(p) = &self.prox {
            for i in 0..x.len() {
                h[(i, i)] += p.kappa;
            }
        }
        h
    }

    pub(crate) fn is_quadratic(&self) -> bool {
        matches!(*self.base, BaseObjective::Quadratic { .. })
    }

    /// Hessian of a quadratic objective including the prox term.
    pub(crate) fn quadratic_hessian(&self) -> Option<DMatrix<f64>> {
        self.is_quadratic().then(|| self.hessian(&vec![0.0; self.dim()]))
    }
}
