use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BaseObjective, LocalObjective, NoiseModel, Problem};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    /// `L / mu`.
    pub condition_number: f64,
    /// Spread of the local minimizers around a common center.
    pub heterogeneity: f64,
    pub noise: NoiseModel,
}

/// Synthetic `f_i(x) = 0.5 (x - b_i)^T A_i (x - b_i)`.
///
/// All `A_i` share one random eigenbasis. Each spectrum contains `mu` and
/// `L = mu * condition_number` exactly (for `d >= 2`), with the remaining
/// eigenvalues uniform in between, so the average objective has condition
/// number exactly `L / mu`. `b_i = c + heterogeneity * delta_i` with `c` and
/// `delta_i` standard Gaussian.
pub fn make_quadratic_problem(spec: &QuadraticSpec, seed: u64) -> Result<Problem> {
    let QuadraticSpec {
        n,
        d,
        mu,
        condition_number,
        heterogeneity,
        noise,
    } = *spec;
    if n == 0 || d == 0 {
        return Err(Error::invalid("n", "need n >= 1 and d >= 1"));
    }
    if !(condition_number >= 1.0) {
        return Err(Error::invalid(
            "condition_number",
            format!("must be >= 1, got {condition_number}"),
        ));
    }
    if !(heterogeneity >= 0.0) {
        return Err(Error::invalid("heterogeneity", format!("must be >= 0, got {heterogeneity}")));
    }
    if !(mu > 0.0) {
        return Err(Error::invalid("mu", format!("must be positive, got {mu}")));
    }
    let l = mu * condition_number;
    let mut rng = seed::stream(seed, seed::PROBLEM_TAG, 0);
    let q = random_orthogonal(d, &mut rng);
    let center = gaussian_vec(d, &mut rng);
    let mut locals = Vec::with_capacity(n);
    for _ in 0..n {
        let mut spectrum = vec![mu; d];
        if d >= 2 {
            spectrum[d - 1] = l;
            for v in spectrum.iter_mut().take(d - 1).skip(1) {
                *v = mu + (l - mu) * rng.random::<f64>();
            }
        }
        let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum)) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let delta = gaussian_vec(d, &mut rng);
        let b = center.iter().zip(&delta).map(|(c, e)| c + heterogeneity * e).collect();
        locals.push(LocalObjective::new(
            BaseObjective::Quadratic {
                a: a.as_slice().to_vec(),
                b,
            },
            noise,
        ));
    }
    Problem::new(locals, l, mu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    pub n: usize,
    pub d: usize,
    pub samples_per_node: usize,
    /// Ridge weight; also the strong-convexity constant.
    pub l2: f64,
    /// Spread of the per-node planted classifiers.
    pub heterogeneity: f64,
    pub noise: NoiseModel,
}

/// L2-regularized logistic regression on planted Gaussian data.
///
/// `L = max_j ||a_j||^2 / 4 + l2` bounds every per-sample function, so it
/// is valid for minibatch oracles as well.
pub fn make_logistic_problem(spec: &LogisticSpec, seed: u64) -> Result<Problem> {
    let LogisticSpec {
        n,
        d,
        samples_per_node,
        l2,
        heterogeneity,
        noise,
    } = *spec;
    if n == 0 || d == 0 || samples_per_node == 0 {
        return Err(Error::invalid("n", "need n, d, samples_per_node >= 1"));
    }
    if !(l2 > 0.0) {
        return Err(Error::invalid("l2", format!("must be positive for strong convexity, got {l2}")));
    }
    if !(heterogeneity >= 0.0) {
        return Err(Error::invalid("heterogeneity", format!("must be >= 0, got {heterogeneity}")));
    }
    let mut rng = seed::stream(seed, seed::PROBLEM_TAG, 1);
    let w0 = gaussian_vec(d, &mut rng);
    let scale = 1.0 / (d as f64).sqrt();
    let mut l = l2;
    let mut locals = Vec::with_capacity(n);
    for _ in 0..n {
        let w: Vec<f64> = w0
            .iter()
            .map(|v| v + heterogeneity * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut features = Vec::with_capacity(samples_per_node * d);
        let mut labels = Vec::with_capacity(samples_per_node);
        for _ in 0..samples_per_node {
            let a: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let z = crate::linalg::dot(&a, &w);
            let prob = 1.0 / (1.0 + (-z).exp());
            labels.push(if rng.random::<f64>() < prob { 1.0 } else { -1.0 });
            l = l.max(0.25 * crate::linalg::norm_sq(&a) + l2);
            features.extend(a);
        }
        locals.push(LocalObjective::new(BaseObjective::Logistic { features, labels, l2 }, noise));
    }
    Problem::new(locals, l, l2)
}

fn gaussian_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Haar-distributed orthogonal matrix via QR with sign correction.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
