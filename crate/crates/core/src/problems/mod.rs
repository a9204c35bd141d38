//! Local objectives `f_i` with stochastic oracles and known ground truth.
//!
//! A [`Problem`] carries the smoothness and strong-convexity constants that
//! every sampled function satisfies, the minimizer of the average objective
//! and the heterogeneity / noise levels measured at that minimizer.

mod generate;
mod io;
mod objective;

pub use generate::{make_logistic_problem, make_quadratic_problem, LogisticSpec, QuadraticSpec};
pub use io::{export_problem, import_problem, ProblemFile, PROBLEM_FILE_FORMAT, PROBLEM_FILE_VERSION};
pub use objective::{BaseObjective, LocalObjective, NoiseModel, ProxTerm};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, half_quad_form, norm_sq};
use crate::seed;

/// Stopping tolerance on `||grad f||` for the ground-truth solver.
pub const OPTIMUM_TOL: f64 = 1e-12;
/// Largest gradient norm accepted as an optimality certificate.
pub const CERTIFICATE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Problem {
    n: usize,
    d: usize,
    locals: Vec<LocalObjective>,
    l: f64,
    mu: f64,
    x_star: Vec<f64>,
    f_star: f64,
    zeta_bar_sq: f64,
    sigma_bar_sq: f64,
    /// Mean Hessian when every local is quadratic.
    mean_hessian: Option<Vec<f64>>,
}

impl Problem {
    /// Assembles a problem and solves for its ground truth.
    ///
    /// `l` and `mu` are the declared smoothness and convexity constants; they are
    /// checked for consistency (`mu > 0`, `l >= mu`) but not re-derived.
    pub fn new(locals: Vec<LocalObjective>, l: f64, mu: f64) -> Result<Self> {
        let n = locals.len();
        if n == 0 {
            return Err(Error::invalid("locals", "need at least one node"));
        }
        let d = locals[0].dim();
        if locals.iter().any(|f| f.dim() != d) {
            return Err(Error::DimensionMismatch("local objectives disagree on dimension".into()));
        }
        if !(mu > 0.0) {
            return Err(Error::invalid("mu", format!("strong convexity must be positive, got {mu}")));
        }
        if !(l >= mu) {
            return Err(Error::invalid("L", format!("need L >= mu, got L = {l}, mu = {mu}")));
        }
        for f in &locals {
            if let NoiseModel::Minibatch { batch } = f.noise() {
                if !matches!(f.base(), BaseObjective::Logistic { .. }) {
                    return Err(Error::Unsupported("minibatch noise needs a finite-sum objective".into()));
                }
                if batch == 0 {
                    return Err(Error::invalid("batch", "minibatch size must be >= 1"));
                }
            }
            if let NoiseModel::AdditiveGaussian { sigma } = f.noise() {
                if !(sigma >= 0.0) {
                    return Err(Error::invalid("sigma", format!("noise level must be >= 0, got {sigma}")));
                }
            }
        }
        let mean_hessian = if locals.iter().all(LocalObjective::is_quadratic) {
            let mut h = DMatrix::zeros(d, d);
            for f in &locals {
                h += f.quadratic_hessian().expect("quadratic");
            }
            h /= n as f64;
            Some(h.transpose().as_slice().to_vec())
        } else {
            None
        };
        let mut p = Problem {
            n,
            d,
            locals,
            l,
            mu,
            x_star: vec![0.0; d],
            f_star: 0.0,
            zeta_bar_sq: 0.0,
            sigma_bar_sq: 0.0,
            mean_hessian,
        };
        p.x_star = p.solve_optimum()?;
        p.f_star = p.value(&p.x_star);
        p.zeta_bar_sq = (0..n).map(|i| norm_sq(&p.grad(i, &p.x_star))).sum::<f64>() / n as f64;
        p.sigma_bar_sq = p.locals.iter().map(|f| f.noise_variance(&p.x_star)).sum::<f64>() / n as f64;
        Ok(p)
    }

    /// Damped Newton on `f = (1/n) sum f_i`; a single step for quadratics.
    fn solve_optimum(&self) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.d];
        let mut g = self.full_grad(&x);
        let mut gnorm = norm_sq(&g).sqrt();
        for _ in 0..100 {
            if gnorm <= OPTIMUM_TOL {
                break;
            }
            let mut h = DMatrix::zeros(self.d, self.d);
            for f in &self.locals {
                h += f.hessian(&x);
            }
            h /= self.n as f64;
            let step = h
                .cholesky()
                .ok_or_else(|| Error::NoConvergence("Hessian is not positive definite".into()))?
                .solve(&DVector::from_column_slice(&g));
            let f0 = self.value(&x);
            let mut t = 1.0;
            let (mut cand, mut cand_g);
            loop {
                cand = x.iter().zip(step.iter()).map(|(xi, si)| xi - t * si).collect::<Vec<_>>();
                cand_g = self.full_grad(&cand);
                // accept on decrease of either f or the gradient norm (the latter
                // settles round-off once f is flat to machine precision)
                if self.value(&cand) <= f0 || norm_sq(&cand_g).sqrt() < gnorm || t < 1e-10 {
                    break;
                }
                t *= 0.5;
            }
            let new_norm = norm_sq(&cand_g).sqrt();
            if new_norm >= gnorm && gnorm <= CERTIFICATE_TOL {
                break;
            }
            x = cand;
            g = cand_g;
            gnorm = new_norm;
        }
        if gnorm > CERTIFICATE_TOL {
            return Err(Error::NoConvergence(format!("optimality residual {gnorm:.3e}")));
        }
        Ok(x)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn zeta_bar_sq(&self) -> f64 {
        self.zeta_bar_sq
    }

    pub fn sigma_bar_sq(&self) -> f64 {
        self.sigma_bar_sq
    }

    pub fn locals(&self) -> &[LocalObjective] {
        &self.locals
    }

    pub fn local(&self, i: usize) -> &LocalObjective {
        &self.locals[i]
    }

    pub fn constants(&self) -> ProblemConstants {
        ProblemConstants {
            n: self.n,
            l: self.l,
            mu: self.mu,
            zeta_bar_sq: self.zeta_bar_sq,
            sigma_bar_sq: self.sigma_bar_sq,
        }
    }

    /// `f(x) = (1/n) sum_i f_i(x)`
    pub fn value(&self, x: &[f64]) -> f64 {
        self.locals.iter().map(|f| f.value(x)).sum::<f64>() / self.n as f64
    }

    /// `f(x) - f*`, evaluated without cancellation for quadratics.
    pub fn suboptimality(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.d];
        self.suboptimality_with(x, &mut scratch, &mut vec![0.0; self.d])
    }

    pub(crate) fn suboptimality_with(&self, x: &[f64], diff: &mut [f64], scratch: &mut [f64]) -> f64 {
        match &self.mean_hessian {
            Some(h) => {
                for ((o, xi), si) in diff.iter_mut().zip(x).zip(&self.x_star) {
                    *o = xi - si;
                }
                half_quad_form(h, diff, scratch)
            }
            None => self.value(x) - self.f_star,
        }
    }

    pub fn dist_sq_to_opt(&self, x: &[f64]) -> f64 {
        dist_sq(x, &self.x_star)
    }

    /// Exact `grad f_i(x)`.
    pub fn grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.locals[i].grad(x)
    }

    /// Exact `grad f(x)`.
    pub fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for f in &self.locals {
            crate::linalg::axpy(1.0 / self.n as f64, &f.grad(x), &mut out);
        }
        out
    }

    /// One stochastic gradient `grad F_i(x, xi)` from node `i`'s private stream.
    pub fn stoch_grad<R: Rng + ?Sized>(&self, i: usize, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        let mut scratch = vec![0.0; self.d];
        self.locals[i].stoch_grad_into(x, rng, &mut out, &mut scratch);
        out
    }

    pub fn is_quadratic(&self) -> bool {
        self.mean_hessian.is_some()
    }
}

/// Scalar constants consumed by the step-size and complexity calculators.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemConstants {
    pub n: usize,
    pub l: f64,
    pub mu: f64,
    pub zeta_bar_sq: f64,
    pub sigma_bar_sq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseStats {
    /// Exact `(1/n) sum ||grad f_i(x*)||^2`.
    pub zeta_bar_sq: f64,
    /// Monte Carlo estimate of `(1/n) sum E ||grad F_i(x*, xi) - grad f_i(x*)||^2`.
    pub sigma_bar_sq_hat: f64,
    /// Closed-form value of the same quantity.
    pub sigma_bar_sq_exact: f64,
}

pub fn noise_stats_at_optimum(p: &Problem, draws: usize, seed: u64) -> Result<NoiseStats> {
    if draws == 0 {
        return Err(Error::invalid("draws", "need at least one draw"));
    }
    let x = p.x_star();
    let mut rngs = seed::node_streams(seed, p.n());
    let mut total = 0.0;
    for (i, rng) in rngs.iter_mut().enumerate() {
        let exact = p.grad(i, x);
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += dist_sq(&p.stoch_grad(i, x, rng), &exact);
        }
        total += acc / draws as f64;
    }
    Ok(NoiseStats {
        zeta_bar_sq: p.zeta_bar_sq(),
        sigma_bar_sq_hat: total / p.n() as f64,
        sigma_bar_sq_exact: p.sigma_bar_sq(),
    })
}

/// Per-node proximal shift `f_i(x) + (kappa/2) ||x - y_i||^2` with `anchors`
/// given row-major `n x d`. The result has constants `(L + kappa, mu + kappa)`
/// and its optimum minimizes `f(x) + (kappa/2) ||x - ybar||^2`.
pub fn shift_problem(p: &Problem, anchors: &[f64], kappa: f64) -> Result<Problem> {
    if !(kappa >= 0.0) {
        return Err(Error::invalid("kappa", format!("must be >= 0, got {kappa}")));
    }
    if anchors.len() != p.n() * p.d() {
        return Err(Error::DimensionMismatch(format!(
            "anchors have {} entries, expected {} x {}",
            anchors.len(),
            p.n(),
            p.d()
        )));
    }
    if kappa == 0.0 {
        return Ok(p.clone());
    }
    let d = p.d();
    let locals = p
        .locals
        .iter()
        .enumerate()
        .map(|(i, f)| f.shifted(kappa, &anchors[i * d..(i + 1) * d]))
        .collect();
    Problem::new(locals, p.l() + kappa, p.mu() + kappa)
}
