//! Catalyst outer loop around DSGD: inexact proximal-point steps on
//! per-node-anchored surrogates with Nesterov-style anchor extrapolation.

mod run;
mod surrogate;

pub use run::{
    catalyst_dsgd_run, CatalystOptions, CatalystRecord, CatalystState, OuterRow, OUTER_CSV_HEADER, STEP_MATCHED_SCALE,
};
pub use surrogate::{evaluate_big_h, evaluate_h, grad_h, sigma_y, surrogate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemConstants;

/// Multiplier on `(1 - sqrt(q)/3)^k (f(xbar^0) - f*)` in the accuracy schedule.
pub const DEFAULT_EPS_CONSTANT: f64 = 2.0 / 9.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalystParams {
    pub kappa: f64,
    /// `mu / (mu + kappa)`
    pub q: f64,
    /// `sqrt(q) / 3`
    pub rho: f64,
    pub alpha0: f64,
    pub eps_schedule_constant: f64,
}

impl CatalystParams {
    pub fn new(mu: f64, kappa: f64, eps_schedule_constant: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Unsupported(format!("acceleration needs mu > 0, got {mu}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::invalid("kappa", format!("must be finite and >= 0, got {kappa}")));
        }
        if !(eps_schedule_constant > 0.0) {
            return Err(Error::invalid(
                "eps_schedule_constant",
                format!("must be positive, got {eps_schedule_constant}"),
            ));
        }
        let q = mu / (mu + kappa);
        Ok(CatalystParams {
            kappa,
            q,
            rho: q.sqrt() / 3.0,
            alpha0: q.sqrt(),
            eps_schedule_constant,
        })
    }

    /// `kappa = L - mu`, hence `q = mu / L`.
    pub fn for_constants(l: f64, mu: f64) -> Result<Self> {
        Self::new(mu, l - mu, DEFAULT_EPS_CONSTANT)
    }
}

/// Positive root of `a^2 + (a_prev^2 - q) a - a_prev^2 = 0`.
pub fn solve_alpha(alpha_prev: f64, q: f64) -> Result<f64> {
    if !(alpha_prev > 0.0 && alpha_prev <= 1.0) {
        return Err(Error::invalid("alpha_prev", format!("must be in (0, 1], got {alpha_prev}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid("q", format!("must be in (0, 1], got {q}")));
    }
    let b = alpha_prev * alpha_prev - q;
    let c = alpha_prev * alpha_prev;
    let disc = (b * b + 4.0 * c).sqrt();
    // pick the cancellation-free form of the same root
    Ok(if b > 0.0 { 2.0 * c / (b + disc) } else { (disc - b) / 2.0 })
}

/// `beta_k = a_prev (1 - a_prev) / (a_prev^2 + a)`
pub fn beta(alpha_prev: f64, alpha: f64) -> Result<f64> {
    let den = alpha_prev * alpha_prev + alpha;
    if !(den > 0.0) {
        return Err(Error::invalid("alpha", "a_prev^2 + a must be positive"));
    }
    Ok(alpha_prev * (1.0 - alpha_prev) / den)
}

/// `eps_k = constant (1 - sqrt(q)/3)^k initial_gap`
pub fn eps_schedule(k: usize, q: f64, initial_gap: f64, constant: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k", "schedule starts at k = 1"));
    }
    if !(initial_gap > 0.0) {
        return Err(Error::invalid("initial_gap", format!("must be positive, got {initial_gap}")));
    }
    check_q(q)?;
    Ok(constant * (1.0 - q.sqrt() / 3.0).powi(k as i32) * initial_gap)
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid("q", format!("must be in (0, 1], got {q}")));
    }
    Ok(())
}

/// `K = ceil((3/sqrt(q)) ln(initial_gap / (q eps)))`, with `K = 0` when the
/// start is already `eps`-accurate and `K >= 1` otherwise.
pub fn outer_iterations(q: f64, initial_gap: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    check_q(q)?;
    if initial_gap <= eps {
        return Ok(0);
    }
    // gap > eps >= q eps, so the log is positive here
    let log = (initial_gap / (q * eps)).ln();
    Ok(((3.0 / q.sqrt()) * log).ceil().max(1.0) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerBudget {
    /// `L_h sigma^2 / (mu_h^2 n eps_k)`
    pub variance: f64,
    /// `L_h (zeta tau + sigma sqrt(p tau)) / (sqrt(mu_h) mu_h p sqrt(eps_k))`
    pub heterogeneity: f64,
    /// `(L_h tau / (mu_h p)) ln(tau L_h^2 / (mu_h^2 p q^2))`
    pub log: f64,
    /// Sum of the three terms, rounded up.
    pub total: u64,
}

/// Unit-constant inner round count for outer step `k`, with
/// `L_h = L + kappa`, `mu_h = mu + kappa`.
pub fn inner_budget(eps_k: f64, k: &ProblemConstants, kappa: f64, tau: usize, pc: f64) -> Result<InnerBudget> {
    if !(eps_k > 0.0) {
        return Err(Error::invalid("eps_k", format!("must be positive, got {eps_k}")));
    }
    check_rate(tau, pc)?;
    let p = CatalystParams::new(k.mu, kappa, DEFAULT_EPS_CONSTANT)?;
    let lh = k.l + kappa;
    let muh = k.mu + kappa;
    let tf = tau as f64;
    let sigma = k.sigma_bar_sq.sqrt();
    let zeta = k.zeta_bar_sq.sqrt();
    let variance = lh * k.sigma_bar_sq / (muh * muh * k.n as f64 * eps_k);
    let heterogeneity = lh * (zeta * tf + sigma * (pc * tf).sqrt()) / (muh.sqrt() * muh * pc * eps_k.sqrt());
    let log = lh * tf / (muh * pc) * (tf * lh * lh / (muh * muh * pc * p.q * p.q)).ln();
    Ok(InnerBudget {
        variance,
        heterogeneity,
        log,
        total: (variance + heterogeneity + log).ceil() as u64,
    })
}

fn check_rate(tau: usize, pc: f64) -> Result<()> {
    if tau == 0 {
        return Err(Error::invalid("tau", "must be >= 1"));
    }
    if !(pc > 0.0 && pc <= 1.0) {
        return Err(Error::invalid("p", format!("consensus rate must be in (0, 1], got {pc}")));
    }
    Ok(())
}

/// Expected initial surrogate gap of a warm-started inner run: `eps_prev / q^2`.
pub fn warm_start_gap_bound(eps_prev: f64, q: f64) -> f64 {
    eps_prev / (q * q)
}

/// `(1 - sqrt(q)/2)^k (2 gap0 + 4 sum_{j<=k} (1 - sqrt(q)/2)^-j (eps_j + eps_j / sqrt(q)))`
/// with `eps_sequence[j - 1] = eps_j`.
pub fn catalyst_rate_bound(k: usize, q: f64, initial_gap: f64, eps_sequence: &[f64]) -> Result<f64> {
    check_q(q)?;
    if eps_sequence.len() < k {
        return Err(Error::invalid("eps_sequence", format!("need {k} entries, got {}", eps_sequence.len())));
    }
    let r = 1.0 - q.sqrt() / 2.0;
    let c = 1.0 + 1.0 / q.sqrt();
    // r^k r^-j = r^(k-j), summed without forming r^-j
    let tail: f64 = eps_sequence[..k]
        .iter()
        .enumerate()
        .map(|(j0, &e)| r.powi((k - (j0 + 1)) as i32) * c * e)
        .sum();
    Ok(2.0 * r.powi(k as i32) * initial_gap + 4.0 * tail)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalComplexity {
    /// `tau sqrt(L) / (p sqrt(mu)) ln(1/eps)`
    pub log: f64,
    /// `sqrt(L) sigma^2 / (n mu sqrt(mu) eps)`
    pub variance: f64,
    /// `sqrt(L) (zeta tau + sigma sqrt(p tau)) / (mu p sqrt(eps))`
    pub heterogeneity: f64,
    pub total: f64,
}

/// Unit-constant total round count of the accelerated method.
pub fn catalyst_total_complexity(k: &ProblemConstants, tau: usize, pc: f64, eps: f64) -> Result<f64> {
    Ok(catalyst_complexity_terms(k, tau, pc, eps)?.total)
}

pub fn catalyst_complexity_terms(k: &ProblemConstants, tau: usize, pc: f64, eps: f64) -> Result<TotalComplexity> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    check_rate(tau, pc)?;
    if !(k.mu > 0.0) {
        return Err(Error::Unsupported(format!("bound needs mu > 0, got {}", k.mu)));
    }
    let tf = tau as f64;
    let sl = k.l.sqrt();
    let sigma = k.sigma_bar_sq.sqrt();
    let zeta = k.zeta_bar_sq.sqrt();
    let log = tf * sl / (pc * k.mu.sqrt()) * (1.0 / eps).ln().max(0.0);
    let variance = sl * k.sigma_bar_sq / (k.n as f64 * k.mu * k.mu.sqrt() * eps);
    let heterogeneity = sl * (zeta * tf + sigma * (pc * tf).sqrt()) / (k.mu * pc * eps.sqrt());
    Ok(TotalComplexity {
        log,
        variance,
        heterogeneity,
        total: log + variance + heterogeneity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsgd::dsgd_bound_terms;

    fn residual(a: f64, ap: f64, q: f64) -> f64 {
        (a * a - (1.0 - a) * ap * ap - q * a).abs()
    }

    #[test]
    fn alpha_fixed_point() {
        for q in [0.01f64, 0.25, 1.0] {
            let a = solve_alpha(q.sqrt(), q).unwrap();
            assert!((a - q.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_for_unit_q() {
        for ap in [0.1, 0.5, 1.0] {
            assert!((solve_alpha(ap, 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_from_one_quarter() {
        let a = solve_alpha(1.0, 0.25).unwrap();
        let oracle = (-0.75 + 4.5625f64.sqrt()) / 2.0;
        assert!((a - oracle).abs() < 1e-15);
        assert!((a - 0.6930).abs() < 1e-4);
        assert!(residual(a, 1.0, 0.25) < 1e-12);
    }

    #[test]
    fn alpha_rejects_out_of_range() {
        assert!(solve_alpha(0.0, 0.5).is_err());
        assert!(solve_alpha(1.5, 0.5).is_err());
        assert!(solve_alpha(0.5, 0.0).is_err());
        assert!(solve_alpha(0.5, 1.5).is_err());
    }

    #[test]
    fn beta_examples() {
        assert!((beta(0.5, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(beta(1.0, 0.7).unwrap(), 0.0);
        let a = solve_alpha(1.0, 0.25).unwrap();
        assert!((beta(0.5, a).unwrap() - 0.25 / (0.25 + a)).abs() < 1e-15);
        assert!((beta(0.5, 0.6930).unwrap() - 0.2651).abs() < 1e-4);
        assert!(beta(0.0, 0.0).is_err());
    }

    #[test]
    fn eps_schedule_examples() {
        let e1 = eps_schedule(1, 0.25, 9.0, DEFAULT_EPS_CONSTANT).unwrap();
        assert!((e1 - 5.0 / 3.0).abs() < 1e-15);
        let e2 = eps_schedule(2, 0.25, 9.0, DEFAULT_EPS_CONSTANT).unwrap();
        assert!((e2 / e1 - 5.0 / 6.0).abs() < 1e-15);
        let r = eps_schedule(4, 1.0, 1.0, 1.0).unwrap() / eps_schedule(3, 1.0, 1.0, 1.0).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert!(eps_schedule(1, 0.25, 0.0, 1.0).is_err());
        assert!(eps_schedule(0, 0.25, 1.0, 1.0).is_err());
    }

    #[test]
    fn outer_iteration_examples() {
        assert_eq!(outer_iterations(0.01, 1.0, 1e-6).unwrap(), 553);
        assert_eq!(outer_iterations(0.5, 1.0, 1.0).unwrap(), 0);
        assert_eq!(outer_iterations(0.5, 1.0, 3.0).unwrap(), 0);
        // gap > eps implies gap > q eps, so at least one step runs
        let k = outer_iterations(0.5, 1.0, 0.9).unwrap();
        assert_eq!(k, ((3.0 / 0.5f64.sqrt()) * (1.0f64 / 0.45).ln()).ceil() as usize);
        assert!(k >= 1);
        assert!(outer_iterations(0.5, 1.0, 0.0).is_err());
        let a = outer_iterations(0.09, 5.0, 1e-4).unwrap();
        let b = outer_iterations(0.09, 5.0, 1e-4 / std::f64::consts::E).unwrap();
        assert!(b - a <= 10 + 1 && b > a);
    }

    #[test]
    fn default_schedule_meets_total_accuracy() {
        for (q, gap, eps) in [(0.01, 1.0, 1e-6), (0.25, 9.0, 1e-3), (1e-3, 50.0, 1e-8)] {
            let k = outer_iterations(q, gap, eps).unwrap();
            let ek = eps_schedule(k, q, gap, DEFAULT_EPS_CONSTANT).unwrap();
            assert!(ek / q <= eps);
        }
    }

    fn noiseless(l: f64, mu: f64) -> ProblemConstants {
        ProblemConstants {
            n: 4,
            l,
            mu,
            zeta_bar_sq: 0.0,
            sigma_bar_sq: 0.0,
        }
    }

    #[test]
    fn inner_budget_without_noise() {
        let (l, mu, tau, pc) = (50.0, 0.5, 2usize, 0.4);
        let b = inner_budget(1e-3, &noiseless(l, mu), l - mu, tau, pc).unwrap();
        assert_eq!((b.variance, b.heterogeneity), (0.0, 0.0));
        let tf = tau as f64;
        let expect = (2.0 * l - mu) * tf / (l * pc)
            * (tf * (2.0 * l - mu).powi(2) * l * l / (l * l * pc * mu * mu)).ln();
        assert!((b.log - expect).abs() < 1e-12 * expect);
        assert!(b.log <= 2.0 * tf / pc * (4.0 * tf * l * l / (pc * mu * mu)).ln());
        assert_eq!(b.total, expect.ceil() as u64);
    }

    #[test]
    fn inner_budget_homogeneity_and_degenerate_prox() {
        let k = ProblemConstants {
            n: 3,
            l: 8.0,
            mu: 2.0,
            zeta_bar_sq: 1.0,
            sigma_bar_sq: 0.5,
        };
        let a = inner_budget(1e-2, &k, 6.0, 1, 0.5).unwrap();
        let b = inner_budget(1e-2 / 4.0, &k, 6.0, 1, 0.5).unwrap();
        assert!((b.variance / a.variance - 4.0).abs() < 1e-12);
        assert!((b.heterogeneity / a.heterogeneity - 2.0).abs() < 1e-12);
        assert_eq!(a.log, b.log);
        let z = inner_budget(1e-2, &k, 0.0, 1, 0.5).unwrap();
        assert!((z.log - 8.0 / (2.0 * 0.5) * (64.0f64 / (4.0 * 0.5)).ln()).abs() < 1e-12);
        assert!(inner_budget(0.0, &k, 6.0, 1, 0.5).is_err());
    }

    #[test]
    fn warm_start_examples() {
        assert_eq!(warm_start_gap_bound(0.3, 1.0), 0.3);
        assert_eq!(warm_start_gap_bound(0.0, 0.2), 0.0);
        assert!((warm_start_gap_bound(1e-3, 0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rate_bound_examples() {
        let q: f64 = 0.25;
        assert_eq!(catalyst_rate_bound(0, q, 1.5, &[]).unwrap(), 3.0);
        let exact = catalyst_rate_bound(4, q, 1.0, &[0.0; 4]).unwrap();
        assert!((exact - 2.0 * 0.75f64.powi(4)).abs() < 1e-15);
        let eps: Vec<f64> = (1..=40).map(|j| 2.0 / 9.0 * (5.0f64 / 6.0).powi(j)).collect();
        // direct summation with explicit negative powers
        let r = 1.0 - q.sqrt() / 2.0;
        let direct = |k: usize| {
            let s: f64 = (1..=k).map(|j| r.powi(-(j as i32)) * (eps[j - 1] + eps[j - 1] / q.sqrt())).sum();
            r.powi(k as i32) * (2.0 + 4.0 * s)
        };
        assert!((catalyst_rate_bound(3, q, 1.0, &eps).unwrap() - direct(3)).abs() < 1e-14);
        // eps_j decays at 5/6, slower than the 3/4 contraction, so the bound
        // first grows (peak at k = 4) and then decreases geometrically
        let seq: Vec<f64> = (0..=40).map(|k| catalyst_rate_bound(k, q, 1.0, &eps).unwrap()).collect();
        let peak = seq.iter().enumerate().fold(0, |b, (i, v)| if *v > seq[b] { i } else { b });
        assert_eq!(peak, 4);
        assert!(seq[..=peak].windows(2).all(|w| w[1] > w[0]));
        assert!(seq[peak..].windows(2).all(|w| w[1] < w[0]));
        assert!(seq[40] < 0.05);
        assert!(catalyst_rate_bound(3, q, 1.0, &eps[..2]).is_err());
    }

    #[test]
    fn accelerated_log_term_is_a_tenth() {
        let k = noiseless(100.0, 1.0);
        let cat = catalyst_complexity_terms(&k, 1, 1.0, 1e-8).unwrap();
        assert_eq!(cat.total, cat.log);
        assert!((cat.log - 10.0 * (1e8f64).ln()).abs() < 1e-9);
        let plain = dsgd_bound_terms(&k, 1, 1.0, 0.01, 1e-8).unwrap();
        assert!((cat.log / plain.log - 0.1).abs() < 1e-12);
        assert!(catalyst_total_complexity(&k, 1, 1.0, -1.0).is_err());
    }

    #[test]
    fn params_for_constants() {
        let p = CatalystParams::for_constants(100.0, 1.0).unwrap();
        assert_eq!(p.kappa, 99.0);
        assert!((p.q - 0.01).abs() < 1e-15);
        assert_eq!(p.alpha0, p.q.sqrt());
        assert!((p.rho - 0.1 / 3.0).abs() < 1e-15);
        assert!(CatalystParams::new(0.0, 1.0, DEFAULT_EPS_CONSTANT).is_err());
    }
}
