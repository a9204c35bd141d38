//! Decentralized SGD: every node takes a local stochastic gradient step and
//! then gossips with its neighbours through the round's mixing matrix.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq};
use crate::network::{MixingMatrix, MixingSchedule};
use crate::problems::{Problem, ProblemConstants};
use crate::seed;

/// Iterates of all nodes, row-major `n x d` (row `i` is `x_i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStates {
    n: usize,
    d: usize,
    data: Vec<f64>,
    round: u64,
}

impl NodeStates {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("n", "need n >= 1 and d >= 1"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(format!("{} entries for {n} x {d} states", data.len())));
        }
        Ok(NodeStates { n, d, data, round: 0 })
    }

    /// Every node starts at `x0`.
    pub fn consensual(n: usize, x0: &[f64]) -> Result<Self> {
        Self::new(n, x0.len(), x0.repeat(n))
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        Self::new(n, d, vec![0.0; n * d])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `xbar = (1/n) sum_i x_i`
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        self.mean_into(&mut m);
        m
    }

    pub(crate) fn mean_into(&self, out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            axpy(1.0, self.row(i), out);
        }
        let inv = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    /// `||X - Xbar||_F^2`
    pub fn consensus_error(&self) -> f64 {
        let m = self.mean();
        (0..self.n).map(|i| dist_sq(self.row(i), &m)).sum()
    }

    fn consensus_error_with(&self, mean: &[f64]) -> f64 {
        (0..self.n).map(|i| dist_sq(self.row(i), mean)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `eta = ln(max{2, a^2 r0 T^2 / c}) / (a T)` is below the cap.
    LogRegime,
    /// `eta = 1/d`.
    CappedRegime,
}

/// How the log argument `a^2 r0 T^2 / c` is read when `c = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroNoiseLog {
    /// `c -> 0+`: the argument diverges and the cap `1/d` binds.
    #[default]
    Limit,
    /// The `max{2, .}` floor: argument 2, `eta = min{1/d, ln 2 / (a T)}`.
    Floor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConstants {
    pub a: f64,
    /// Carried for completeness; it enters no formula.
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub big_b: f64,
    pub big_a: f64,
    pub r0: f64,
    pub tau: usize,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizePlan {
    pub eta: f64,
    pub regime: Regime,
    /// Horizon `T` the step was planned for.
    pub horizon: u64,
    pub constants: StepConstants,
}

impl StepSizePlan {
    /// Right-hand side of the weighted-average descent lemma after `t` rounds:
    /// `r0/eta exp(-a eta (t+1)) + c eta + 64 B A (tau/p) eta^2`.
    pub fn lemma_bound(&self, t: u64) -> f64 {
        let k = &self.constants;
        let eta = self.eta;
        let transient = if k.r0 == 0.0 {
            0.0
        } else {
            k.r0 / eta * (-k.a * eta * (t as f64 + 1.0)).exp()
        };
        transient + k.c * eta + 64.0 * k.big_b * k.big_a * k.tau as f64 / k.p * eta * eta
    }

    /// Accuracy guaranteed for the weighted gap
    /// `sum_t (w_t/W) (f(xbar^t) - f*) + mu ||xbar^T - x*||^2` after `t` rounds.
    pub fn accuracy(&self, t: u64) -> f64 {
        2.0 * self.lemma_bound(t)
    }

    /// Same constants, different step (diagnostic sweeps).
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    /// `r = 1 - mu eta / 2`; `w_t = r^-(t+1)`.
    pub fn weight_ratio(&self) -> f64 {
        1.0 - self.constants.a * self.eta
    }

    pub fn weight(&self, t: u64) -> f64 {
        (-(t as f64 + 1.0) * (-self.constants.a * self.eta).ln_1p()).exp()
    }
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

fn step_constants(k: &ProblemConstants, tau: usize, pc: f64, r0: f64) -> Result<StepConstants> {
    check_rate(tau, pc)?;
    if !(k.mu > 0.0) {
        return Err(Error::Unsupported(format!("step-size rule needs mu > 0, got {}", k.mu)));
    }
    if !(r0 >= 0.0) {
        return Err(Error::invalid("r0", format!("must be >= 0, got {r0}")));
    }
    let tf = tau as f64;
    Ok(StepConstants {
        a: k.mu / 2.0,
        b: 1.0,
        c: k.sigma_bar_sq / k.n as f64,
        d: 96.0 * 3f64.sqrt() * tf * k.l / pc,
        big_b: 3.0 * k.l,
        big_a: k.sigma_bar_sq + 18.0 * tf / pc * k.zeta_bar_sq,
        r0,
        tau,
        p: pc,
    })
}

/// Constant step size for a horizon of `t` rounds:
/// `eta = min{1/d, ln(max{2, a^2 r0 T^2 / c}) / (a T)}`.
pub fn stepsize_theorem1(k: &ProblemConstants, tau: usize, pc: f64, r0: f64, t: u64) -> Result<StepSizePlan> {
    stepsize_theorem1_with(k, tau, pc, r0, t, ZeroNoiseLog::Limit)
}

pub fn stepsize_theorem1_with(
    k: &ProblemConstants,
    tau: usize,
    pc: f64,
    r0: f64,
    t: u64,
    zero_noise: ZeroNoiseLog,
) -> Result<StepSizePlan> {
    if t == 0 {
        return Err(Error::invalid("T", "horizon must be >= 1"));
    }
    let constants = step_constants(k, tau, pc, r0)?;
    let StepConstants { a, c, d, .. } = constants;
    let tf = t as f64;
    let log_arg = if c > 0.0 {
        (a * a * r0 * tf * tf / c).max(2.0)
    } else {
        match zero_noise {
            ZeroNoiseLog::Limit => f64::INFINITY,
            ZeroNoiseLog::Floor => 2.0,
        }
    };
    let log_step = log_arg.ln() / (a * tf);
    let cap = 1.0 / d;
    let (eta, regime) = if log_step < cap {
        (log_step, Regime::LogRegime)
    } else {
        (cap, Regime::CappedRegime)
    };
    Ok(StepSizePlan {
        eta,
        regime,
        horizon: t,
        constants,
    })
}

/// Shortest horizon whose planned step guarantees `accuracy(T) <= eps`.
pub fn plan_for_accuracy(
    k: &ProblemConstants,
    tau: usize,
    pc: f64,
    r0: f64,
    eps: f64,
    max_rounds: u64,
) -> Result<StepSizePlan> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    let ok = |t: u64| -> Result<bool> { Ok(stepsize_theorem1(k, tau, pc, r0, t)?.accuracy(t) <= eps) };
    let mut hi = 1u64;
    while !ok(hi)? {
        if hi >= max_rounds {
            return Err(Error::NoConvergence(format!(
                "no horizon up to {max_rounds} rounds guarantees accuracy {eps:e}"
            )));
        }
        hi = (hi * 2).min(max_rounds);
    }
    let mut lo = hi / 2;
    // invariant: ok(hi), and lo == 0 or !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    stepsize_theorem1(k, tau, pc, r0, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `sigma^2 / (mu n eps)`
    pub variance: f64,
    /// `sqrt(L) (zeta tau + sigma sqrt(p tau)) / (mu p sqrt(eps))`
    pub heterogeneity: f64,
    /// Linear-convergence term.
    pub log: f64,
    pub total: f64,
}

/// Unit-constant three-term round count for plain DSGD; the log term is
/// `(L tau / (mu p)) ln(r0 tau L / (eps p))`, clamped at zero.
pub fn dsgd_complexity_bound(k: &ProblemConstants, tau: usize, pc: f64, r0: f64, eps: f64) -> Result<f64> {
    Ok(dsgd_bound_terms(k, tau, pc, r0, eps)?.total)
}

pub fn dsgd_bound_terms(k: &ProblemConstants, tau: usize, pc: f64, r0: f64, eps: f64) -> Result<BoundTerms> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    check_rate(tau, pc)?;
    if !(k.mu > 0.0) {
        return Err(Error::Unsupported(format!("bound needs mu > 0, got {}", k.mu)));
    }
    let tf = tau as f64;
    let sigma = k.sigma_bar_sq.sqrt();
    let zeta = k.zeta_bar_sq.sqrt();
    let variance = k.sigma_bar_sq / (k.mu * k.n as f64 * eps);
    let heterogeneity = k.l.sqrt() * (zeta * tf + sigma * (pc * tf).sqrt()) / (k.mu * pc * eps.sqrt());
    let log = k.l * tf / (k.mu * pc) * (r0 * tf * k.l / (eps * pc)).ln().max(0.0);
    Ok(BoundTerms {
        variance,
        heterogeneity,
        log,
        total: variance + heterogeneity + log,
    })
}

/// One synchronous round: `x_i <- sum_j w_ij (x_j - eta g_j)` with exactly
/// one stochastic gradient drawn from each node's own stream.
pub fn dsgd_step(
    x: &NodeStates,
    p: &Problem,
    w: &MixingMatrix,
    eta: f64,
    rngs: &mut [ChaCha8Rng],
) -> Result<NodeStates> {
    check_shapes(x, p, w.n(), rngs.len())?;
    let mut next = x.clone();
    let mut work = Workspace::new(x.n, x.d);
    work.step(&mut next, p, w, eta, rngs);
    Ok(next)
}

fn check_shapes(x: &NodeStates, p: &Problem, w_n: usize, streams: usize) -> Result<()> {
    if x.n != p.n() || x.d != p.d() || w_n != x.n || streams != x.n {
        return Err(Error::DimensionMismatch(format!(
            "states {}x{}, problem {}x{}, mixing {w_n}, {streams} streams",
            x.n,
            x.d,
            p.n(),
            p.d()
        )));
    }
    Ok(())
}

struct Workspace {
    half: Vec<f64>,
    grad: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, d: usize) -> Self {
        Workspace {
            half: vec![0.0; n * d],
            grad: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }

    fn step(&mut self, x: &mut NodeStates, p: &Problem, w: &MixingMatrix, eta: f64, rngs: &mut [ChaCha8Rng]) {
        let d = x.d;
        for (i, rng) in rngs.iter_mut().enumerate() {
            let row = &x.data[i * d..(i + 1) * d];
            p.local(i).stoch_grad_into(row, rng, &mut self.grad, &mut self.scratch);
            let half = &mut self.half[i * d..(i + 1) * d];
            for ((h, xi), g) in half.iter_mut().zip(row).zip(&self.grad) {
                *h = xi - eta * g;
            }
        }
        if w.is_identity() {
            std::mem::swap(&mut x.data, &mut self.half);
        } else {
            w.mix_rows(&self.half, d, &mut x.data);
        }
        x.round += 1;
    }
}

/// Stateful DSGD driver. Node noise streams and the schedule's round counter
/// persist across calls, so consecutive inner runs form one trajectory.
pub struct Simulation<'s> {
    schedule: &'s MixingSchedule,
    seed: u64,
    rngs: Vec<ChaCha8Rng>,
    x: NodeStates,
    work: Workspace,
}

impl<'s> Simulation<'s> {
    pub fn new(schedule: &'s MixingSchedule, x0: NodeStates, seed: u64) -> Result<Self> {
        if schedule.n() != x0.n {
            return Err(Error::DimensionMismatch(format!(
                "schedule has {} nodes, states have {}",
                schedule.n(),
                x0.n
            )));
        }
        let rngs = seed::node_streams(seed, x0.n);
        let work = Workspace::new(x0.n, x0.d);
        Ok(Simulation {
            schedule,
            seed,
            rngs,
            x: x0,
            work,
        })
    }

    pub fn states(&self) -> &NodeStates {
        &self.x
    }

    pub fn step(&mut self, p: &Problem, eta: f64) -> Result<()> {
        check_shapes(&self.x, p, self.schedule.n(), self.rngs.len())?;
        let w = self.schedule.matrix(self.x.round, self.seed);
        self.work.step(&mut self.x, p, &w, eta, &mut self.rngs);
        Ok(())
    }
}

/// Scratch for per-round metrics.
pub(crate) struct Meter {
    pub mean: Vec<f64>,
    diff: Vec<f64>,
    scratch: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Metrics {
    pub gap: f64,
    pub dist_sq: f64,
    pub consensus_err: f64,
}

impl Meter {
    pub fn new(d: usize) -> Self {
        Meter {
            mean: vec![0.0; d],
            diff: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }

    pub fn measure(&mut self, p: &Problem, x: &NodeStates) -> Metrics {
        x.mean_into(&mut self.mean);
        Metrics {
            gap: p.suboptimality_with(&self.mean, &mut self.diff, &mut self.scratch),
            dist_sq: dist_sq(&self.mean, p.x_star()),
            consensus_err: x.consensus_error_with(&self.mean),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: u64,
    /// `f(xbar^t) - f*`
    pub gap: f64,
    /// `||xbar^t - x*||^2`
    pub dist_sq: f64,
    /// `||X^t - Xbar^t||_F^2`
    pub consensus_err: f64,
    /// `(1 - mu eta / 2)^-(t+1)` relative to the run's own step.
    pub w_t: f64,
}

pub const RUN_CSV_HEADER: &str = "t,gap,dist_sq,consensus_err,w_t";

/// First round at which `mu ||xbar^t - x*||^2 <= target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetHit {
    pub target: f64,
    pub round: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// Rounds actually executed.
    pub rounds: u64,
    pub mu: f64,
    pub plan: StepSizePlan,
    /// `sum_{t<T} (w_t/W) (f(xbar^t) - f*) + mu ||xbar^T - x*||^2`.
    pub weighted_gap: f64,
    pub final_mean: Vec<f64>,
    pub hits: Vec<TargetHit>,
    pub seed: u64,
    pub config_hash: Option<String>,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    pub fn hit(&self, target: f64) -> Option<u64> {
        self.hits.iter().find(|h| h.target == target).and_then(|h| h.round)
    }

    pub fn last(&self) -> &RunRow {
        self.rows.last().expect("a run records at least its initial row")
    }
}

pub(crate) fn rows_to_csv(rows: &[RunRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(RUN_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", r.t, r.gap, r.dist_sq, r.consensus_err, r.w_t);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Keep every `record_every`-th row (plus the first, the last and every
    /// first-hit row). `1` keeps the full series.
    pub record_every: u64,
    /// Accuracy levels on `mu ||xbar - x*||^2` whose first-hit rounds are tracked.
    pub targets: Vec<f64>,
    /// Stop as soon as every target has been reached.
    pub stop_on_targets: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_every: 1,
            targets: Vec::new(),
            stop_on_targets: false,
        }
    }
}

/// `rounds` rounds of DSGD from `x0` with `W^t` drawn from `s`.
pub fn dsgd_run(
    p: &Problem,
    s: &MixingSchedule,
    rounds: u64,
    plan: &StepSizePlan,
    x0: &NodeStates,
    seed: u64,
) -> Result<RunRecord> {
    dsgd_run_with(p, s, rounds, plan, x0, seed, &RunOptions::default())
}

pub fn dsgd_run_with(
    p: &Problem,
    s: &MixingSchedule,
    rounds: u64,
    plan: &StepSizePlan,
    x0: &NodeStates,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord> {
    if rounds == 0 {
        return Err(Error::invalid("T", "need at least one round"));
    }
    if opts.record_every == 0 {
        return Err(Error::invalid("record_every", "must be >= 1"));
    }
    check_shapes(x0, p, s.n(), x0.n)?;
    let mut sim = Simulation::new(s, x0.clone(), seed)?;
    let mut meter = Meter::new(p.d());
    let mu = p.mu();
    let r = plan.weight_ratio();
    let mut hits: Vec<TargetHit> = opts.targets.iter().map(|&target| TargetHit { target, round: None }).collect();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    let mut t = 0u64;
    loop {
        let m = meter.measure(p, sim.states());
        let mut keep = t % opts.record_every == 0;
        for h in hits.iter_mut() {
            if h.round.is_none() && mu * m.dist_sq <= h.target {
                h.round = Some(t);
                keep = true;
            }
        }
        let done = t == rounds || (opts.stop_on_targets && !hits.is_empty() && hits.iter().all(|h| h.round.is_some()));
        if keep || done {
            rows.push(RunRow {
                t,
                gap: m.gap,
                dist_sq: m.dist_sq,
                consensus_err: m.consensus_err,
                w_t: plan.weight(t),
            });
        }
        if done {
            let weighted_gap = if den > 0.0 { num / den } else { 0.0 } + mu * m.dist_sq;
            return Ok(RunRecord {
                rows,
                rounds: t,
                mu,
                plan: *plan,
                weighted_gap,
                final_mean: meter.mean.clone(),
                hits,
                seed,
                config_hash: None,
            });
        }
        num = num * r + m.gap;
        den = den * r + 1.0;
        sim.step(p, plan.eta)?;
        t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_graph, MixingSchedule, Topology};
    use crate::problems::{BaseObjective, LocalObjective, NoiseModel};

    fn scalar_problem(bs: &[f64]) -> Problem {
        let locals = bs
            .iter()
            .map(|&b| LocalObjective::new(BaseObjective::Quadratic { a: vec![1.0], b: vec![b] }, NoiseModel::None))
            .collect();
        Problem::new(locals, 1.0, 1.0).unwrap()
    }

    fn consts(l: f64, mu: f64, zeta: f64, sigma: f64) -> ProblemConstants {
        ProblemConstants {
            n: 1,
            l,
            mu,
            zeta_bar_sq: zeta,
            sigma_bar_sq: sigma,
        }
    }

    #[test]
    fn one_round_hand_trace() {
        // both nodes sit at their own minimizers: zero gradients, then averaging
        let p = scalar_problem(&[0.0, 2.0]);
        let x = NodeStates::new(2, 1, vec![0.0, 2.0]).unwrap();
        let w = MixingMatrix::averaging(2);
        let mut rngs = seed::node_streams(0, 2);
        let next = dsgd_step(&x, &p, &w, 0.5, &mut rngs).unwrap();
        assert_eq!(next.as_slice(), &[1.0, 1.0]);
        assert_eq!(next.round(), 1);
    }

    #[test]
    fn identity_mixing_is_local_gradient_descent() {
        let p = scalar_problem(&[1.0, -3.0]);
        let x = NodeStates::new(2, 1, vec![5.0, 5.0]).unwrap();
        let mut rngs = seed::node_streams(0, 2);
        let next = dsgd_step(&x, &p, &MixingMatrix::identity(2), 0.25, &mut rngs).unwrap();
        assert_eq!(next.as_slice(), &[5.0 - 0.25 * 4.0, 5.0 - 0.25 * 8.0]);
    }

    #[test]
    fn zero_step_is_pure_gossip() {
        let p = scalar_problem(&[1.0, -3.0, 0.5]);
        let g = build_graph(Topology::Ring, 3, 0).unwrap();
        let w = crate::network::metropolis_weights(&g).unwrap();
        let x = NodeStates::new(3, 1, vec![3.0, 0.0, -1.0]).unwrap();
        let next = dsgd_step(&x, &p, &w, 0.0, &mut seed::node_streams(0, 3)).unwrap();
        let dense = w.as_dense();
        for i in 0..3 {
            let expect: f64 = (0..3).map(|j| dense[(i, j)] * x.row(j)[0]).sum();
            assert!((next.row(i)[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = scalar_problem(&[1.0, 2.0]);
        let x = NodeStates::zeros(3, 1).unwrap();
        let r = dsgd_step(&x, &p, &MixingMatrix::identity(3), 0.1, &mut seed::node_streams(0, 3));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn capped_step_for_unit_smoothness() {
        let plan = stepsize_theorem1(&consts(1.0, 1.0, 0.0, 0.0), 1, 1.0, 1.0, 1000).unwrap();
        assert!((plan.constants.d - 166.27687752661222).abs() < 1e-9);
        assert!((plan.eta - 6.0140653e-3).abs() < 1e-9);
        assert_eq!(plan.regime, Regime::CappedRegime);
    }

    #[test]
    fn floor_convention_without_noise() {
        let k = consts(1.0, 1.0, 0.0, 0.0);
        let t = 100_000;
        let plan = stepsize_theorem1_with(&k, 1, 1.0, 1.0, t, ZeroNoiseLog::Floor).unwrap();
        let expect = (1.0 / plan.constants.d).min(2f64.ln() / (0.5 * t as f64));
        assert_eq!(plan.eta, expect);
        assert_eq!(plan.regime, Regime::LogRegime);
    }

    #[test]
    fn doubling_tau_halves_the_cap() {
        let k = consts(4.0, 1.0, 0.0, 0.0);
        let one = stepsize_theorem1(&k, 1, 0.5, 1.0, 10).unwrap();
        let two = stepsize_theorem1(&k, 2, 0.5, 1.0, 10).unwrap();
        assert!((one.eta / two.eta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_regime_with_noise() {
        let k = consts(1.0, 1.0, 0.0, 1.0);
        let t = 1_000_000u64;
        let plan = stepsize_theorem1(&k, 1, 1.0, 1.0, t).unwrap();
        let a = 0.5;
        let expect = (a * a * 1.0 * (t as f64).powi(2) / 1.0).ln() / (a * t as f64);
        assert!((plan.eta - expect).abs() < 1e-18);
        assert_eq!(plan.regime, Regime::LogRegime);
    }

    #[test]
    fn step_rule_rejects_bad_inputs() {
        assert!(matches!(
            stepsize_theorem1(&consts(1.0, 0.0, 0.0, 0.0), 1, 1.0, 1.0, 10),
            Err(Error::Unsupported(_))
        ));
        assert!(stepsize_theorem1(&consts(1.0, 1.0, 0.0, 0.0), 1, 0.0, 1.0, 10).is_err());
        assert!(stepsize_theorem1(&consts(1.0, 1.0, 0.0, 0.0), 1, 1.0, -1.0, 10).is_err());
        assert!(stepsize_theorem1(&consts(1.0, 1.0, 0.0, 0.0), 1, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn plan_for_accuracy_finds_the_shortest_horizon() {
        let k = ProblemConstants {
            n: 4,
            l: 10.0,
            mu: 1.0,
            zeta_bar_sq: 0.0,
            sigma_bar_sq: 0.05,
        };
        let plan = plan_for_accuracy(&k, 1, 1.0, 1.0, 1e-2, 1 << 40).unwrap();
        let t = plan.horizon;
        assert!(plan.accuracy(t) <= 1e-2);
        let prev = stepsize_theorem1(&k, 1, 1.0, 1.0, t - 1).unwrap();
        assert!(prev.accuracy(t - 1) > 1e-2);
    }

    #[test]
    fn bound_without_noise_is_the_log_term() {
        let k = consts(100.0, 1.0, 0.0, 0.0);
        let b = dsgd_bound_terms(&k, 1, 1.0, 0.01, 1e-8).unwrap();
        assert_eq!(b.variance, 0.0);
        assert_eq!(b.heterogeneity, 0.0);
        assert_eq!(b.total, b.log);
        let lo = dsgd_complexity_bound(&k, 1, 1.0, 0.01, 1e-4).unwrap();
        assert!((b.total / lo - 2.0).abs() < 1e-12);
        assert!(dsgd_complexity_bound(&k, 1, 1.0, 0.01, 0.0).is_err());
    }

    #[test]
    fn bound_term_homogeneity() {
        let k = ProblemConstants {
            n: 5,
            l: 9.0,
            mu: 0.5,
            zeta_bar_sq: 2.0,
            sigma_bar_sq: 3.0,
        };
        let a = dsgd_bound_terms(&k, 2, 0.4, 1.0, 1e-3).unwrap();
        let b = dsgd_bound_terms(&k, 2, 0.4, 1.0, 5e-4).unwrap();
        assert!((b.variance / a.variance - 2.0).abs() < 1e-12);
        assert!((b.heterogeneity / a.heterogeneity - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn weighted_gap_matches_stored_series() {
        let p = scalar_problem(&[1.0, -1.0, 0.5, 2.0]);
        let s = MixingSchedule::fixed(build_graph(Topology::Ring, 4, 0).unwrap()).unwrap();
        let k = p.constants();
        let plan = stepsize_theorem1(&k, 1, s.declared_p(), 1.0, 50).unwrap().with_eta(0.3);
        let x0 = NodeStates::new(4, 1, vec![3.0, -2.0, 0.0, 1.0]).unwrap();
        let rec = dsgd_run(&p, &s, 50, &plan, &x0, 1).unwrap();
        assert_eq!(rec.rows.len(), 51);
        let (num, den) = rec.rows[..50]
            .iter()
            .fold((0.0, 0.0), |(n, d), r| (n + r.w_t * r.gap, d + r.w_t));
        let direct = num / den + p.mu() * rec.last().dist_sq;
        assert!((rec.weighted_gap - direct).abs() <= 1e-9 * direct.abs());
        let r = 1.0 - p.mu() / 2.0 * 0.3;
        assert!((rec.rows[7].w_t - r.powi(-8)).abs() < 1e-12 * r.powi(-8));
    }

    #[test]
    fn runs_are_reproducible() {
        let p = scalar_problem(&[1.0, -1.0, 0.5]);
        let locals = p
            .locals()
            .iter()
            .map(|f| LocalObjective::new(f.base().clone(), NoiseModel::AdditiveGaussian { sigma: 0.3 }))
            .collect();
        let p = Problem::new(locals, 1.0, 1.0).unwrap();
        let s = MixingSchedule::edge_sampled(build_graph(Topology::Complete, 3, 0).unwrap(), 0.5, 200, 3).unwrap();
        let plan = stepsize_theorem1(&p.constants(), 1, s.declared_p(), 1.0, 100).unwrap();
        let x0 = NodeStates::zeros(3, 1).unwrap();
        let a = dsgd_run(&p, &s, 100, &plan, &x0, 42).unwrap();
        let b = dsgd_run(&p, &s, 100, &plan, &x0, 42).unwrap();
        let c = dsgd_run(&p, &s, 100, &plan, &x0, 43).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn stop_on_targets_and_sparse_recording() {
        let p = scalar_problem(&[1.0, 1.0]);
        let s = MixingSchedule::fixed(build_graph(Topology::Complete, 2, 0).unwrap()).unwrap();
        let plan = stepsize_theorem1(&p.constants(), 1, 1.0, 1.0, 10).unwrap().with_eta(0.5);
        let x0 = NodeStates::zeros(2, 1).unwrap();
        let opts = RunOptions {
            record_every: 1000,
            targets: vec![1e-2, 1e-6],
            stop_on_targets: true,
        };
        let rec = dsgd_run_with(&p, &s, 10_000, &plan, &x0, 0, &opts).unwrap();
        // gap halves in distance each round: ||x - 1||^2 = 4^-t
        assert_eq!(rec.hit(1e-2), Some(4));
        assert_eq!(rec.hit(1e-6), Some(10));
        assert_eq!(rec.rounds, 10);
        let ts: Vec<u64> = rec.rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 4, 10]);
    }
}
