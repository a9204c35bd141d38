use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    beta, eps_schedule, inner_budget, outer_iterations, sigma_y, solve_alpha, surrogate, warm_start_gap_bound,
    CatalystParams, DEFAULT_EPS_CONSTANT,
};
use crate::dsgd::{rows_to_csv, stepsize_theorem1, Meter, NodeStates, RunRow, Simulation, TargetHit};
use crate::error::{Error, Result};
use crate::network::MixingSchedule;
use crate::problems::Problem;

/// `96 sqrt(3)`: ratio between the unit step `p / (tau L_h)` implicit in the
/// unit-constant inner budget and the capped step `1/d` the inner runs use.
pub const STEP_MATCHED_SCALE: f64 = 166.276_877_526_612_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalystOptions {
    /// Proximal weight; `L - mu` when unset.
    pub kappa: Option<f64>,
    pub eps_schedule_constant: f64,
    /// Overrides the computed number of outer steps `K`.
    pub outer_iterations: Option<usize>,
    /// Outer steps actually allowed, as a multiple of `K` (the accuracy
    /// schedule simply continues past `K`).
    pub outer_factor: f64,
    /// Overrides every inner budget `T_k`.
    pub inner_rounds: Option<u64>,
    /// Multiplier applied to the unit-constant inner budget.
    pub inner_budget_scale: f64,
    /// Overrides `f(xbar^0) - f*` in the schedules.
    pub initial_gap: Option<f64>,
    pub record_every: u64,
    /// Accuracy levels on `mu ||xbar - x*||^2` whose first-hit rounds are tracked.
    pub targets: Vec<f64>,
    pub stop_on_targets: bool,
    /// Hard cap on the total number of rounds.
    pub max_rounds: Option<u64>,
}

impl Default for CatalystOptions {
    fn default() -> Self {
        CatalystOptions {
            kappa: None,
            eps_schedule_constant: DEFAULT_EPS_CONSTANT,
            outer_iterations: None,
            outer_factor: 1.0,
            inner_rounds: None,
            inner_budget_scale: STEP_MATCHED_SCALE,
            initial_gap: None,
            record_every: 1,
            targets: Vec::new(),
            stop_on_targets: false,
            max_rounds: None,
        }
    }
}

/// Outer-loop state after step `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalystState {
    pub k: usize,
    pub x: NodeStates,
    pub y: NodeStates,
    pub alpha: f64,
    pub eps: f64,
    pub t_k: u64,
    pub sigma_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub k: usize,
    pub eps_k: f64,
    pub t_k: u64,
    pub alpha_k: f64,
    pub beta_k: f64,
    /// `f(xbar_k) - f*`
    pub gap: f64,
    /// `||xbar_k - x*||^2`
    pub dist_sq: f64,
    /// `h_k(xbar_k) - h_k*`, diagnostics only.
    pub realized_inner_gap: f64,
}

pub const OUTER_CSV_HEADER: &str = "k,eps_k,T_k,alpha_k,beta_k,gap,dist_sq,realized_inner_gap";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalystRecord {
    pub params: CatalystParams,
    pub initial_gap: f64,
    /// `K` from the schedule (or the override).
    pub planned_outer: usize,
    pub outer: Vec<OuterRow>,
    /// Concatenated inner series; `t` counts rounds from the start.
    pub rows: Vec<RunRow>,
    pub rounds: u64,
    pub hits: Vec<TargetHit>,
    /// Outer step during which each target was first reached (0: at the start).
    pub hit_outer: Vec<Option<usize>>,
    pub state: CatalystState,
    pub seed: u64,
    pub config_hash: Option<String>,
}

impl CatalystRecord {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    pub fn outer_csv(&self) -> String {
        let mut s = String::from(OUTER_CSV_HEADER);
        s.push('\n');
        for r in &self.outer {
            let _ = writeln!(
                s,
                "{},{:?},{},{:?},{:?},{:?},{:?},{:?}",
                r.k, r.eps_k, r.t_k, r.alpha_k, r.beta_k, r.gap, r.dist_sq, r.realized_inner_gap
            );
        }
        s
    }

    pub fn hit(&self, target: f64) -> Option<u64> {
        self.hits.iter().find(|h| h.target == target).and_then(|h| h.round)
    }

    pub fn hit_outer(&self, target: f64) -> Option<usize> {
        let i = self.hits.iter().position(|h| h.target == target)?;
        self.hit_outer[i]
    }
}

struct Tracker<'a> {
    opts: &'a CatalystOptions,
    mu: f64,
    hits: Vec<TargetHit>,
    hit_outer: Vec<Option<usize>>,
    rows: Vec<RunRow>,
}

impl Tracker<'_> {
    /// Records round `t` and reports whether the run should stop.
    fn observe(&mut self, t: u64, k: usize, row: RunRow) -> bool {
        let mut keep = t % self.opts.record_every == 0;
        for (h, o) in self.hits.iter_mut().zip(self.hit_outer.iter_mut()) {
            if h.round.is_none() && self.mu * row.dist_sq <= h.target {
                h.round = Some(t);
                *o = Some(k);
                keep = true;
            }
        }
        let stop = (self.opts.stop_on_targets && !self.hits.is_empty() && self.hits.iter().all(|h| h.round.is_some()))
            || self.opts.max_rounds.is_some_and(|m| t >= m);
        if keep || stop {
            self.rows.push(row);
        }
        stop
    }

    fn close(&mut self, t: u64, row: RunRow) {
        if self.rows.last().map(|r| r.t) != Some(t) {
            self.rows.push(row);
        }
    }
}

/// Catalyst-accelerated DSGD targeting `mu ||xbar - x*||^2 <= eps`.
///
/// Outer step `k` runs `T_k` DSGD rounds on the per-node-anchored surrogate,
/// warm-started from `X_{k-1}`, then extrapolates the anchors
/// `Y_k = X_k + beta_k (X_k - X_{k-1})`. Ground truth is used only for
/// metrics and, unless overridden, for the initial gap fed to the schedules.
pub fn catalyst_dsgd_run(
    p: &Problem,
    s: &MixingSchedule,
    x0: &NodeStates,
    eps: f64,
    seed: u64,
    opts: &CatalystOptions,
) -> Result<CatalystRecord> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    if opts.record_every == 0 {
        return Err(Error::invalid("record_every", "must be >= 1"));
    }
    if !(opts.outer_factor >= 1.0) {
        return Err(Error::invalid("outer_factor", format!("must be >= 1, got {}", opts.outer_factor)));
    }
    if !(opts.inner_budget_scale > 0.0) {
        return Err(Error::invalid(
            "inner_budget_scale",
            format!("must be positive, got {}", opts.inner_budget_scale),
        ));
    }
    if x0.n() != p.n() || x0.d() != p.d() || s.n() != p.n() {
        return Err(Error::DimensionMismatch("initial states, schedule and problem disagree".into()));
    }
    let mu = p.mu();
    let kappa = opts.kappa.unwrap_or(p.l() - mu);
    let params = CatalystParams::new(mu, kappa, opts.eps_schedule_constant)?;
    let q = params.q;
    let initial_gap = opts.initial_gap.unwrap_or_else(|| p.suboptimality(&x0.mean()));
    let planned_outer = match opts.outer_iterations {
        Some(k) => k,
        None => outer_iterations(q, initial_gap, eps)?,
    };
    let k_max = (planned_outer as f64 * opts.outer_factor).ceil() as usize;
    let tau = s.declared_tau();
    let pc = s.declared_p();
    let base = p.constants();

    let mut sim = Simulation::new(s, x0.clone(), seed)?;
    let mut meter = Meter::new(p.d());
    let mut tracker = Tracker {
        opts,
        mu,
        hits: opts.targets.iter().map(|&target| TargetHit { target, round: None }).collect(),
        hit_outer: vec![None; opts.targets.len()],
        rows: Vec::new(),
    };
    let row_at = |t: u64, m: crate::dsgd::Metrics, w_t: f64| RunRow {
        t,
        gap: m.gap,
        dist_sq: m.dist_sq,
        consensus_err: m.consensus_err,
        w_t,
    };

    let mut state = CatalystState {
        k: 0,
        x: x0.clone(),
        y: x0.clone(),
        alpha: params.alpha0,
        eps: initial_gap,
        t_k: 0,
        sigma_y: 0.0,
    };
    let mut outer = Vec::new();
    let mut t = 0u64;
    let m0 = meter.measure(p, sim.states());
    let mut last = row_at(0, m0, 1.0);
    let mut stopped = tracker.observe(0, 0, last);

    for k in 1..=k_max {
        if stopped {
            break;
        }
        let eps_k = eps_schedule(k, q, initial_gap, params.eps_schedule_constant)?;
        let t_k = match opts.inner_rounds {
            Some(r) => r,
            None => {
                let b = inner_budget(eps_k, &base, kappa, tau, pc)?;
                (opts.inner_budget_scale * (b.variance + b.heterogeneity + b.log)).ceil().max(1.0) as u64
            }
        };
        let h = surrogate(p, &state.y, kappa)?;
        let gap_bound = if k == 1 {
            initial_gap
        } else {
            warm_start_gap_bound(state.eps, q)
        };
        let r0 = 2.0 * gap_bound.max(0.0) / (mu + kappa);
        let plan = stepsize_theorem1(&h.constants(), tau, pc, r0, t_k.max(1))?;
        if k == 1 {
            if let Some(first) = tracker.rows.first_mut() {
                first.w_t = plan.weight(0);
            }
            last.w_t = plan.weight(0);
        }
        for local in 0..t_k {
            sim.step(&h, plan.eta)?;
            t += 1;
            let m = meter.measure(p, sim.states());
            last = row_at(t, m, plan.weight(local + 1));
            if tracker.observe(t, k, last) {
                stopped = true;
                break;
            }
        }
        if stopped {
            break;
        }
        let x_k = sim.states().clone();
        let alpha_k = solve_alpha(state.alpha, q)?;
        let beta_k = beta(state.alpha, alpha_k)?;
        let mut y = x_k.clone();
        for ((yv, xv), pv) in y.as_mut_slice().iter_mut().zip(x_k.as_slice()).zip(state.x.as_slice()) {
            *yv = xv + beta_k * (xv - pv);
        }
        let xbar = x_k.mean();
        outer.push(OuterRow {
            k,
            eps_k,
            t_k,
            alpha_k,
            beta_k,
            gap: p.suboptimality(&xbar),
            dist_sq: p.dist_sq_to_opt(&xbar),
            realized_inner_gap: h.suboptimality(&xbar),
        });
        state = CatalystState {
            k,
            sigma_y: sigma_y(&y),
            x: x_k,
            y,
            alpha: alpha_k,
            eps: eps_k,
            t_k,
        };
    }
    tracker.close(t, last);
    Ok(CatalystRecord {
        params,
        initial_gap,
        planned_outer,
        outer,
        rows: tracker.rows,
        rounds: t,
        hits: tracker.hits,
        hit_outer: tracker.hit_outer,
        state,
        seed,
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsgd::dsgd_run;
    use crate::network::{build_graph, Topology};
    use crate::problems::{make_quadratic_problem, NoiseModel, QuadraticSpec};

    fn setup(cond: f64, noise: NoiseModel) -> (Problem, MixingSchedule, NodeStates) {
        let p = make_quadratic_problem(
            &QuadraticSpec {
                n: 4,
                d: 3,
                mu: 1.0,
                condition_number: cond,
                heterogeneity: 0.5,
                noise,
            },
            7,
        )
        .unwrap();
        let s = MixingSchedule::fixed(build_graph(Topology::Ring, 4, 0).unwrap()).unwrap();
        let x0 = NodeStates::zeros(4, 3).unwrap();
        (p, s, x0)
    }

    #[test]
    fn zero_kappa_single_step_is_plain_dsgd() {
        let (p, s, x0) = setup(10.0, light_noise());
        let opts = CatalystOptions {
            kappa: Some(0.0),
            outer_iterations: Some(1),
            inner_rounds: Some(200),
            ..Default::default()
        };
        let cat = catalyst_dsgd_run(&p, &s, &x0, 1e-6, 3, &opts).unwrap();
        let r0 = 2.0 * cat.initial_gap / p.mu();
        let plan = stepsize_theorem1(&p.constants(), 1, s.declared_p(), r0, 200).unwrap();
        let plain = dsgd_run(&p, &s, 200, &plan, &x0, 3).unwrap();
        assert_eq!(cat.to_csv(), plain.to_csv());
        assert_eq!(cat.outer.len(), 1);
        assert_eq!(cat.outer[0].beta_k, 0.0);
    }

    fn light_noise() -> NoiseModel {
        NoiseModel::AdditiveGaussian { sigma: 0.05 }
    }

    #[test]
    fn alpha_stays_at_fixed_point() {
        let (p, s, x0) = setup(20.0, NoiseModel::None);
        let opts = CatalystOptions {
            outer_iterations: Some(6),
            inner_rounds: Some(50),
            ..Default::default()
        };
        let rec = catalyst_dsgd_run(&p, &s, &x0, 1e-6, 0, &opts).unwrap();
        let sq = rec.params.q.sqrt();
        for r in &rec.outer {
            assert!((r.alpha_k - sq).abs() < 1e-12);
            assert!((r.beta_k - (1.0 - sq) / (1.0 + sq)).abs() < 1e-12);
        }
        assert_eq!(rec.rounds, 300);
        assert_eq!(rec.rows.len(), 301);
    }

    #[test]
    fn accelerated_run_reaches_target_and_is_deterministic() {
        let (p, s, x0) = setup(30.0, NoiseModel::None);
        let opts = CatalystOptions {
            targets: vec![1e-6],
            stop_on_targets: true,
            outer_factor: 2.0,
            record_every: 100,
            ..Default::default()
        };
        let a = catalyst_dsgd_run(&p, &s, &x0, 1e-6, 11, &opts).unwrap();
        let b = catalyst_dsgd_run(&p, &s, &x0, 1e-6, 11, &opts).unwrap();
        assert!(a.hit(1e-6).is_some());
        assert!(a.hit_outer(1e-6).unwrap() <= 2 * a.planned_outer);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.outer_csv(), b.outer_csv());
        let gaps: Vec<f64> = a.outer.iter().map(|r| r.gap).collect();
        assert!(gaps.last().unwrap() < &gaps[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, s, x0) = setup(5.0, NoiseModel::None);
        let o = CatalystOptions::default();
        assert!(catalyst_dsgd_run(&p, &s, &x0, 0.0, 0, &o).is_err());
        let bad = CatalystOptions {
            kappa: Some(-1.0),
            ..Default::default()
        };
        assert!(catalyst_dsgd_run(&p, &s, &x0, 1e-3, 0, &bad).is_err());
        let wrong = NodeStates::zeros(3, 3).unwrap();
        assert!(catalyst_dsgd_run(&p, &s, &wrong, 1e-3, 0, &o).is_err());
    }
}
