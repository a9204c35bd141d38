use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, NetworkConfig, ProblemConfig, ProblemKind, SolverKind};
use crate::catalyst::{catalyst_dsgd_run, CatalystRecord};
use crate::dsgd::{
    dsgd_run_with, plan_for_accuracy, stepsize_theorem1_with, NodeStates, RunOptions, RunRecord, RunRow, StepSizePlan,
};
use crate::error::{Error, Result};
use crate::network::{
    build_graph, spectral_consensus_rate, verify_consensus_rate, ConsensusReport, MixingSchedule, ScheduleKind,
};
use crate::problems::{make_logistic_problem, make_quadratic_problem, LogisticSpec, Problem, QuadraticSpec};
use crate::seed::{self, SCHEDULE_TAG, VERIFY_TAG};

/// Everything one replicate runs on.
#[derive(Clone, Debug)]
pub struct Instance {
    pub problem: Problem,
    pub schedule: MixingSchedule,
    pub x0: NodeStates,
}

pub fn build_problem(cfg: &ProblemConfig, seed: u64) -> Result<Problem> {
    match cfg.kind {
        ProblemKind::Quadratic => make_quadratic_problem(
            &QuadraticSpec {
                n: cfg.n,
                d: cfg.d,
                mu: cfg.mu,
                condition_number: cfg.condition_number.unwrap_or(1.0),
                heterogeneity: cfg.heterogeneity,
                noise: cfg.noise,
            },
            seed,
        ),
        ProblemKind::Logistic => make_logistic_problem(
            &LogisticSpec {
                n: cfg.n,
                d: cfg.d,
                samples_per_node: cfg.samples_per_node.unwrap_or(1),
                l2: cfg.mu,
                heterogeneity: cfg.heterogeneity,
                noise: cfg.noise,
            },
            seed,
        ),
    }
}

pub fn build_schedule(cfg: &NetworkConfig, n: usize, seed: u64) -> Result<MixingSchedule> {
    let graph = build_graph(cfg.topology, n, seed::derive(seed, SCHEDULE_TAG))?;
    let s = match cfg.schedule {
        ScheduleKind::Static => MixingSchedule::fixed(graph)?,
        ScheduleKind::PeriodicGossip { tau } => MixingSchedule::periodic(graph, tau)?,
        ScheduleKind::IidEdgeSample { keep_prob } => {
            MixingSchedule::edge_sampled(graph, keep_prob, cfg.estimate_draws, seed::derive(seed, VERIFY_TAG))?
        }
    };
    let tau = cfg.declared_tau.unwrap_or(s.declared_tau());
    let p = cfg.declared_p.unwrap_or(s.declared_p());
    Ok(s.with_declared(tau, p))
}

/// Everything a replicate needs is derived from `seed` alone.
pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let problem = build_problem(&cfg.problem, seed)?;
    let schedule = build_schedule(&cfg.network, cfg.problem.n, seed)?;
    let x0 = NodeStates::zeros(cfg.problem.n, cfg.problem.d)?;
    Ok(Instance { problem, schedule, x0 })
}

fn initial_r0(cfg: &ExperimentConfig, inst: &Instance) -> f64 {
    cfg.solver
        .r0
        .unwrap_or_else(|| inst.problem.dist_sq_to_opt(&inst.x0.mean()))
}

/// Theory step size for DSGD: the configured horizon, otherwise the shortest
/// horizon whose guarantee meets `eps`, otherwise the round cap.
pub fn dsgd_plan(cfg: &ExperimentConfig, inst: &Instance, r0: f64, eps: f64) -> Result<StepSizePlan> {
    let k = inst.problem.constants();
    let tau = inst.schedule.declared_tau();
    let pc = inst.schedule.declared_p();
    let cap = cfg.output.max_rounds;
    let horizon = match cfg.solver.rounds {
        Some(t) => t,
        None => match plan_for_accuracy(&k, tau, pc, r0, eps, cap) {
            Ok(plan) => plan.horizon,
            Err(Error::NoConvergence(_)) => cap,
            Err(e) => return Err(e),
        },
    };
    stepsize_theorem1_with(&k, tau, pc, r0, horizon, cfg.solver.zero_noise_log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum RunOutcome {
    Dsgd(RunRecord),
    Catalyst(CatalystRecord),
}

impl RunOutcome {
    pub fn rows(&self) -> &[RunRow] {
        match self {
            RunOutcome::Dsgd(r) => &r.rows,
            RunOutcome::Catalyst(r) => &r.rows,
        }
    }

    pub fn rounds(&self) -> u64 {
        match self {
            RunOutcome::Dsgd(r) => r.rounds,
            RunOutcome::Catalyst(r) => r.rounds,
        }
    }

    pub fn hit(&self, target: f64) -> Option<u64> {
        match self {
            RunOutcome::Dsgd(r) => r.hit(target),
            RunOutcome::Catalyst(r) => r.hit(target),
        }
    }

    pub fn to_csv(&self) -> String {
        match self {
            RunOutcome::Dsgd(r) => r.to_csv(),
            RunOutcome::Catalyst(r) => r.to_csv(),
        }
    }

    pub fn final_row(&self) -> &RunRow {
        self.rows().last().expect("runs record at least one row")
    }

    pub fn set_config_hash(&mut self, hash: &str) {
        match self {
            RunOutcome::Dsgd(r) => r.config_hash = Some(hash.to_string()),
            RunOutcome::Catalyst(r) => r.config_hash = Some(hash.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRun {
    pub replicate: usize,
    pub seed: u64,
    pub target: f64,
    pub outcome: RunOutcome,
}

impl ReplicateRun {
    pub fn reached(&self) -> Option<u64> {
        self.outcome.hit(self.target)
    }
}

/// The configured solver on the instance of `seed`.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize, seed: u64) -> Result<ReplicateRun> {
    let inst = build_instance(cfg, seed)?;
    let eps = cfg.solver.eps;
    let cap = cfg.output.max_rounds;
    let outcome = match cfg.solver.kind {
        SolverKind::Dsgd => {
            let r0 = initial_r0(cfg, &inst);
            let plan = dsgd_plan(cfg, &inst, r0, eps)?;
            let opts = RunOptions {
                record_every: cfg.solver.record_every,
                targets: vec![eps],
                stop_on_targets: false,
            };
            let rounds = plan.horizon.min(cap);
            RunOutcome::Dsgd(dsgd_run_with(&inst.problem, &inst.schedule, rounds, &plan, &inst.x0, seed, &opts)?)
        }
        SolverKind::Catalyst => {
            let opts = cfg.solver.catalyst.options(cfg.solver.record_every, vec![eps], false, cap);
            RunOutcome::Catalyst(catalyst_dsgd_run(&inst.problem, &inst.schedule, &inst.x0, eps, seed, &opts)?)
        }
    };
    Ok(ReplicateRun {
        replicate,
        seed,
        target: eps,
        outcome,
    })
}

/// All replicates, in parallel, in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRun>> {
    let seeds = cfg.seeds();
    seeds
        .par_iter()
        .enumerate()
        .map(|(r, &s)| run_replicate(cfg, r, s))
        .collect()
}

/// Both arms of one replicate, each stopped at the first round where every
/// target on the grid is met (or at the round cap).
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateComparison {
    pub replicate: usize,
    pub seed: u64,
    /// `||xbar^0 - x*||^2` fed to the DSGD plan.
    pub r0: f64,
    pub dsgd: RunRecord,
    pub catalyst: CatalystRecord,
}

pub fn compare_replicate(cfg: &ExperimentConfig, replicate: usize, seed: u64) -> Result<ReplicateComparison> {
    let inst = build_instance(cfg, seed)?;
    let grid = cfg.eps_grid();
    let eps_min = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let cap = cfg.output.max_rounds;
    let r0 = initial_r0(cfg, &inst);
    let plan = dsgd_plan(cfg, &inst, r0, eps_min)?;
    let opts = RunOptions {
        record_every: cfg.solver.record_every,
        targets: grid.clone(),
        stop_on_targets: true,
    };
    let dsgd = dsgd_run_with(&inst.problem, &inst.schedule, cap, &plan, &inst.x0, seed, &opts)?;
    let copts = cfg.solver.catalyst.options(cfg.solver.record_every, grid, true, cap);
    let catalyst = catalyst_dsgd_run(&inst.problem, &inst.schedule, &inst.x0, eps_min, seed, &copts)?;
    Ok(ReplicateComparison {
        replicate,
        seed,
        r0,
        dsgd,
        catalyst,
    })
}

pub fn compare_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateComparison>> {
    let seeds = cfg.seeds();
    seeds
        .par_iter()
        .enumerate()
        .map(|(r, &s)| compare_replicate(cfg, r, s))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    /// `1 - lambda_2^2` of the static gossip matrix.
    Spectral,
    /// Spectral rate of the gossip matrix, declared per block of `tau` rounds.
    PeriodicSpectral,
    /// Monte Carlo estimate over random mixing blocks.
    MonteCarlo,
    /// Taken from the config override.
    Declared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PEstimate {
    pub tau: usize,
    pub p: f64,
    pub method: EstimateMethod,
    pub verification: ConsensusReport,
}

/// The `(tau, p)` the step-size plans will use, checked by the Monte Carlo verifier.
pub fn estimate_p(cfg: &ExperimentConfig, seed: u64) -> Result<PEstimate> {
    let s = build_schedule(&cfg.network, cfg.problem.n, seed)?;
    let method = if cfg.network.declared_p.is_some() || cfg.network.declared_tau.is_some() {
        EstimateMethod::Declared
    } else {
        match cfg.network.schedule {
            ScheduleKind::Static => EstimateMethod::Spectral,
            ScheduleKind::PeriodicGossip { .. } => EstimateMethod::PeriodicSpectral,
            ScheduleKind::IidEdgeSample { .. } => EstimateMethod::MonteCarlo,
        }
    };
    let p = match method {
        EstimateMethod::Spectral => spectral_consensus_rate(s.gossip_matrix())?,
        _ => s.declared_p(),
    };
    let tau = s.declared_tau();
    let s = s.with_declared(tau, p);
    let verification = verify_consensus_rate(&s, cfg.network.verify_trials, seed::derive(seed, VERIFY_TAG) ^ 1)?;
    Ok(PEstimate {
        tau: s.declared_tau(),
        p,
        method,
        verification,
    })
}
