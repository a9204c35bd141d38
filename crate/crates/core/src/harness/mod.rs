//! Configuration-driven experiments behind the command-line subcommands.

pub mod config;
pub mod experiment;
pub mod output;
pub mod report;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    CatalystConfig, ExperimentConfig, NetworkConfig, OutputConfig, ProblemConfig, ProblemKind, SeedConfig,
    SolverConfig, SolverKind, SweepConfig, DEFAULT_MAX_ROUNDS, SCHEMA_VERSION,
};
pub use experiment::{
    build_instance, build_problem, build_schedule, compare_experiment, compare_replicate, dsgd_plan, estimate_p,
    run_experiment, run_replicate, EstimateMethod, Instance, PEstimate, ReplicateComparison, ReplicateRun,
    RunOutcome,
};
pub use report::{build_report, ArmStats, ComparisonReport, Quartiles, ReplicateCounts, TargetSummary};

use crate::error::Result;
use crate::problems::NoiseModel;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replicates: Option<usize>,
    pub max_rounds: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seeds.master = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(r) = self.replicates {
            cfg.seeds.replicates = r;
        }
        if let Some(m) = self.max_rounds {
            cfg.output.max_rounds = m;
        }
        cfg.validate()
    }
}

/// What a command did, for the one-line summary and the exit code.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutcome {
    pub summary: String,
    /// Some run stopped at the round cap before reaching its target.
    pub unreachable: bool,
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<CommandOutcome> {
    let hash = cfg.hash()?;
    let dir = &cfg.output.dir;
    let seeds = cfg.seeds();
    let runs: Vec<ReplicateRun> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &s)| {
            let mut run = run_replicate(cfg, r, s)?;
            run.outcome.set_config_hash(&hash);
            output::write_run(dir, cfg, &hash, &run)?;
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let reached = runs.iter().filter(|r| r.reached().is_some()).count();
    let last = &runs[0];
    let row = last.outcome.final_row();
    let summary = format!(
        "run solver={} replicates={} seed={} rounds={} final_gap={:e} final_mu_dist_sq={:e} target={:e} reached={}/{}",
        match cfg.solver.kind {
            SolverKind::Dsgd => "dsgd",
            SolverKind::Catalyst => "catalyst",
        },
        runs.len(),
        last.seed,
        last.outcome.rounds(),
        row.gap,
        cfg.problem.mu * row.dist_sq,
        cfg.solver.eps,
        reached,
        runs.len()
    );
    Ok(CommandOutcome {
        summary,
        unreachable: reached < runs.len(),
    })
}

fn compare_into(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let dir = &cfg.output.dir;
    let seeds = cfg.seeds();
    let runs: Vec<ReplicateComparison> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &s)| {
            let c = compare_replicate(cfg, r, s)?;
            output::write_comparison_replicate(dir, &c)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let report = build_report(cfg, &runs)?;
    output::write_report(dir, &report)?;
    Ok(report)
}

fn compare_line(r: &ComparisonReport) -> String {
    let t = r
        .targets
        .iter()
        .min_by(|a, b| a.eps.total_cmp(&b.eps))
        .expect("grid is non-empty");
    let fmt = |v: Option<f64>| v.map_or("unreached".to_string(), |x| format!("{x}"));
    format!(
        "eps={:e} dsgd_median={} catalyst_median={} ratio={} noise_dominated={}",
        t.eps,
        fmt(t.dsgd.median()),
        fmt(t.catalyst.median()),
        t.median_ratio.map_or("n/a".to_string(), |x| format!("{x:.4}")),
        r.noise_dominated
    )
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CommandOutcome> {
    let report = compare_into(cfg)?;
    Ok(CommandOutcome {
        summary: format!("compare replicates={} {}", report.seeds.len(), compare_line(&report)),
        unreachable: !report.all_reached(),
    })
}

pub fn cmd_estimate_p(cfg: &ExperimentConfig) -> Result<CommandOutcome> {
    let seed = cfg.seeds.master;
    let e = estimate_p(cfg, seed)?;
    output::write_estimate(&cfg.output.dir, cfg, &cfg.hash()?, seed, &e)?;
    Ok(CommandOutcome {
        summary: format!(
            "estimate-p tau={} p={:.9} method={:?} verdict={} mean_ratio={:.6} threshold={:.6}",
            e.tau,
            e.p,
            e.method,
            if e.verification.pass { "pass" } else { "fail" },
            e.verification.mean_ratio,
            e.verification.threshold
        ),
        unreachable: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub condition_number: Option<f64>,
    pub eps: f64,
    pub noise_sigma: Option<f64>,
    pub dir: PathBuf,
    pub dsgd_median: Option<f64>,
    pub catalyst_median: Option<f64>,
    pub median_ratio: Option<f64>,
    pub noise_dominated: bool,
}

pub const SWEEP_CSV_HEADER: &str =
    "index,condition_number,eps,noise_sigma,dsgd_median,catalyst_median,median_ratio,noise_dominated";

/// Cartesian grid of the sweep axes; each point is a full comparison.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let sw = cfg.sweep.clone().unwrap_or_default();
    let axis = |v: &[f64]| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let mut out = Vec::new();
    for c in axis(&sw.condition_number) {
        for e in axis(&sw.eps) {
            for s in axis(&sw.noise_sigma) {
                let mut p = cfg.clone();
                p.sweep = None;
                if c.is_some() {
                    p.problem.condition_number = c;
                }
                if let Some(e) = e {
                    p.solver.eps = e;
                    p.solver.eps_grid = vec![e];
                }
                if let Some(s) = s {
                    p.problem.noise = if s > 0.0 {
                        NoiseModel::AdditiveGaussian { sigma: s }
                    } else {
                        NoiseModel::None
                    };
                }
                p.output.dir = cfg.output.dir.join(format!("point_{:03}", out.len()));
                out.push(p);
            }
        }
    }
    out
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<CommandOutcome> {
    let mut rows = Vec::new();
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    let mut unreachable = false;
    for (index, p) in sweep_points(cfg).into_iter().enumerate() {
        p.validate()?;
        let report = compare_into(&p)?;
        unreachable |= !report.all_reached();
        let t = report
            .targets
            .iter()
            .min_by(|a, b| a.eps.total_cmp(&b.eps))
            .expect("grid is non-empty");
        let point = SweepPoint {
            index,
            condition_number: p.problem.condition_number,
            eps: t.eps,
            noise_sigma: match p.problem.noise {
                NoiseModel::AdditiveGaussian { sigma } => Some(sigma),
                _ => None,
            },
            dir: p.output.dir.clone(),
            dsgd_median: t.dsgd.median(),
            catalyst_median: t.catalyst.median(),
            median_ratio: t.median_ratio,
            noise_dominated: report.noise_dominated,
        };
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        csv.push_str(&format!(
            "{},{},{:?},{},{},{},{},{}\n",
            point.index,
            opt(point.condition_number),
            point.eps,
            opt(point.noise_sigma),
            opt(point.dsgd_median),
            opt(point.catalyst_median),
            opt(point.median_ratio),
            point.noise_dominated
        ));
        rows.push(point);
    }
    output::write_sweep(&cfg.output.dir, &csv, &rows)?;
    Ok(CommandOutcome {
        summary: format!("sweep points={} unreachable={}", rows.len(), unreachable),
        unreachable,
    })
}
