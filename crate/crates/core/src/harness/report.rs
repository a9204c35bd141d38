use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{build_instance, ReplicateComparison};
use crate::catalyst::{catalyst_complexity_terms, outer_iterations, CatalystParams, TotalComplexity};
use crate::dsgd::{dsgd_bound_terms, BoundTerms};
use crate::error::Result;

/// Median and quartiles (linear interpolation between order statistics).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Rounds-to-target statistics of one arm; `None` when some replicate never got there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub reached: usize,
    pub replicates: usize,
    pub stats: Option<Quartiles>,
}

impl ArmStats {
    fn of(counts: &[Option<u64>]) -> Self {
        let reached: Vec<f64> = counts.iter().flatten().map(|&c| c as f64).collect();
        ArmStats {
            reached: reached.len(),
            replicates: counts.len(),
            stats: if reached.len() == counts.len() {
                Quartiles::of(&reached)
            } else {
                None
            },
        }
    }

    pub fn median(&self) -> Option<f64> {
        self.stats.map(|s| s.median)
    }
}

/// Raw per-replicate numbers every summary is computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateCounts {
    pub replicate: usize,
    pub seed: u64,
    pub r0: f64,
    pub initial_gap: f64,
    /// `K` computed by the Catalyst arm for the smallest target.
    pub planned_outer: usize,
    /// Per grid entry.
    pub dsgd_rounds: Vec<Option<u64>>,
    pub catalyst_rounds: Vec<Option<u64>>,
    pub catalyst_outer: Vec<Option<usize>>,
    pub dsgd_total_rounds: u64,
    pub catalyst_total_rounds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub eps: f64,
    pub dsgd: ArmStats,
    pub catalyst: ArmStats,
    /// Catalyst median over DSGD median.
    pub median_ratio: Option<f64>,
    /// Catalyst over DSGD, replicate by replicate.
    pub replicate_ratios: Vec<Option<f64>>,
    /// Bounds evaluated at the median `r0` over replicates.
    pub dsgd_bound: BoundTerms,
    pub catalyst_bound: TotalComplexity,
    pub bound_ratio: f64,
    /// `outer_iterations(q, gap, eps)` at the median initial gap.
    pub planned_outer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub eps_grid: Vec<f64>,
    pub tau: usize,
    pub p: f64,
    pub q: f64,
    pub replicates: Vec<ReplicateCounts>,
    pub targets: Vec<TargetSummary>,
    /// The stochastic term dominates both bounds at the smallest target.
    pub noise_dominated: bool,
    pub note: String,
}

pub fn replicate_counts(c: &ReplicateComparison, grid: &[f64]) -> ReplicateCounts {
    ReplicateCounts {
        replicate: c.replicate,
        seed: c.seed,
        r0: c.r0,
        initial_gap: c.catalyst.initial_gap,
        planned_outer: c.catalyst.planned_outer,
        dsgd_rounds: grid.iter().map(|&e| c.dsgd.hit(e)).collect(),
        catalyst_rounds: grid.iter().map(|&e| c.catalyst.hit(e)).collect(),
        catalyst_outer: grid.iter().map(|&e| c.catalyst.hit_outer(e)).collect(),
        dsgd_total_rounds: c.dsgd.rounds,
        catalyst_total_rounds: c.catalyst.rounds,
    }
}

fn median_of(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    Quartiles::of(&v).map_or(f64::NAN, |q| q.median)
}

pub fn build_report(cfg: &ExperimentConfig, runs: &[ReplicateComparison]) -> Result<ComparisonReport> {
    let grid = cfg.eps_grid();
    let replicates: Vec<ReplicateCounts> = runs.iter().map(|c| replicate_counts(c, &grid)).collect();
    // constants of the instance family; identical across replicates for quadratics
    let inst = build_instance(cfg, cfg.seeds.master)?;
    let k = inst.problem.constants();
    let tau = inst.schedule.declared_tau();
    let pc = inst.schedule.declared_p();
    let kappa = cfg.solver.catalyst.kappa.unwrap_or(k.l - k.mu);
    let q = CatalystParams::new(k.mu, kappa, cfg.solver.catalyst.eps_schedule_constant)?.q;
    let r0 = median_of(replicates.iter().map(|r| r.r0));
    let gap0 = median_of(replicates.iter().map(|r| r.initial_gap));

    let mut targets = Vec::with_capacity(grid.len());
    for (j, &eps) in grid.iter().enumerate() {
        let d_counts: Vec<Option<u64>> = replicates.iter().map(|r| r.dsgd_rounds[j]).collect();
        let c_counts: Vec<Option<u64>> = replicates.iter().map(|r| r.catalyst_rounds[j]).collect();
        let dsgd = ArmStats::of(&d_counts);
        let catalyst = ArmStats::of(&c_counts);
        let median_ratio = match (catalyst.median(), dsgd.median()) {
            (Some(c), Some(d)) if d > 0.0 => Some(c / d),
            _ => None,
        };
        let replicate_ratios = d_counts
            .iter()
            .zip(&c_counts)
            .map(|(d, c)| match (d, c) {
                (Some(d), Some(c)) if *d > 0 => Some(*c as f64 / *d as f64),
                _ => None,
            })
            .collect();
        let dsgd_bound = dsgd_bound_terms(&k, tau, pc, r0, eps)?;
        let catalyst_bound = catalyst_complexity_terms(&k, tau, pc, eps)?;
        targets.push(TargetSummary {
            eps,
            dsgd,
            catalyst,
            median_ratio,
            replicate_ratios,
            bound_ratio: catalyst_bound.total / dsgd_bound.total,
            dsgd_bound,
            catalyst_bound,
            planned_outer: if gap0 > 0.0 { outer_iterations(q, gap0, eps)? } else { 0 },
        });
    }

    let hardest = targets
        .iter()
        .min_by(|a, b| a.eps.total_cmp(&b.eps))
        .expect("grid is non-empty");
    let d = &hardest.dsgd_bound;
    let c = &hardest.catalyst_bound;
    let noise_dominated = d.variance > d.log + d.heterogeneity && c.variance > c.log + c.heterogeneity;
    let note = if noise_dominated {
        "the sigma^2 term dominates both bounds: noise-dominated regime, no acceleration is promised".to_string()
    } else {
        "low-noise regime: the log terms dominate and Catalyst predicts acceleration".to_string()
    };
    Ok(ComparisonReport {
        schema_version: super::config::SCHEMA_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash()?,
        seeds: cfg.seeds(),
        eps_grid: grid,
        tau,
        p: pc,
        q,
        replicates,
        targets,
        noise_dominated,
        note,
    })
}

pub const SUMMARY_CSV_HEADER: &str =
    "eps,dsgd_reached,dsgd_median,dsgd_iqr,catalyst_reached,catalyst_median,catalyst_iqr,median_ratio,dsgd_bound,catalyst_bound,bound_ratio";

impl ComparisonReport {
    /// One line per target; unreached medians are left empty.
    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        let mut s = String::from(SUMMARY_CSV_HEADER);
        s.push('\n');
        for t in &self.targets {
            let _ = writeln!(
                s,
                "{:?},{},{},{},{},{},{},{},{:?},{:?},{:?}",
                t.eps,
                t.dsgd.reached,
                opt(t.dsgd.median()),
                opt(t.dsgd.stats.map(|q| q.iqr())),
                t.catalyst.reached,
                opt(t.catalyst.median()),
                opt(t.catalyst.stats.map(|q| q.iqr())),
                opt(t.median_ratio),
                t.dsgd_bound.total,
                t.catalyst_bound.total,
                t.bound_ratio
            );
        }
        s
    }

    /// Whether every target was reached by every replicate of both arms.
    pub fn all_reached(&self) -> bool {
        self.targets
            .iter()
            .all(|t| t.dsgd.reached == t.dsgd.replicates && t.catalyst.reached == t.catalyst.replicates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        let q = Quartiles::of(&[5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (5.0, 5.0, 5.0));
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn unreached_replicate_voids_median() {
        let s = ArmStats::of(&[Some(3), None, Some(5)]);
        assert_eq!((s.reached, s.replicates), (2, 3));
        assert!(s.median().is_none());
        assert_eq!(ArmStats::of(&[Some(3), Some(5)]).median(), Some(4.0));
    }
}
