use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalyst::{CatalystOptions, DEFAULT_EPS_CONSTANT, STEP_MATCHED_SCALE};
use crate::dsgd::ZeroNoiseLog;
use crate::error::{Error, Result};
use crate::network::{ScheduleKind, Topology};
use crate::problems::NoiseModel;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_ROUNDS: u64 = 10_000_000;

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub n: usize,
    pub d: usize,
    /// Strong convexity; the ridge weight for logistic instances.
    pub mu: f64,
    /// `L / mu`, quadratic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default = "no_noise")]
    pub noise: NoiseModel,
    /// Logistic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_node: Option<usize>,
}

fn no_noise() -> NoiseModel {
    NoiseModel::None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub topology: Topology,
    #[serde(default = "static_schedule")]
    pub schedule: ScheduleKind,
    /// Override of the declared `(tau, p)` used by the step-size plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_tau: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_p: Option<f64>,
    /// Monte Carlo blocks used to estimate `p` for randomized schedules.
    #[serde(default = "default_estimate_draws")]
    pub estimate_draws: usize,
    /// Trials of the consensus-rate verifier.
    #[serde(default = "default_verify_trials")]
    pub verify_trials: usize,
}

fn static_schedule() -> ScheduleKind {
    ScheduleKind::Static
}

fn default_estimate_draws() -> usize {
    2000
}

fn default_verify_trials() -> usize {
    1000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dsgd,
    Catalyst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Target on `mu ||xbar - x*||^2`.
    pub eps: f64,
    /// Targets tracked by `compare`; `[eps]` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_grid: Vec<f64>,
    /// Fixed DSGD horizon instead of the planned one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u64>,
    /// Initial distance `||xbar^0 - x*||^2` fed to the plans; ground truth when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default = "one")]
    pub record_every: u64,
    #[serde(default)]
    pub zero_noise_log: ZeroNoiseLog,
    #[serde(default)]
    pub catalyst: CatalystConfig,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalystConfig {
    pub kappa: Option<f64>,
    pub eps_schedule_constant: f64,
    pub outer_iterations: Option<usize>,
    pub outer_factor: f64,
    pub inner_rounds: Option<u64>,
    pub inner_budget_scale: f64,
    pub initial_gap: Option<f64>,
}

impl Default for CatalystConfig {
    fn default() -> Self {
        CatalystConfig {
            kappa: None,
            eps_schedule_constant: DEFAULT_EPS_CONSTANT,
            outer_iterations: None,
            outer_factor: 2.0,
            inner_rounds: None,
            inner_budget_scale: STEP_MATCHED_SCALE,
            initial_gap: None,
        }
    }
}

impl CatalystConfig {
    pub fn options(&self, record_every: u64, targets: Vec<f64>, stop_on_targets: bool, max_rounds: u64) -> CatalystOptions {
        CatalystOptions {
            kappa: self.kappa,
            eps_schedule_constant: self.eps_schedule_constant,
            outer_iterations: self.outer_iterations,
            outer_factor: self.outer_factor,
            inner_rounds: self.inner_rounds,
            inner_budget_scale: self.inner_budget_scale,
            initial_gap: self.initial_gap,
            record_every,
            targets,
            stop_on_targets,
            max_rounds: Some(max_rounds),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub master: u64,
    /// Replicate `r` uses seed `master + r`.
    pub replicates: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            master: 0,
            replicates: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Safety cap on the total rounds of any single run.
    pub max_rounds: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

/// Grid for the `sweep` subcommand; empty axes keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub condition_number: Vec<f64>,
    pub eps: Vec<f64>,
    /// Additive Gaussian noise levels; `0` means no noise.
    pub noise_sigma: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::config(field_of(&e), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seeds.replicates as u64).map(|r| self.seeds.master.wrapping_add(r)).collect()
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        if self.solver.eps_grid.is_empty() {
            vec![self.solver.eps]
        } else {
            self.solver.eps_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(field, reason));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        let pr = &self.problem;
        if pr.n == 0 {
            return bad("problem.n", "need at least one node".into());
        }
        if pr.d == 0 {
            return bad("problem.d", "need dimension >= 1".into());
        }
        if !(pr.mu > 0.0 && pr.mu.is_finite()) {
            let why = match self.solver.kind {
                SolverKind::Catalyst => "Catalyst needs strong convexity, mu must be positive",
                SolverKind::Dsgd => "the step-size plan needs strong convexity, mu must be positive",
            };
            return bad("problem.mu", format!("{why}, got {}", pr.mu));
        }
        if !(pr.heterogeneity >= 0.0 && pr.heterogeneity.is_finite()) {
            return bad("problem.heterogeneity", format!("must be >= 0, got {}", pr.heterogeneity));
        }
        match pr.kind {
            ProblemKind::Quadratic => match pr.condition_number {
                Some(c) if c >= 1.0 && c.is_finite() => {}
                Some(c) => return bad("problem.condition_number", format!("must be >= 1, got {c}")),
                None => return bad("problem.condition_number", "required for quadratic problems".into()),
            },
            ProblemKind::Logistic => match pr.samples_per_node {
                Some(m) if m > 0 => {}
                _ => return bad("problem.samples_per_node", "logistic problems need >= 1 sample per node".into()),
            },
        }
        match pr.noise {
            NoiseModel::None => {}
            NoiseModel::AdditiveGaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => {}
            NoiseModel::AdditiveGaussian { sigma } => {
                return bad("problem.noise.sigma", format!("must be >= 0, got {sigma}"))
            }
            NoiseModel::Minibatch { batch } if batch > 0 => {}
            NoiseModel::Minibatch { .. } => return bad("problem.noise.batch", "must be >= 1".into()),
        }
        let net = &self.network;
        if let Topology::ErdosRenyi { prob } = net.topology {
            if !(prob > 0.0 && prob <= 1.0) {
                return bad("network.topology.prob", format!("must be in (0, 1], got {prob}"));
            }
        }
        match net.schedule {
            ScheduleKind::PeriodicGossip { tau: 0 } => return bad("network.schedule.tau", "must be >= 1".into()),
            ScheduleKind::IidEdgeSample { keep_prob } if !(keep_prob > 0.0 && keep_prob <= 1.0) => {
                return bad("network.schedule.keep_prob", format!("must be in (0, 1], got {keep_prob}"))
            }
            _ => {}
        }
        if net.declared_tau == Some(0) {
            return bad("network.declared_tau", "must be >= 1".into());
        }
        if let Some(p) = net.declared_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad("network.declared_p", format!("must be in (0, 1], got {p}"));
            }
        }
        if net.estimate_draws == 0 {
            return bad("network.estimate_draws", "must be >= 1".into());
        }
        if net.verify_trials == 0 {
            return bad("network.verify_trials", "must be >= 1".into());
        }
        let s = &self.solver;
        if !(s.eps > 0.0 && s.eps.is_finite()) {
            return bad("solver.eps", format!("must be positive, got {}", s.eps));
        }
        if let Some(e) = s.eps_grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return bad("solver.eps_grid", format!("entries must be positive, got {e}"));
        }
        if s.rounds == Some(0) {
            return bad("solver.rounds", "must be >= 1".into());
        }
        if let Some(r0) = s.r0 {
            if !(r0 >= 0.0 && r0.is_finite()) {
                return bad("solver.r0", format!("must be >= 0, got {r0}"));
            }
        }
        if s.record_every == 0 {
            return bad("solver.record_every", "must be >= 1".into());
        }
        let c = &s.catalyst;
        if let Some(k) = c.kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return bad("solver.catalyst.kappa", format!("must be >= 0, got {k}"));
            }
        }
        if !(c.eps_schedule_constant > 0.0) {
            return bad("solver.catalyst.eps_schedule_constant", "must be positive".into());
        }
        if !(c.outer_factor >= 1.0) {
            return bad("solver.catalyst.outer_factor", format!("must be >= 1, got {}", c.outer_factor));
        }
        if c.outer_iterations == Some(0) {
            return bad("solver.catalyst.outer_iterations", "must be >= 1".into());
        }
        if c.inner_rounds == Some(0) {
            return bad("solver.catalyst.inner_rounds", "must be >= 1".into());
        }
        if !(c.inner_budget_scale > 0.0) {
            return bad("solver.catalyst.inner_budget_scale", "must be positive".into());
        }
        if let Some(g) = c.initial_gap {
            if !(g > 0.0) {
                return bad("solver.catalyst.initial_gap", format!("must be positive, got {g}"));
            }
        }
        if self.seeds.replicates == 0 {
            return bad("seeds.replicates", "need at least one replicate".into());
        }
        if self.output.max_rounds == 0 {
            return bad("output.max_rounds", "must be >= 1".into());
        }
        if let Some(sw) = &self.sweep {
            if let Some(c) = sw.condition_number.iter().find(|c| !(**c >= 1.0)) {
                return bad("sweep.condition_number", format!("entries must be >= 1, got {c}"));
            }
            if let Some(e) = sw.eps.iter().find(|e| !(**e > 0.0)) {
                return bad("sweep.eps", format!("entries must be positive, got {e}"));
            }
            if let Some(s) = sw.noise_sigma.iter().find(|s| !(**s >= 0.0)) {
                return bad("sweep.noise_sigma", format!("entries must be >= 0, got {s}"));
            }
        }
        Ok(())
    }
}

/// Best-effort dotted path of the offending key in a parse error.
fn field_of(e: &toml::de::Error) -> String {
    let msg = e.message();
    for quote in ['`', '\''] {
        if let Some(start) = msg.find(quote) {
            if let Some(len) = msg[start + 1..].find(quote) {
                return msg[start + 1..start + 1 + len].to_string();
            }
        }
    }
    "config".into()
}
