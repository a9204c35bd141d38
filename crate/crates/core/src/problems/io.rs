//! Self-describing JSON layout for problem instances.
//!
//! ```text
//! {
//!   "format": "dsgd-catalyst-problem",
//!   "version": 1,
//!   "n": <nodes>, "d": <dimension>, "l": <L>, "mu": <mu>,
//!   "locals": [ { "objective": {"kind": "quadratic", "a": [d*d row-major], "b": [d]}
//!                            | {"kind": "logistic", "features": [m*d row-major],
//!                               "labels": [m, each +1 or -1], "l2": <ridge>},
//!                 "noise": {"kind": "none"} | {"kind": "additive_gaussian", "sigma": s}
//!                        | {"kind": "minibatch", "batch": b},
//!                 "prox": null | {"kappa": k, "anchor": [d], "offset": c} } ],
//!   "x_star": [d], "f_star": <f*>, "zeta_bar_sq": <..>, "sigma_bar_sq": <..>
//! }
//! ```
//! Ground-truth fields are informational: import re-solves and checks them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaseObjective, LocalObjective, NoiseModel, Problem, ProxTerm};
use crate::error::{Error, Result};

pub const PROBLEM_FILE_FORMAT: &str = "dsgd-catalyst-problem";
pub const PROBLEM_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub d: usize,
    pub l: f64,
    pub mu: f64,
    pub locals: Vec<LocalEntry>,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub zeta_bar_sq: f64,
    pub sigma_bar_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalEntry {
    pub objective: BaseObjective,
    pub noise: NoiseModel,
    pub prox: Option<ProxEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxEntry {
    pub kappa: f64,
    pub anchor: Vec<f64>,
    pub offset: f64,
}

impl ProblemFile {
    pub fn from_problem(p: &Problem) -> Self {
        ProblemFile {
            format: PROBLEM_FILE_FORMAT.into(),
            version: PROBLEM_FILE_VERSION,
            n: p.n(),
            d: p.d(),
            l: p.l(),
            mu: p.mu(),
            locals: p
                .locals()
                .iter()
                .map(|f| LocalEntry {
                    objective: f.base().clone(),
                    noise: f.noise(),
                    prox: f.prox().map(|x| ProxEntry {
                        kappa: x.kappa,
                        anchor: x.anchor.clone(),
                        offset: x.offset,
                    }),
                })
                .collect(),
            x_star: p.x_star().to_vec(),
            f_star: p.f_star(),
            zeta_bar_sq: p.zeta_bar_sq(),
            sigma_bar_sq: p.sigma_bar_sq(),
        }
    }

    pub fn into_problem(self) -> Result<Problem> {
        if self.format != PROBLEM_FILE_FORMAT || self.version != PROBLEM_FILE_VERSION {
            return Err(Error::Serde(format!(
                "unsupported problem file {} v{}",
                self.format, self.version
            )));
        }
        if self.locals.len() != self.n {
            return Err(Error::DimensionMismatch(format!("{} locals for n = {}", self.locals.len(), self.n)));
        }
        let locals = self
            .locals
            .into_iter()
            .map(|e| {
                LocalObjective::new(e.objective, e.noise).with_prox(e.prox.map(|px| ProxTerm {
                    kappa: px.kappa,
                    anchor: px.anchor,
                    offset: px.offset,
                }))
            })
            .collect::<Vec<_>>();
        if locals.iter().any(|f| f.dim() != self.d) {
            return Err(Error::DimensionMismatch("local dimension differs from d".into()));
        }
        Problem::new(locals, self.l, self.mu)
    }
}

pub fn export_problem(p: &Problem, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(&ProblemFile::from_problem(p))?;
    std::fs::write(path, body)?;
    Ok(())
}

pub fn import_problem(path: &Path) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.into_problem()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic_problem, shift_problem, QuadraticSpec};

    #[test]
    fn export_import_preserves_instance() {
        let p = make_quadratic_problem(
            &QuadraticSpec {
                n: 3,
                d: 4,
                mu: 0.5,
                condition_number: 20.0,
                heterogeneity: 1.0,
                noise: NoiseModel::AdditiveGaussian { sigma: 0.1 },
            },
            4,
        )
        .unwrap();
        let s = shift_problem(&p, &[0.25; 12], 2.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        export_problem(&s, &path).unwrap();
        let back = import_problem(&path).unwrap();
        assert_eq!(back.x_star(), s.x_star());
        assert_eq!(back.f_star(), s.f_star());
        assert_eq!((back.l(), back.mu()), (s.l(), s.mu()));
        assert_eq!(ProblemFile::from_problem(&back), ProblemFile::from_problem(&s));
    }
}
