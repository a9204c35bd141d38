use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, SCHEMA_VERSION};
use super::experiment::{PEstimate, ReplicateComparison, ReplicateRun, RunOutcome};
use super::report::ComparisonReport;
use crate::error::Result;

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

/// JSON view of a record without its row series, which lives in the CSV.
fn without_rows<T: Serialize>(record: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(record)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("rows");
    }
    Ok(v)
}

#[derive(Serialize)]
struct RunFile<'a> {
    schema_version: u32,
    kind: &'static str,
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    master_seed: u64,
    replicate: usize,
    seed: u64,
    target: f64,
    reached: Option<u64>,
    rounds: u64,
    final_gap: f64,
    final_dist_sq: f64,
    csv: String,
    outer_csv: Option<String>,
    record: serde_json::Value,
}

pub fn run_stem(run: &ReplicateRun) -> String {
    let solver = match run.outcome {
        RunOutcome::Dsgd(_) => "dsgd",
        RunOutcome::Catalyst(_) => "catalyst",
    };
    format!("{solver}_seed{}", run.seed)
}

/// Trajectory CSV plus JSON metadata; Catalyst runs add the outer trace.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, hash: &str, run: &ReplicateRun) -> Result<()> {
    let stem = run_stem(run);
    let csv = format!("{stem}.csv");
    write_atomic(&dir.join(&csv), run.outcome.to_csv().as_bytes())?;
    let outer_csv = match &run.outcome {
        RunOutcome::Catalyst(r) => {
            let name = format!("{stem}_outer.csv");
            write_atomic(&dir.join(&name), r.outer_csv().as_bytes())?;
            Some(name)
        }
        RunOutcome::Dsgd(_) => None,
    };
    let last = run.outcome.final_row();
    let record = match &run.outcome {
        RunOutcome::Dsgd(r) => without_rows(r)?,
        RunOutcome::Catalyst(r) => without_rows(r)?,
    };
    write_json(
        &dir.join(format!("{stem}.json")),
        &RunFile {
            schema_version: SCHEMA_VERSION,
            kind: "run",
            config: cfg,
            config_hash: hash,
            master_seed: cfg.seeds.master,
            replicate: run.replicate,
            seed: run.seed,
            target: run.target,
            reached: run.reached(),
            rounds: run.outcome.rounds(),
            final_gap: last.gap,
            final_dist_sq: last.dist_sq,
            csv,
            outer_csv,
            record,
        },
    )
}

/// Row series of both arms of one replicate.
pub fn write_comparison_replicate(dir: &Path, c: &ReplicateComparison) -> Result<()> {
    let stem = format!("compare_seed{}", c.seed);
    write_atomic(&dir.join(format!("{stem}_dsgd.csv")), c.dsgd.to_csv().as_bytes())?;
    write_atomic(&dir.join(format!("{stem}_catalyst.csv")), c.catalyst.to_csv().as_bytes())?;
    write_atomic(&dir.join(format!("{stem}_catalyst_outer.csv")), c.catalyst.outer_csv().as_bytes())
}

pub fn write_report(dir: &Path, report: &ComparisonReport) -> Result<()> {
    write_atomic(&dir.join("comparison.csv"), report.summary_csv().as_bytes())?;
    write_json(&dir.join("comparison.json"), report)
}

#[derive(Serialize)]
struct EstimateFile<'a> {
    schema_version: u32,
    kind: &'static str,
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    seed: u64,
    estimate: &'a PEstimate,
}

pub fn write_estimate(dir: &Path, cfg: &ExperimentConfig, hash: &str, seed: u64, e: &PEstimate) -> Result<()> {
    write_json(
        &dir.join("estimate_p.json"),
        &EstimateFile {
            schema_version: SCHEMA_VERSION,
            kind: "estimate_p",
            config: cfg,
            config_hash: hash,
            seed,
            estimate: e,
        },
    )
}

pub fn write_sweep<T: Serialize>(dir: &Path, csv: &str, summary: &T) -> Result<()> {
    write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
    write_json(&dir.join("sweep.json"), summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("a.csv");
        write_atomic(&path, b"x\n").unwrap();
        write_atomic(&path, b"y\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "y\n");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.csv")]);
    }
}
