use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dsgd-catalyst");

const MINIMAL: &str = r#"
schema_version = 1

[problem]
kind = "quadratic"
n = 2
d = 3
mu = 1.0
condition_number = 4.0
noise = { kind = "none" }

[network]
topology = { kind = "complete" }

[solver]
kind = "dsgd"
eps = 1e-6
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn cli(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn minimal_run_writes_full_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let o = cli(&["run"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("final_gap="), "{}", stdout(&o));
    let meta = json(&out.join("dsgd_seed0.json"));
    let rounds = meta["rounds"].as_u64().unwrap();
    let csv = fs::read_to_string(out.join("dsgd_seed0.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,gap,dist_sq,consensus_err,w_t");
    assert_eq!(csv.lines().count() as u64 - 1, rounds + 1);
    assert_eq!(meta["config"]["problem"]["n"], 2);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["record"].get("rows").is_none());
}

#[test]
fn zero_mu_with_catalyst_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = MINIMAL.replace("mu = 1.0", "mu = 0.0").replace("\"dsgd\"", "\"catalyst\"");
    let cfg = write_config(dir.path(), &body);
    let o = cli(&["run"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem.mu"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = MINIMAL.replace("eps = 1e-6", "eps = 1e-6\nepsilon = 3");
    let cfg = write_config(dir.path(), &body);
    let o = cli(&["run"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilon"), "{}", stderr(&o));
}

#[test]
fn replicates_fan_out_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("\"dsgd\"", "\"catalyst\""));
    let out = dir.path().join("out");
    let o = cli(&["run", "--seed", "5", "--replicates", "10"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for (r, seed) in (5..15).enumerate() {
        let meta = json(&out.join(format!("catalyst_seed{seed}.json")));
        assert_eq!(meta["seed"], seed);
        assert_eq!(meta["replicate"], r);
        assert_eq!(meta["master_seed"], 5);
        assert!(out.join(format!("catalyst_seed{seed}_outer.csv")).exists());
    }
    let jsons = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert_eq!(jsons, 10);
}

#[test]
fn unreachable_target_still_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("eps = 1e-6", "eps = 1e-30"));
    let out = dir.path().join("out");
    let o = cli(&["run", "--max-rounds", "50"], &cfg, &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("dsgd_seed0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert!(json(&out.join("dsgd_seed0.json"))["reached"].is_null());
}

#[test]
fn identical_seeds_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let body = MINIMAL
        .replace("noise = { kind = \"none\" }", "noise = { kind = \"additive_gaussian\", sigma = 0.2 }")
        .replace("kind = \"complete\"", "kind = \"ring\"");
    let cfg = write_config(dir.path(), &body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(cli(&["compare", "--seed", "3"], &cfg, &a).status.code(), Some(0));
    assert_eq!(cli(&["compare", "--seed", "3"], &cfg, &b).status.code(), Some(0));
    for name in ["compare_seed3_dsgd.csv", "compare_seed3_catalyst.csv", "compare_seed3_catalyst_outer.csv", "comparison.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn estimate_p_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ring = MINIMAL.replace("n = 2", "n = 4").replace("kind = \"complete\"", "kind = \"ring\"");
    let cases = [
        (ring.clone(), "tau=1 p=0.888888889", "Spectral"),
        (MINIMAL.replace("n = 2", "n = 5"), "tau=1 p=1.000000000", "Spectral"),
        (
            ring.replace("topology = { kind = \"ring\" }", "topology = { kind = \"ring\" }\nschedule = { kind = \"periodic_gossip\", tau = 4 }"),
            "tau=4 p=0.888888889",
            "PeriodicSpectral",
        ),
    ];
    for (body, expect, method) in cases {
        let cfg = write_config(dir.path(), &body);
        let out = dir.path().join("est");
        let o = cli(&["estimate-p"], &cfg, &out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let s = stdout(&o);
        assert!(s.contains(expect) && s.contains("verdict=pass") && s.contains(method), "{s}");
        let est = json(&out.join("estimate_p.json"));
        assert_eq!(est["estimate"]["verification"]["pass"], true);
    }
}

#[test]
fn compare_reports_recomputable_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let body = MINIMAL
        .replace("n = 2", "n = 4")
        .replace("condition_number = 4.0", "condition_number = 50.0")
        .replace("kind = \"complete\"", "kind = \"ring\"")
        .replace("eps = 1e-6", "eps = 1e-6\neps_grid = [1e-3, 1e-6]");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = cli(&["compare", "--replicates", "3"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&out.join("comparison.json"));
    assert_eq!(report["noise_dominated"], false);
    let reps = report["replicates"].as_array().unwrap();
    assert_eq!(reps.len(), 3);
    for (j, t) in report["targets"].as_array().unwrap().iter().enumerate() {
        let mut d: Vec<f64> = reps.iter().map(|r| r["dsgd_rounds"][j].as_f64().unwrap()).collect();
        let mut c: Vec<f64> = reps.iter().map(|r| r["catalyst_rounds"][j].as_f64().unwrap()).collect();
        d.sort_by(f64::total_cmp);
        c.sort_by(f64::total_cmp);
        assert_eq!(t["dsgd"]["stats"]["median"].as_f64().unwrap(), d[1]);
        assert_eq!(t["catalyst"]["stats"]["median"].as_f64().unwrap(), c[1]);
        assert_eq!(t["median_ratio"].as_f64().unwrap(), c[1] / d[1]);
        // raw counts match the shipped trajectories
        let seed = reps[0]["seed"].as_u64().unwrap();
        let csv = fs::read_to_string(out.join(format!("compare_seed{seed}_dsgd.csv"))).unwrap();
        let eps = t["eps"].as_f64().unwrap();
        let first = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .find(|r| r[2] <= eps)
            .unwrap();
        assert_eq!(first[0], reps[0]["dsgd_rounds"][j].as_f64().unwrap());
    }
}

#[test]
fn degenerate_wrapper_matches_plain_dsgd() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{}\n[solver.catalyst]\nkappa = 0.0\nouter_iterations = 1\nouter_factor = 1.0\ninner_rounds = 10000000\n",
        MINIMAL.replace("kind = \"complete\"", "kind = \"ring\"").replace("n = 2", "n = 5")
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = cli(&["compare", "--replicates", "2"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&out.join("comparison.json"));
    for r in report["replicates"].as_array().unwrap() {
        let d = r["dsgd_rounds"][0].as_i64().unwrap();
        let c = r["catalyst_rounds"][0].as_i64().unwrap();
        assert!((d - c).abs() <= 1, "{d} vs {c}");
    }
}

#[test]
fn noise_dominated_regime_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let body = MINIMAL
        .replace("noise = { kind = \"none\" }", "noise = { kind = \"additive_gaussian\", sigma = 3.0 }")
        .replace("eps = 1e-6", "eps = 1e-2");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = cli(&["compare"], &cfg, &out);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let report = json(&out.join("comparison.json"));
    assert_eq!(report["noise_dominated"], true);
    assert!(report["note"].as_str().unwrap().contains("no acceleration is promised"));
    assert!(stdout(&o).contains("noise_dominated=true"));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{}\n[sweep]\ncondition_number = [2.0, 8.0]\nnoise_sigma = [0.0]\n",
        MINIMAL.replace("eps = 1e-6", "eps = 1e-4")
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = cli(&["sweep"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,2.0,"));
    assert!(lines[2].starts_with("1,8.0,"));
    assert!(out.join("point_001").join("comparison.json").exists());
}
