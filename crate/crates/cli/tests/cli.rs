use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sctm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sctm")).args(args).env("RUST_LOG", "off").output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn calibrate_reproduces_identity_thresholds() {
    let dir = TempDir::new().unwrap();
    let out = sctm(&["calibrate", "--config", "urban", "--out-dir", dir.path().to_str().unwrap()]);
    ok(&out);
    let csv = read(dir.path(), "thresholds.csv");
    let rows: Vec<&str> = csv.lines().filter(|l| l.contains(",identity,")).collect();
    let gammas: Vec<f64> = rows.iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(gammas.len(), 3);
    for (g, e) in gammas.iter().zip([60.0, 55.0, 50.0]) {
        assert!((g - e).abs() < 1e-6, "{g} vs {e}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["command"], "calibrate");
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn simulate_is_reproducible_across_runs_and_workers() {
    let runs: Vec<String> = [("1", "a"), ("1", "b"), ("2", "c")]
        .iter()
        .map(|(w, _)| {
            let dir = TempDir::new().unwrap();
            let out = sctm(&[
                "simulate", "--config", "highway", "--seed", "11", "--reps", "4", "--workers", w, "--out-dir",
                dir.path().to_str().unwrap(),
            ]);
            ok(&out);
            read(dir.path(), "replicates.csv")
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    assert_eq!(runs[0].lines().count(), 5);
}

#[test]
fn closed_simulation_conserves_mass() {
    let dir = TempDir::new().unwrap();
    let out = sctm(&[
        "simulate", "--config", "urban", "--closed", "--reps", "2", "--trajectory", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let csv = read(dir.path(), "replicates.csv");
    for r in column(&csv, "conservation_residual") {
        assert!(r.parse::<f64>().unwrap().abs() < 1e-9, "{r}");
    }
    for e in column(&csv, "net_exchange") {
        assert_eq!(e.parse::<f64>().unwrap(), 0.0);
    }
    assert!(read(dir.path(), "trajectory.csv").lines().count() > 1);
}

#[test]
fn bad_inputs_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(sctm(&["calibrate", "--out-dir", d]).status.code(), Some(2));
    assert_eq!(sctm(&["calibrate", "--config", "/no/such/file.json", "--out-dir", d]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"schema_version\": 1, ").unwrap();
    let out = sctm(&["simulate", "--config", bad.to_str().unwrap(), "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let out = sctm(&["simulate", "--config", "highway", "--design", "1,2,3", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
    let out = sctm(&["simulate", "--config", "highway", "--variant", "nope", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_compare_writes_one_row_per_design() {
    let dir = TempDir::new().unwrap();
    let out = sctm(&[
        "benchmark-compare", "--config", "highway", "--design", "5,5", "--design", "20,10", "--reps", "3", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let csv = read(dir.path(), "compare.csv");
    assert_eq!(csv.lines().count(), 3);
    let header = csv.lines().next().unwrap();
    for col in ["dpf_mean", "dpf_se", "cooperative_mean", "cooperative_se"] {
        assert!(header.contains(col), "{header}");
    }
}

#[test]
fn export_grid_covers_every_cell() {
    let dir = TempDir::new().unwrap();
    let out = sctm(&[
        "export-grid", "--config", "highway", "--axes", "xi1,xi2", "--res", "3", "--reps", "2", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let csv = read(dir.path(), "grid.csv");
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.lines().next().unwrap().starts_with("xi1,xi2,"));
}

#[test]
fn estimate_levelset_persists_every_iteration() {
    let dir = TempDir::new().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(sctm::scenario::bundled_source("highway").unwrap()).unwrap();
    cfg["run"]["horizon"] = 60.into();
    let l = &mut cfg["learning"];
    l["n_initial"] = 12.into();
    l["n_loop"] = 4.into();
    l["iterations"] = 2.into();
    l["tau_fractions"] = serde_json::json!([0.05, 0.1]);
    l["n_min"] = 4.into();
    l["n_max"] = serde_json::json!([12, 12]);
    l["n_eval"] = 256.into();
    l["grid"] = 8.into();
    let path = dir.path().join("tiny.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let outdir = dir.path().join("out");
    let out = sctm(&[
        "estimate-levelset", "--config", path.to_str().unwrap(), "--seed", "3", "--out-dir", outdir.to_str().unwrap(),
    ]);
    ok(&out);
    for f in ["dataset_0.csv", "dataset_1.csv", "grid_0.csv", "grid_1.csv", "iterations.csv", "hyperparameters.json"] {
        assert!(outdir.join(f).exists(), "{f} missing");
    }
    assert_eq!(read(&outdir, "grid_1.csv").lines().count(), 65);
    assert_eq!(read(&outdir, "iterations.csv").lines().count(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&read(&outdir, "manifest.json")).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seed"], 3);
}
