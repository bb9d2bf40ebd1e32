//! End-to-end tests of the `hyposwarm` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hyposwarm::diagnostics::{read_metrics, METRICS_HEADER, SNAPSHOT_HEADER};

fn hyposwarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyposwarm"))
        .args(args)
        .env_remove("HYPOSWARM_OUT")
        .output()
        .expect("binary runs")
}

fn scenario_text(dt: f64, n: usize) -> String {
    format!(
        r#"
name = "cli-test"

[domain]
kind = "box"
lo = [0.0]
hi = [1.0]

[fields]
family = "coordinate"

[control]
variant = "non-interacting-diffusion"
diffusion_gain = 1.0

[target]
kind = "uniform"

[sim]
dt = {dt}
t_final = 0.1
n_particles = {n}
seed = 3
snapshot_every = 5

[metrics]
cells_per_axis = 4
"#
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn nonpositive_dt_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.toml", &scenario_text(0.0, 10));
    let out = hyposwarm(&["run", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim.dt"), "{err}");
}

#[test]
fn missing_scenario_file_fails() {
    let out = hyposwarm(&["run", "/nonexistent/scenario.toml"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = scenario_text(0.01, 10).replace("seed = 3", "seed = 3\nsed = 4");
    let path = write(dir.path(), "typo.toml", &text);
    let out = hyposwarm(&["run", &path]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let out = hyposwarm(&["verify", "--verbose"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("brockett bracket"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn single_particle_run_exports_contract_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "one.toml", &scenario_text(0.01, 1));
    let out_dir = dir.path().join("run");
    let out = hyposwarm(&["run", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("final L1"));

    let metrics = read_metrics(&out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 3);
    for row in &metrics {
        assert!((row.total_mass - 1.0).abs() < 1e-12);
        assert_eq!(row.moving_fraction, 1.0);
    }
    let snaps: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().into_string().unwrap())
        .filter(|n| n.starts_with("snapshots_"))
        .collect();
    assert_eq!(snaps.len(), 3);
    let first = fs::read_to_string(out_dir.join("snapshots_00000.csv")).unwrap();
    assert_eq!(first.lines().next(), Some(SNAPSHOT_HEADER));
    assert_eq!(first.lines().count(), 2);

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["provenance"]["seed"], 3);
    assert_eq!(run["summary"]["final_moving_count"], 1);
    assert_eq!(run["config"]["name"], "cli-test");
}

#[test]
fn metrics_reimport_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "many.toml", &scenario_text(0.01, 50));
    let out_dir = dir.path().join("run");
    let out = hyposwarm(&["run", &path, "--out", out_dir.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = out_dir.join("metrics.csv");
    let rows = read_metrics(&csv).unwrap();
    let copy = dir.path().join("copy.csv");
    hyposwarm::diagnostics::write_metrics(&copy, &rows, hyposwarm::diagnostics::ExportFormat::Csv).unwrap();
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&copy).unwrap());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().next(), Some(METRICS_HEADER));
}

#[test]
fn renamed_metrics_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("metrics.csv");
    fs::write(&p, "t,l1,moving_fraction,total_mass\n0,1,1,1\n").unwrap();
    assert!(read_metrics(&p).is_err());
}

#[test]
fn seed_override_changes_the_run_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "s.toml", &scenario_text(0.01, 20));
    let run = |seed: &str, sub: &str| {
        let o = dir.path().join(sub);
        let out = hyposwarm(&["run", &path, "--seed", seed, "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        fs::read(o.join("snapshots_00002.csv")).unwrap()
    };
    let a = run("9", "a");
    assert_eq!(a, run("9", "b"));
    assert_ne!(a, run("10", "c"));
}

#[test]
fn grid_file_size_mismatch_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "target.txt", "1 2 3\n");
    let text = scenario_text(0.01, 10).replace(
        "kind = \"uniform\"",
        "kind = \"grid-file\"\npath = \"target.txt\"\ncells = [4]",
    );
    let path = write(dir.path(), "grid.toml", &text);
    let out = hyposwarm(&["run", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("target.txt") && err.contains("3 values"), "{err}");
}

#[test]
fn oracle_without_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "noor.toml", &scenario_text(0.01, 10));
    let out = hyposwarm(&["oracle", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn linear_oracle_exports_fields() {
    let dir = tempfile::tempdir().unwrap();
    let text = scenario_text(0.01, 10).replace("kind = \"uniform\"", "kind = \"sine\"\namplitude = 0.5")
        + "\n[oracle]\nmodel = \"linear\"\ncells = 50\nt_final = 1.5\nsnapshot_every = 1000\n";
    let path = write(dir.path(), "lin.toml", &text);
    let out_dir = dir.path().join("o");
    let out = hyposwarm(&["oracle", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = read_metrics(&out_dir.join("metrics.csv")).unwrap();
    let (first, last) = (metrics.first().unwrap(), metrics.last().unwrap());
    assert!(last.l1_to_target < 1e-3 * first.l1_to_target);
    for row in &metrics {
        assert!((row.total_mass - 1.0).abs() < 1e-12);
    }
    let fields = fs::read_to_string(out_dir.join("fields_00000.csv")).unwrap();
    assert_eq!(fields.lines().count(), 51);
}
