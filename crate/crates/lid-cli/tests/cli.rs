use std::io::Write;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lid");

const CIRCLE_CFG: &str = "
[manifold]
kind = circle

[density]
kind = uniform

[schedule]
kind = ve
sigma_min = 1e-4
sigma_max = 50

[grid]
start = -6
stop = -4
step = 1.0

[queries]
points = 1 0

[estimators]
list = flipd lidl
mc_samples = 5000

[experiment]
seed = 11

[sample]
count = 25
";

const ATOMS_CFG: &str = "
[manifold]
kind = point_set
points = 0

[density]
kind = empirical

[schedule]
kind = ve
sigma_min = 0.01
sigma_max = 50

[grid]
start = -4
stop = -4
step = 1

[queries]
points = 0

[estimators]
list = flipd

[sde]
steps = 200
samples = 50
";

fn config_file(content: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(content.as_bytes()).unwrap();
    f
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn sweep_writes_csv_and_exits_zero() {
    let cfg = config_file(CIRCLE_CFG);
    let out = run(&["sweep", "--config", cfg.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with(
        "point_id,component_index,true_lid,delta,estimator,value,stderr,error,runtime_ms"
    ));
    // 1 point x 3 deltas x 2 estimators + header.
    assert_eq!(text.trim().lines().count(), 7);
}

#[test]
fn sweep_deterministic_across_worker_counts() {
    let cfg = config_file(CIRCLE_CFG);
    let strip_runtime = |s: &str| -> String {
        s.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let a = run(&["sweep", "--config", cfg.path().to_str().unwrap(), "--jobs", "1"]);
    let b = run(&["sweep", "--config", cfg.path().to_str().unwrap(), "--jobs", "4"]);
    assert_eq!(strip_runtime(&stdout(&a)), strip_runtime(&stdout(&b)));
}

#[test]
fn seed_flag_overrides_config() {
    // The circle pipeline is fully analytic here, so instead check `sample`
    // output changes with the seed.
    let cfg = config_file(CIRCLE_CFG);
    let a = run(&["sample", "--config", cfg.path().to_str().unwrap(), "--seed", "1"]);
    let b = run(&["sample", "--config", cfg.path().to_str().unwrap(), "--seed", "2"]);
    let a2 = run(&["sample", "--config", cfg.path().to_str().unwrap(), "--seed", "1"]);
    assert_ne!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a), stdout(&a2));
    assert_eq!(stdout(&a).trim().lines().count(), 26); // header + 25 rows
}

#[test]
fn estimate_runs_one_cell_family() {
    let cfg = config_file(CIRCLE_CFG);
    let out = run(&["estimate", "--config", cfg.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    // First estimator only (flipd), all grid deltas, one point.
    assert_eq!(text.trim().lines().count(), 4);
    assert!(text.contains("flipd"));
    assert!(!text.contains("lidl"));
}

#[test]
fn bad_config_exits_two() {
    let cfg = config_file("[manifold]\nkind = dodecahedron\n");
    let out = run(&["sweep", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["sweep"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["sweep", "--config", "/nonexistent/path.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_single_suite_passes() {
    let out = run(&["verify", "prop1", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
}

#[test]
fn verify_unknown_suite_exits_two() {
    let out = run(&["verify", "thm99"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn json_format_sweep() {
    let cfg = config_file(CIRCLE_CFG);
    let out = run(&["sweep", "--config", cfg.path().to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn demo_sde_emits_samples() {
    let cfg = config_file(ATOMS_CFG);
    let out = run(&["demo-sde", "--config", cfg.path().to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["samples"].as_array().unwrap().len(), 50);
    assert!(v["sliced_wasserstein"].as_f64().unwrap() < 0.5);
}

#[test]
fn out_flag_writes_file() {
    let cfg = config_file(CIRCLE_CFG);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    let out = run(&[
        "sweep",
        "--config",
        cfg.path().to_str().unwrap(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("point_id,"));
}
