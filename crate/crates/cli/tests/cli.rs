use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(sub: &str, config: &str, dir: &Path, extra: &[&str]) -> i32 {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    Command::new(env!("CARGO_BIN_EXE_mfc-lab"))
        .args([sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(extra)
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn read_json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

const LQ: &str = "[problem]\nbuiltin = \"lq1d\"\n";

#[test]
fn validate_builtin_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("validate", &format!("{LQ}[validate]\nprobes = 50\n"), dir.path(), &[]), 0);
    let v = read_json(dir.path(), "validation.json");
    assert!(v["clauses"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    assert_eq!(files(dir.path()), vec!["validation.json"]);
}

#[test]
fn degenerate_control_cost_fails_validation_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
particles = 1000
[problem.custom]
lq = true
[problem.custom.dynamics]
b2 = 1.0
sigma0 = 1.0
[problem.custom.running]
qx = 1.0
q = 0.0
[problem.custom.terminal]
gx = 1.0
[validate]
probes = 50
"#;
    assert_eq!(run("solve", cfg, dir.path(), &[]), 4);
    assert_eq!(files(dir.path()), vec!["error.json"]);
    let e = read_json(dir.path(), "error.json");
    assert_eq!(e["exit_code"], 4);
    assert_eq!(e["error"], "validation");

    // without LQ side data the convexity clause is what fails
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg.replace("lq = true", "feedback = \"modified-hamiltonian\"");
    assert_eq!(run("solve", &cfg, dir.path(), &[]), 4);
    let e = read_json(dir.path(), "error.json");
    assert!(e["message"].as_str().unwrap().contains("convexity"), "{e}");
    assert_eq!(files(dir.path()), vec!["error.json"]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("validate", &format!("{LQ}[grid]\nladder = [8, 4]\n"), dir.path(), &[]), 2);
    let e = read_json(dir.path(), "error.json");
    assert!(e["message"].as_str().unwrap().contains("grid.ladder"));

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("validate", &format!("{LQ}bogus = 1\n"), dir.path(), &[]), 2);
    assert!(read_json(dir.path(), "error.json")["message"].as_str().unwrap().contains("bogus"));

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("holder", &format!("particles = 100\n{LQ}[grid]\nsteps = 6\n[validate]\nprobes = 20\n"), dir.path(), &[]), 2);
}

#[test]
fn numerical_failure_leaves_no_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/keep.txt"), "old").unwrap();
    let cfg = "particles = 500\n[problem]\nbuiltin = \"example1\"\n[grid]\nsteps = 8\n[fbsde]\nmax_iters = 1\ntol = 1e-14\n[validate]\nprobes = 20\n";
    assert_eq!(run("solve", cfg, dir.path(), &[]), 3);
    assert_eq!(files(dir.path()), vec!["error.json", "keep.txt"]);
    assert_eq!(read_json(dir.path(), "error.json")["error"], "numerical");
}

#[test]
fn solve_recovers_riccati_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("particles = 20000\n{LQ}[grid]\nsteps = 16\n[validate]\nprobes = 20\n");
    assert_eq!(run("solve", &cfg, dir.path(), &["--seed", "7"]), 0);
    let s = read_json(dir.path(), "solve.json");
    assert_eq!(s["seed"], 7);
    let slopes = s["slopes"].as_array().unwrap();
    assert_eq!(slopes.len(), 17);
    for v in &slopes[1..] {
        assert!((v.as_f64().unwrap() - 1.0).abs() < 0.05, "{v}");
    }
    assert!((s["riccati"]["value"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((s["cost"].as_f64().unwrap() - 0.5).abs() < 0.05);
}

#[test]
fn optimize_and_holder_write_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("particles = 2000\n{LQ}[grid]\nsteps = 8\n[validate]\nprobes = 20\n");
    assert_eq!(run("optimize", &cfg, dir.path(), &["--threads", "1"]), 0);
    let s = read_json(dir.path(), "summary.json");
    assert!(s["optimize"]["converged"].as_bool().unwrap());
    assert!(s["optimize"]["gap_certificate"].as_f64().unwrap() <= 1e-6);

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("holder", &cfg, dir.path(), &[]), 0);
    let h = read_json(dir.path(), "summary.json");
    assert_eq!(h["holder"]["p"], 2);
    assert!(h["holder"]["finite"].as_bool().unwrap());
}

fn numeric_columns(csv: &str) -> Vec<String> {
    // everything but wall time
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn rates_end_to_end_and_deterministic() {
    // reduced scale of the full run (M = 1e5, ladder 4..128), which the acceptance target covers
    let cfg = format!(
        "particles = 20000\nseeds = [1]\n{LQ}[grid]\nladder = [2, 4, 8, 16, 32]\n[validate]\nprobes = 20\n"
    );
    let a = tempfile::tempdir().unwrap();
    assert_eq!(run("rates", &cfg, a.path(), &[]), 0);
    let s = read_json(a.path(), "summary.json");
    assert!(s["fitted_order"].as_f64().unwrap() >= 0.45, "{}", s["fitted_order"]);
    assert_eq!(s["value"]["reference"], "riccati-oracle");
    let csv = fs::read_to_string(a.path().join("out/rates.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "level,N,mesh,metric,value,mc_std,wall_ms");
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert!(csv.ends_with('\n'));

    let b = tempfile::tempdir().unwrap();
    assert_eq!(run("rates", &cfg, b.path(), &[]), 0);
    let csv_b = fs::read_to_string(b.path().join("out/rates.csv")).unwrap();
    assert_eq!(numeric_columns(&csv), numeric_columns(&csv_b));
}
