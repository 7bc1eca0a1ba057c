use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beamform-ee"))
}

fn run_ok(args: &[&str], out: &Path) -> String {
    let status = bin().args(args).arg("--out").arg(out).status().unwrap();
    assert!(status.success(), "{args:?}");
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn convergence_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["convergence", "--seeds", "2", "--max-iters", "3", "--seed-base", "5"];
    let a = run_ok(&args, &dir.path().join("a.csv"));
    let b = run_ok(&args, &dir.path().join("b.csv"));
    assert_eq!(a, b);
    let seq = run_ok(&[&args[..], &["--sequential"]].concat(), &dir.path().join("c.csv"));
    assert_eq!(a, seq);
    assert!(dir.path().join("a.summary.csv").exists());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 3);
    // distinct seeds give distinct traces
    let ee = |seed: &str| -> Vec<String> {
        lines[1..].iter().filter(|l| l.split(',').nth(1) == Some(seed)).map(|l| l.split(',').nth(7).unwrap().to_string()).collect()
    };
    assert_ne!(ee("5"), ee("6"));
}

#[test]
fn single_iteration_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_ok(&["convergence", "--seeds", "1", "--max-iters", "1"], &dir.path().join("t.csv"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn infeasible_sweep_point_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_ok(&["sweep-rate", "--seeds", "1", "--grid", "36,1000000", "--max-iters", "2"], &dir.path().join("s.csv"));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(",36.0,") && !rows[0].ends_with("infeasible"));
    assert!(rows[1].ends_with(",,,,,infeasible"));
}

#[test]
fn scenario_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    std::fs::write(&scenario, r#"{"N": 8, "M": 1, "rate_target_mbps": 10}"#).unwrap();
    let text = run_ok(&["single", "--seeds", "1", "--max-iters", "2", "--scenario", scenario.to_str().unwrap()], &dir.path().join("o.csv"));
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("single,0,2,joint,1,8,10.0,"), "{row}");
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let missing = bin().args(["single", "--scenario", "/nonexistent.json", "--out"]).arg(&out).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    let empty_grid = bin().args(["sweep-rate", "--seeds", "1", "--out"]).arg(&out).output().unwrap();
    assert!(!empty_grid.status.success());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"N": 1}"#).unwrap();
    let infeasible_topology = bin().args(["single", "--seeds", "1", "--scenario", bad.to_str().unwrap(), "--out"]).arg(&out).output().unwrap();
    assert!(!infeasible_topology.status.success());
}
