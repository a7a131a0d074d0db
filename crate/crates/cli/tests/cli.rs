use std::path::Path;
use std::process::{Command, Output};

fn netopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = netopt(args);
    assert!(
        out.status.success(),
        "netopt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_oracle_run_compare() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("sat.json");
    ok(&["generate", "satellite", "--seed", "3", "--agents", "4", "--horizon", "4", "--out", s(&prob)]);
    let oracle = ok(&["oracle", "--problem", s(&prob)]);
    let v: serde_json::Value = serde_json::from_str(&oracle).unwrap();
    assert!(v["objective"].is_number());

    let mut summaries = Vec::new();
    for alg in ["jacobi", "gs"] {
        let trace = dir.path().join(format!("{alg}.csv"));
        let summary = dir.path().join(format!("{alg}.json"));
        ok(&[
            "run", alg, "--problem", s(&prob), "--eps", "1e-4", "--trace", s(&trace), "--summary", s(&summary),
        ]);
        let text = std::fs::read_to_string(&trace).unwrap();
        assert!(text.starts_with("iter,primal_obj,residual,dist_to_oracle,dual_value,messages\n"));
        let sum: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
        assert_eq!(sum["status"], "Converged");
        summaries.push(summary);
    }
    let report = ok(&["compare", s(&summaries[0]), s(&summaries[1]), "--json"]);
    assert!(serde_json::from_str::<serde_json::Value>(&report).is_ok());
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for k in 0..2 {
        let prob = dir.path().join(format!("mhe{k}.json"));
        let trace = dir.path().join(format!("t{k}.csv"));
        ok(&["generate", "mhe", "--seed", "5", "--agents", "4", "--horizon", "4", "--out", s(&prob)]);
        ok(&["run", "dgp2", "--problem", s(&prob), "--eps", "1e-2", "--seed", "5", "--trace", s(&trace)]);
        texts.push((std::fs::read(&prob).unwrap(), std::fs::read(&trace).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn cap_reached_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("ctl.json");
    let trace = dir.path().join("t.csv");
    ok(&["generate", "control", "--seed", "2", "--agents", "3", "--horizon", "3", "--out", s(&prob)]);
    ok(&["run", "ds", "--problem", s(&prob), "--eps", "1e-3", "--max-iter", "1", "--trace", s(&trace)]);
    let rows = std::fs::read_to_string(&trace).unwrap().lines().count();
    assert_eq!(rows, 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("sat.json");
    ok(&["generate", "satellite", "--seed", "1", "--agents", "4", "--horizon", "3", "--out", s(&prob)]);
    // consensus method on a CCDC instance
    assert_eq!(netopt(&["run", "dgp1", "--problem", s(&prob), "--eps", "1e-3"]).status.code(), Some(3));
    assert_eq!(netopt(&["run", "gs", "--problem", "/nonexistent/p.json", "--eps", "1e-3"]).status.code(), Some(1));
    assert_eq!(netopt(&["bench", "9"]).status.code(), Some(2));
    assert_eq!(netopt(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bench_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t3.csv");
    let text = ok(&["bench", "3", "--seed", "1", "--csv", s(&csv)]);
    assert!(text.contains("gs"));
    let out = std::fs::read_to_string(&csv).unwrap();
    assert!(out.starts_with("table,seed,M,N,sigma,algorithm,"));
    assert_eq!(out.lines().count(), 7);
}
