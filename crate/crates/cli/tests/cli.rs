use std::path::Path;
use std::process::{Command, Output};

fn semibandit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semibandit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SEMIBANDIT_OUT")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        semibandit(&["gen", "random", "--K", "6", "-m", "2", "-s", "2", "--seed", "3", "-o", "inst.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("inst.policies.json").exists());

    let out = semibandit(&["diagnose", "inst.json", "inst.policies.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let gaps = report["gaps"].as_array().unwrap();
    assert_eq!(gaps.len(), 8);
    assert_eq!(gaps[report["best_policy"].as_u64().unwrap() as usize], 0.0);
    let p: f64 = report["p_star"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-9);
    for row in report["marginals"].as_array().unwrap() {
        let total: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 2.0).abs() < 1e-9);
    }
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = semibandit(&["gen", "list", "--K", "5", "-m", "2", "-s", "2", "--seed", "9", "-o", name], dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for (x, y) in [("a.json", "b.json"), ("a.policies.json", "b.policies.json")] {
        assert_eq!(std::fs::read(dir.path().join(x)).unwrap(), std::fs::read(dir.path().join(y)).unwrap());
    }
}

#[test]
fn gen_lower_bound_with_planted_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = semibandit(
        &[
            "gen",
            "lower-bound",
            "--K",
            "8",
            "-m",
            "2",
            "-s",
            "4",
            "--eps",
            "0.1",
            "--good",
            "1,5",
            "-o",
            "lb.json",
            "--policies",
            "all.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = semibandit(&["diagnose", "lb.json", "all.json"], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // 28 subsets of 8 actions; {1, 5} sits at index 10 in lexicographic order
    assert_eq!(report["gaps"].as_array().unwrap().len(), 28);
    assert_eq!(report["best_policy"], 10);

    let bad = semibandit(
        &["gen", "lower-bound", "--K", "8", "-m", "5", "-s", "4", "--eps", "0.1", "-o", "x.json"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"kind": "pac", "instance": {"type": "random", "K": 6, "m": 2, "s": 2, "n_contexts": 3, "n_policies": 4},
        "pac": {"N1": 200, "N2": 200, "T": 20}, "eps": 0.3, "trials": 3, "seed": 1, "output_dir": "results"}"#,
    )
    .unwrap();
    let out = semibandit(&["run", "cfg.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["pac_trials.csv", "pac_aggregates.csv", "pac_report.json"] {
        assert!(dir.path().join("results").join(file).exists(), "{file}");
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"kind": "pac", "trials": 0}"#).unwrap();
    std::fs::write(dir.path().join("unknown.json"), r#"{"kind": "pac", "bogus": 1}"#).unwrap();
    for args in [&["run", "bad.json"][..], &["run", "unknown.json"], &["run", "missing.json"], &["frobnicate"]] {
        let out = semibandit(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn failed_trials_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = semibandit(&["gen", "random", "--K", "5", "-m", "2", "-s", "2", "-o", "inst.json"], dir.path());
    assert!(out.status.success());
    std::fs::write(dir.path().join("losses.csv"), "x,l0,l1,l2,l3,l4\n0,0,0,-1,0,0\n").unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"kind": "regret", "instance": {"type": "files", "instance": "inst.json", "policies": "inst.policies.json"},
        "regret": {"T": 20, "losses": "losses.csv"}, "trials": 1, "seed": 0, "output_dir": "out"}"#,
    )
    .unwrap();
    let out = semibandit(&["run", "cfg.json"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("E_EXHAUSTED"));
}
