use std::process::{Command, Output};

fn sopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sopo")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn schedule_prints_the_unit_constant_table() {
    let o = sopo(&["schedule", "--epsilon", "0.01"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("batch_grad         1440000"), "{text}");
    assert!(text.contains("iterations         24000"));
}

#[test]
fn schedule_reads_constants_and_rejects_large_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    std::fs::write(&path, "g_h = 0.2\n").unwrap();
    let o = sopo(&["schedule", "--epsilon", "0.04", "--variant", "dvr", "--constants", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = sopo(&["schedule", "--epsilon", "0.001", "--variant", "dvr", "--constants", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("batch_anchor"));
}

#[test]
fn run_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sopo(&[
        "run",
        "--algo",
        "practical-dr-sopo",
        "--algo",
        "reinforce",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "mdp=bench3x2",
        "--override",
        "repeats=2",
        "--override",
        "env_steps=2000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["summary_practical-dr-sopo.csv", "summary_reinforce.csv", "trace_reinforce_r1.csv", "config_reinforce.txt"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let config = std::fs::read_to_string(out.join("config_reinforce.txt")).unwrap();
    assert!(config.contains("seed = 3"), "{config}");
}

#[test]
fn configuration_errors_exit_with_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sopo(&["run", "--out", out.to_str().unwrap(), "--override", "eta=2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nbatch_grad = -4\n").unwrap();
    let o = sopo(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.cfg:2:"));

    assert_eq!(sopo(&["run", "--algo", "no-such-method"]).status.code(), Some(1));
    assert_eq!(sopo(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn shipped_benchmark_config_is_valid() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/bench5x3.cfg");
    let dir = tempfile::tempdir().unwrap();
    let o = sopo(&["run", "--config", path, "--out", dir.path().to_str().unwrap(), "--override", "env_steps=0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_solver_scope_passes_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = sopo(&["oracle", "solver", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS drtr-grid-gap")));
    let report = std::fs::read_to_string(dir.path().join("oracle_solver.json")).unwrap();
    assert!(report.contains("\"passed\": true"));
}
