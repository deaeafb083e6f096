use drsopo::harness::{
    negative_control, run_experiment, run_repeats, summary_from_csv, ExperimentConfig, HarnessError, SUMMARY_HEADER,
};
use drsopo::optimizers::{trace_from_csv, Algorithm, Checkpoint};

fn small_config(out: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        "algorithm = practical-dvr-sopo\nmdp = bench3x2\nrepeats = 3\nenv_steps = 3000\ngrid_step = 500\nseed = 9\nout = {}\n",
        out.display()
    );
    ExperimentConfig::from_text(&text, "small.cfg").unwrap()
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg_b = small_config(b.path());
    cfg_b.parallel = !cfg_b.parallel;
    let out_a = run_experiment(&small_config(a.path())).unwrap();
    let out_b = run_experiment(&cfg_b).unwrap();
    assert_eq!(out_a.trace_paths.len(), 3);
    for (pa, pb) in out_a.trace_paths.iter().zip(&out_b.trace_paths) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }
    assert_eq!(std::fs::read(&out_a.summary_path).unwrap(), std::fs::read(&out_b.summary_path).unwrap());
}

#[test]
fn outputs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run_experiment(&cfg).unwrap();
    let summary = summary_from_csv(&std::fs::read_to_string(&out.summary_path).unwrap()).unwrap();
    assert_eq!(summary, out.summary);
    assert!(std::fs::read_to_string(&out.summary_path).unwrap().starts_with(SUMMARY_HEADER));
    assert_eq!(summary.last().unwrap().env_steps, 3000);
    for (r, path) in out.repeats.iter().zip(&out.trace_paths) {
        assert_eq!(trace_from_csv(&std::fs::read_to_string(path).unwrap()).unwrap(), r.records);
    }
    let ckpt = dir.path().join("checkpoint_practical-dvr-sopo_r0.json");
    let restored: Checkpoint = serde_json::from_str(&std::fs::read_to_string(ckpt).unwrap()).unwrap();
    assert_eq!(restored.to_state().theta, out.repeats[0].checkpoint.to_state().theta);
    let saved = std::fs::read_to_string(dir.path().join("config_practical-dvr-sopo.txt")).unwrap();
    assert_eq!(ExperimentConfig::from_text(&saved, "saved").unwrap(), cfg);
}

#[test]
fn zero_budget_records_only_the_initial_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    for algorithm in Algorithm::ALL {
        cfg.run.algorithm = algorithm;
        cfg.run.max_env_steps = Some(0);
        let repeats = run_repeats(&cfg).unwrap();
        for r in repeats {
            assert_eq!(r.records.len(), 1, "{algorithm}");
            assert_eq!((r.records[0].t, r.records[0].env_steps), (0, 0));
        }
    }
}

#[test]
fn repeats_use_distinct_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let repeats = run_repeats(&small_config(dir.path())).unwrap();
    assert_ne!(repeats[0].seed, repeats[1].seed);
    assert_ne!(repeats[0].records, repeats[1].records);
}

#[test]
fn invalid_configuration_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut cfg = small_config(&out);
    cfg.apply_override("eta=1.5").unwrap();
    assert!(run_experiment(&cfg).is_err());
    assert!(!out.exists());
}

#[test]
fn config_errors_carry_line_numbers() {
    let err = ExperimentConfig::from_text("seed = 1\n\nbatch_grad = many\n", "bad.cfg").unwrap_err();
    assert!(matches!(err, HarnessError::Config { line: 3, .. }), "{err}");
    assert!(err.to_string().starts_with("bad.cfg:3:"));
    let err = ExperimentConfig::from_text("seed = 1\nseed = 2\n", "dup.cfg").unwrap_err();
    assert!(err.to_string().starts_with("dup.cfg:2:"));
    let mut cfg = ExperimentConfig::default();
    assert!(cfg.apply_override("no_such_key=1").is_err());
}

#[test]
fn negative_control_catches_the_corrupted_fixture() {
    let checks = negative_control();
    assert!(checks.iter().all(|c| c.passed), "{:?}", checks.iter().map(|c| c.line()).collect::<Vec<_>>());
}
