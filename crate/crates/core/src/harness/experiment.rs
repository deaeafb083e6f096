use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, ScheduleMode};
use super::HarnessError;
use crate::estimators::TheoryConstants;
use crate::mdp::TabularMdp;
use crate::numerics::{mix_seed, Vector};
use crate::optimizers::{
    run, theory_schedule, trace_to_csv, Algorithm, Checkpoint, ExactSupport, MdpOracle, RunConfig, ScheduleVariant,
    TraceRecord,
};
use crate::policy::{LinearGaussian, Policy, PolicyKind, TabularSoftmax};

/// One seeded repeat.
#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub checkpoint: Checkpoint,
    /// Index of the uniformly drawn returned iterate.
    pub sampled_index: u64,
}

/// Return statistics across repeats at one point of the env-step grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub env_steps: u64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub const SUMMARY_HEADER: &str = "env_steps,mean_return,std_return,n";

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub repeats: Vec<RepeatResult>,
    pub summary: Vec<SummaryRow>,
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

fn schedule_variant(algorithm: Algorithm) -> ScheduleVariant {
    match algorithm {
        Algorithm::Fdtr => ScheduleVariant::Fdtr,
        a if a.variance_reduced() => ScheduleVariant::Dvr,
        _ => ScheduleVariant::Dr,
    }
}

fn resolved_run_config(cfg: &ExperimentConfig, mdp: &TabularMdp, dim: usize) -> Result<RunConfig, HarnessError> {
    let mut run_cfg = cfg.run;
    if let ScheduleMode::Theory { epsilon, hessian_lipschitz, curvature, gap } = cfg.mode {
        let constants =
            TheoryConstants::for_policy(cfg.policy, mdp, mdp.horizon, hessian_lipschitz, curvature, gap)?;
        let schedule = theory_schedule(&constants, epsilon, dim, schedule_variant(run_cfg.algorithm))?;
        run_cfg.max_iterations = run_cfg.max_iterations.min(schedule.iterations);
        run_cfg.schedule = schedule;
    }
    Ok(run_cfg)
}

fn run_one<P: ExactSupport>(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    policy: P,
    run_cfg: RunConfig,
    repeat: usize,
) -> Result<RepeatResult, HarnessError> {
    let seed = mix_seed(cfg.seed, repeat as u64);
    let dim = policy.dim();
    let mut oracle = MdpOracle::new(mdp.clone(), policy, mdp.horizon, seed);
    oracle.mu = cfg.mu;
    oracle.variant = cfg.hessian;
    oracle.baseline_features = cfg.baseline.map(|b| b.build(mdp.n_states));
    oracle.eval = cfg.eval.mode();
    let run_cfg = RunConfig { seed, ..run_cfg };
    let out = run(&mut oracle, Vector::zeros(dim), &run_cfg)?;
    Ok(RepeatResult {
        repeat,
        seed,
        records: out.records,
        checkpoint: Checkpoint::from_state(run_cfg.algorithm, &out.state),
        sampled_index: out.sampled_index,
    })
}

/// Runs every repeat without touching the file system. Repeat `k` uses the
/// seed `mix_seed(seed, k)`, so results do not depend on scheduling.
pub fn run_repeats(cfg: &ExperimentConfig) -> Result<Vec<RepeatResult>, HarnessError> {
    cfg.validate()?;
    let mdp = cfg.build_mdp()?;
    let softmax = TabularSoftmax::new(mdp.n_states, mdp.n_actions);
    let gaussian = LinearGaussian { features: cfg.features.build(mdp.n_states), action_dim: cfg.action_dim };
    let dim = match cfg.policy {
        PolicyKind::TabularSoftmax => softmax.dim(),
        PolicyKind::LinearGaussian => gaussian.dim(),
    };
    let run_cfg = resolved_run_config(cfg, &mdp, dim)?;
    let job = |k: usize| match cfg.policy {
        PolicyKind::TabularSoftmax => run_one(cfg, &mdp, softmax, run_cfg, k),
        PolicyKind::LinearGaussian => run_one(cfg, &mdp, gaussian, run_cfg, k),
    };
    if cfg.parallel {
        (0..cfg.repeats).into_par_iter().map(job).collect()
    } else {
        (0..cfg.repeats).map(job).collect()
    }
}

/// Reported return at `x` env steps, linearly interpolated between records
/// and held constant outside the recorded range.
pub fn interpolate_return(records: &[TraceRecord], x: f64) -> Option<f64> {
    let points: Vec<(f64, f64)> =
        records.iter().filter_map(|r| r.mean_return.map(|m| (r.env_steps as f64, m))).collect();
    let first = points.first()?;
    if x <= first.0 {
        return Some(first.1);
    }
    let after = points.iter().position(|p| p.0 > x);
    match after {
        None => points.last().map(|p| p.1),
        Some(i) => {
            let (x0, y0) = points[i - 1];
            let (x1, y1) = points[i];
            Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
        }
    }
}

/// Mean and sample standard deviation of the interpolated returns on the
/// grid `0, step, 2·step, …, end`.
pub fn summarize(traces: &[&[TraceRecord]], grid_step: u64, end: u64) -> Vec<SummaryRow> {
    let mut grid: Vec<u64> = (0..).map(|i| i * grid_step.max(1)).take_while(|&x| x < end).collect();
    grid.push(end);
    grid.into_iter()
        .filter_map(|x| {
            let values: Vec<f64> = traces.iter().filter_map(|t| interpolate_return(t, x as f64)).collect();
            let n = values.len();
            if n == 0 {
                return None;
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            Some(SummaryRow { env_steps: x, mean, std, n })
        })
        .collect()
}

/// Env steps at which the mean curve first reaches `target`, linearly
/// interpolated between grid points.
pub fn crossing(summary: &[SummaryRow], target: f64) -> Option<f64> {
    let i = summary.iter().position(|r| r.mean >= target)?;
    if i == 0 {
        return Some(summary[0].env_steps as f64);
    }
    let (a, b) = (summary[i - 1], summary[i]);
    let frac = (target - a.mean) / (b.mean - a.mean);
    Some(a.env_steps as f64 + frac * (b.env_steps - a.env_steps) as f64)
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.env_steps, r.mean, r.std, r.n);
    }
    out
}

pub fn summary_from_csv(text: &str) -> Result<Vec<SummaryRow>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(SUMMARY_HEADER) {
        return Err("missing summary header".into());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let cols: Vec<&str> = l.trim_end().split(',').collect();
            let bad = |what: &str| format!("row {}: bad {what}", i + 1);
            if cols.len() != 4 {
                return Err(bad("column count"));
            }
            Ok(SummaryRow {
                env_steps: cols[0].parse().map_err(|_| bad("env_steps"))?,
                mean: cols[1].parse().map_err(|_| bad("mean_return"))?,
                std: cols[2].parse().map_err(|_| bad("std_return"))?,
                n: cols[3].parse().map_err(|_| bad("n"))?,
            })
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Runs the experiment and writes, under `cfg.out`, the resolved
/// configuration, one trace and checkpoint per repeat and the summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let repeats = run_repeats(cfg)?;
    let algo = cfg.run.algorithm.name();
    std::fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    write(&cfg.out.join(format!("config_{algo}.txt")), &cfg.to_text())?;
    let mut trace_paths = Vec::with_capacity(repeats.len());
    for r in &repeats {
        let path = cfg.out.join(format!("trace_{algo}_r{}.csv", r.repeat));
        write(&path, &trace_to_csv(&r.records))?;
        trace_paths.push(path);
        let ckpt = cfg.out.join(format!("checkpoint_{algo}_r{}.json", r.repeat));
        write(&ckpt, &serde_json::to_string_pretty(&r.checkpoint)?)?;
    }
    let end = cfg
        .run
        .max_env_steps
        .unwrap_or_else(|| repeats.iter().filter_map(|r| r.records.last()).map(|x| x.env_steps).max().unwrap_or(0));
    let traces: Vec<&[TraceRecord]> = repeats.iter().map(|r| r.records.as_slice()).collect();
    let summary = summarize(&traces, cfg.grid_step, end);
    let summary_path = cfg.out.join(format!("summary_{algo}.csv"));
    write(&summary_path, &summary_to_csv(&summary))?;
    Ok(ExperimentOutput { repeats, summary, trace_paths, summary_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(env_steps: u64, ret: f64) -> TraceRecord {
        TraceRecord {
            t: 0,
            env_steps,
            mean_return: Some(ret),
            grad_norm: None,
            exact_grad_norm: None,
            lambda: None,
            rho: None,
            accepted: true,
            min_eig: None,
        }
    }

    #[test]
    fn interpolation_and_hold() {
        let t = vec![rec(0, 1.0), rec(10, 3.0), rec(10, 4.0), rec(30, 0.0)];
        assert_eq!(interpolate_return(&t, 0.0), Some(1.0));
        assert_eq!(interpolate_return(&t, 5.0), Some(2.0));
        assert_eq!(interpolate_return(&t, 20.0), Some(2.0));
        assert_eq!(interpolate_return(&t, 99.0), Some(0.0));
    }

    #[test]
    fn summary_statistics_and_crossing() {
        let a = vec![rec(0, 0.0), rec(100, 2.0)];
        let b = vec![rec(0, 0.0), rec(100, 4.0)];
        let rows = summarize(&[&a, &b], 40, 100);
        assert_eq!(rows.iter().map(|r| r.env_steps).collect::<Vec<_>>(), vec![0, 40, 80, 100]);
        assert!((rows[3].mean - 3.0).abs() < 1e-12);
        assert!((rows[3].std - 2f64.sqrt()).abs() < 1e-12);
        assert!((crossing(&rows, 1.5).unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(crossing(&rows, 5.0), None);
        assert_eq!(summary_from_csv(&summary_to_csv(&rows)).unwrap(), rows);
    }
}
