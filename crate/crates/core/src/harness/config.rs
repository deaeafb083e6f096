use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::estimators::HessianVariant;
use crate::mdp::TabularMdp;
use crate::optimizers::{Algorithm, EvalMode, RunConfig};
use crate::policy::{FeatureMap, PolicyKind};

/// Where the MDP comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    Builtin(String),
    Fixture(PathBuf),
    Random { seed: u64, states: usize, actions: usize, reward_bound: f64 },
}

/// Benchmark-style fixed batches, or batches from the convergence theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    Table,
    Theory { epsilon: f64, hessian_lipschitz: f64, curvature: f64, gap: f64 },
}

/// How the reported return is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSetting {
    Exact,
    Rollouts(usize),
    Off,
}

impl EvalSetting {
    pub fn mode(self) -> EvalMode {
        match self {
            EvalSetting::Exact => EvalMode::Exact,
            EvalSetting::Rollouts(n) => EvalMode::Rollouts(n),
            EvalSetting::Off => EvalMode::Off,
        }
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalSetting::Exact => write!(f, "exact"),
            EvalSetting::Rollouts(n) => write!(f, "rollouts:{n}"),
            EvalSetting::Off => write!(f, "off"),
        }
    }
}

/// Feature choice shared by the Gaussian policy and the baseline; the state
/// count is filled in once the MDP is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Bias,
    OneHot,
    OneHotBias,
}

impl FeatureKind {
    pub fn build(self, n_states: usize) -> FeatureMap {
        match self {
            FeatureKind::Bias => FeatureMap::Bias,
            FeatureKind::OneHot => FeatureMap::OneHot { n_states },
            FeatureKind::OneHotBias => FeatureMap::OneHotBias { n_states },
        }
    }

    fn name(self) -> &'static str {
        match self {
            FeatureKind::Bias => "bias",
            FeatureKind::OneHot => "one-hot",
            FeatureKind::OneHotBias => "one-hot-bias",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bias" => Ok(FeatureKind::Bias),
            "one-hot" => Ok(FeatureKind::OneHot),
            "one-hot-bias" => Ok(FeatureKind::OneHotBias),
            _ => Err(format!("unknown features `{s}` (bias, one-hot, one-hot-bias)")),
        }
    }
}

/// A full experiment: problem, algorithm settings, budgets and outputs.
///
/// Read from a flat `key = value` file; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    /// Replaces the discount of the MDP when set.
    pub gamma: Option<f64>,
    /// Replaces the horizon of the MDP when set.
    pub horizon: Option<usize>,
    pub policy: PolicyKind,
    pub features: FeatureKind,
    pub action_dim: usize,
    pub baseline: Option<FeatureKind>,
    pub hessian: HessianVariant,
    /// Mixing weight of the Hessian estimator.
    pub mu: f64,
    pub mode: ScheduleMode,
    /// Algorithm, batches and step rules; `run.seed` is replaced per repeat.
    pub run: RunConfig,
    pub seed: u64,
    pub repeats: usize,
    pub out: PathBuf,
    pub grid_step: u64,
    pub eval: EvalSetting,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mdp: MdpSource::Builtin("bench5x3".into()),
            gamma: None,
            horizon: None,
            policy: PolicyKind::TabularSoftmax,
            features: FeatureKind::OneHot,
            action_dim: 1,
            baseline: None,
            hessian: HessianVariant::Standard,
            mu: 1.0 / 500.0,
            mode: ScheduleMode::Table,
            run: RunConfig {
                algorithm: Algorithm::PracticalDr,
                max_iterations: 1_000_000,
                max_env_steps: Some(200_000),
                ..RunConfig::default()
            },
            seed: 0,
            repeats: 10,
            out: PathBuf::from("runs"),
            grid_step: 5000,
            eval: EvalSetting::Exact,
            parallel: false,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean")),
    }
}

fn parse_optional<T: FromStr>(value: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn show_optional<T: fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

impl ExperimentConfig {
    pub fn from_text(text: &str, source_name: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HarnessError::Config { source_name: source_name.into(), line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            cfg.set(key, value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Applies a command-line `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), HarnessError> {
        let err = |message: String| HarnessError::Config { source_name: "--override".into(), line: 1, message };
        let (key, value) = assignment.split_once('=').ok_or_else(|| err(format!("expected `key=value`, found `{assignment}`")))?;
        self.set(key.trim(), value.trim()).map_err(err)
    }

    /// Sets one key; the error message omits the location.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let run = &mut self.run;
        match key {
            "algorithm" => run.algorithm = parse(value)?,
            "practical" => run.algorithm = run.algorithm.with_practical(parse_bool(value)?),
            "mdp" => {
                self.mdp = match value {
                    "random" => MdpSource::Random { seed: 0, states: 5, actions: 3, reward_bound: 1.0 },
                    v if TabularMdp::builtin(v).is_some() => MdpSource::Builtin(v.to_string()),
                    v => MdpSource::Fixture(PathBuf::from(v)),
                }
            }
            "mdp_seed" | "states" | "actions" | "reward_bound" => match &mut self.mdp {
                MdpSource::Random { seed, states, actions, reward_bound } => match key {
                    "mdp_seed" => *seed = parse(value)?,
                    "states" => *states = parse(value)?,
                    "actions" => *actions = parse(value)?,
                    _ => *reward_bound = parse(value)?,
                },
                _ => return Err(format!("`{key}` needs `mdp = random` earlier in the file")),
            },
            "gamma" => self.gamma = parse_optional(value)?,
            "horizon" => self.horizon = parse_optional(value)?,
            "policy" => self.policy = parse(value)?,
            "features" => self.features = parse(value)?,
            "action_dim" => self.action_dim = parse(value)?,
            "baseline" => self.baseline = parse_optional(value)?,
            "hessian" => self.hessian = parse(value)?,
            "mu" => {
                self.mu = parse(value)?;
                run.practical.mu = self.mu;
            }
            "mode" => {
                self.mode = match value {
                    "table" => ScheduleMode::Table,
                    "theory" => ScheduleMode::Theory {
                        epsilon: run.schedule.epsilon,
                        hessian_lipschitz: 1.0,
                        curvature: 1.0,
                        gap: 1.0,
                    },
                    _ => return Err(format!("unknown mode `{value}` (table, theory)")),
                }
            }
            "epsilon" | "hessian_lipschitz" | "curvature" | "gap" => match &mut self.mode {
                ScheduleMode::Theory { epsilon, hessian_lipschitz, curvature, gap } => {
                    let x: f64 = parse(value)?;
                    match key {
                        "epsilon" => *epsilon = x,
                        "hessian_lipschitz" => *hessian_lipschitz = x,
                        "curvature" => *curvature = x,
                        _ => *gap = x,
                    }
                }
                ScheduleMode::Table => return Err(format!("`{key}` needs `mode = theory` earlier in the file")),
            },
            "batch_grad" => {
                run.schedule.batch_grad = parse(value)?;
                run.practical.batch_grad = run.schedule.batch_grad;
            }
            "batch_hess" => {
                run.schedule.batch_hess = parse(value)?;
                run.practical.batch_hess = run.schedule.batch_hess;
            }
            "batch_anchor" => {
                run.schedule.batch_anchor = parse(value)?;
                run.practical.batch_anchor = run.schedule.batch_anchor;
            }
            "batch_correction" => {
                run.schedule.batch_correction = parse(value)?;
                run.practical.batch_correction = run.schedule.batch_correction;
            }
            "q" => {
                run.schedule.q = parse(value)?;
                run.practical.q = run.schedule.q;
            }
            "delta" => run.schedule.delta = parse(value)?,
            "delta_max" => run.practical.delta_max = parse(value)?,
            "eta" => run.practical.eta = parse(value)?,
            "lambda_init" => run.practical.lambda_init = parse(value)?,
            "lambda_inc" => run.practical.lambda_inc = parse(value)?,
            "lambda_dec" => run.practical.lambda_dec = parse(value)?,
            "lambda_min" => run.practical.lambda_min = parse(value)?,
            "lr" => run.lr = parse(value)?,
            "cg_tol" => run.cg_tol = parse(value)?,
            "cg_max_iter" => run.cg_max_iter = parse_optional(value)?,
            "iterations" => run.max_iterations = parse(value)?,
            "env_steps" => run.max_env_steps = parse_optional(value)?,
            "seed" => self.seed = parse(value)?,
            "repeats" => self.repeats = parse(value)?,
            "out" => self.out = PathBuf::from(value),
            "grid_step" => self.grid_step = parse(value)?,
            "eval" => {
                self.eval = match value {
                    "exact" => EvalSetting::Exact,
                    "off" => EvalSetting::Off,
                    v => match v.strip_prefix("rollouts:") {
                        Some(n) => EvalSetting::Rollouts(parse(n)?),
                        None => return Err(format!("unknown eval `{v}` (exact, rollouts:N, off)")),
                    },
                }
            }
            "parallel" => self.parallel = parse_bool(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Range and consistency checks; run before any output is written.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        let run = &self.run;
        match &self.mdp {
            MdpSource::Fixture(p) if !p.is_file() => return bad(format!("MDP fixture `{}` does not exist", p.display())),
            MdpSource::Random { states, actions, reward_bound, .. } => {
                if *states == 0 || *actions == 0 {
                    return bad("states and actions must be positive".into());
                }
                if !(*reward_bound > 0.0) {
                    return bad("reward_bound must be positive".into());
                }
            }
            _ => {}
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("gamma = {g} must lie in (0, 1)"));
            }
        }
        if self.horizon == Some(0) {
            return bad("horizon must be positive".into());
        }
        if self.action_dim == 0 {
            return bad("action_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad(format!("mu = {} must lie in [0, 1]", self.mu));
        }
        let s = &run.schedule;
        if s.batch_grad == 0 || s.batch_hess == 0 || s.batch_anchor == 0 || s.batch_correction == 0 || s.q == 0 {
            return bad("batch sizes and q must be positive".into());
        }
        if !(s.delta > 0.0) {
            return bad("delta must be positive".into());
        }
        run.practical.validate()?;
        if !(run.lr >= 0.0) || !(run.cg_tol > 0.0) {
            return bad("lr must be nonnegative and cg_tol positive".into());
        }
        if let ScheduleMode::Theory { epsilon, hessian_lipschitz, gap, .. } = self.mode {
            if !(epsilon > 0.0 && hessian_lipschitz > 0.0 && gap > 0.0) {
                return bad("epsilon, hessian_lipschitz and gap must be positive".into());
            }
            if self.policy != PolicyKind::TabularSoftmax {
                return bad("mode = theory needs the constants of tabular-softmax".into());
            }
        }
        if self.repeats == 0 || self.grid_step == 0 {
            return bad("repeats and grid_step must be positive".into());
        }
        if self.eval == EvalSetting::Exact && self.policy != PolicyKind::TabularSoftmax {
            return bad("eval = exact needs tabular-softmax; use rollouts:N".into());
        }
        if self.eval == EvalSetting::Rollouts(0) {
            return bad("eval rollouts must be positive".into());
        }
        Ok(())
    }

    /// Builds the MDP with the discount and horizon overrides applied.
    pub fn build_mdp(&self) -> Result<TabularMdp, HarnessError> {
        let mut mdp = match &self.mdp {
            MdpSource::Builtin(name) => {
                TabularMdp::builtin(name).ok_or_else(|| HarnessError::Invalid(format!("unknown builtin MDP `{name}`")))?
            }
            MdpSource::Fixture(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                TabularMdp::from_text(&text)?
            }
            MdpSource::Random { seed, states, actions, reward_bound } => {
                TabularMdp::random(*states, *actions, self.gamma.unwrap_or(0.95), *reward_bound, self.horizon.unwrap_or(20), *seed)?
            }
        };
        if let Some(g) = self.gamma {
            mdp = mdp.with_gamma(g)?;
        }
        if let Some(h) = self.horizon {
            mdp.horizon = h;
        }
        Ok(mdp)
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let run = &self.run;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("algorithm", run.algorithm.to_string());
        match &self.mdp {
            MdpSource::Builtin(n) => kv("mdp", n.clone()),
            MdpSource::Fixture(p) => kv("mdp", p.display().to_string()),
            MdpSource::Random { seed, states, actions, reward_bound } => {
                kv("mdp", "random".into());
                kv("mdp_seed", seed.to_string());
                kv("states", states.to_string());
                kv("actions", actions.to_string());
                kv("reward_bound", reward_bound.to_string());
            }
        }
        kv("gamma", show_optional(&self.gamma));
        kv("horizon", show_optional(&self.horizon));
        kv("policy", self.policy.to_string());
        kv("features", self.features.name().into());
        kv("action_dim", self.action_dim.to_string());
        kv("baseline", self.baseline.map(|b| b.name().to_string()).unwrap_or_else(|| "none".into()));
        kv("hessian", self.hessian.to_string());
        kv("mu", self.mu.to_string());
        match self.mode {
            ScheduleMode::Table => kv("mode", "table".into()),
            ScheduleMode::Theory { epsilon, hessian_lipschitz, curvature, gap } => {
                kv("mode", "theory".into());
                kv("epsilon", epsilon.to_string());
                kv("hessian_lipschitz", hessian_lipschitz.to_string());
                kv("curvature", curvature.to_string());
                kv("gap", gap.to_string());
            }
        }
        let s = &run.schedule;
        kv("batch_grad", s.batch_grad.to_string());
        kv("batch_hess", s.batch_hess.to_string());
        kv("batch_anchor", s.batch_anchor.to_string());
        kv("batch_correction", s.batch_correction.to_string());
        kv("q", s.q.to_string());
        kv("delta", s.delta.to_string());
        let p = &run.practical;
        kv("delta_max", p.delta_max.to_string());
        kv("eta", p.eta.to_string());
        kv("lambda_init", p.lambda_init.to_string());
        kv("lambda_inc", p.lambda_inc.to_string());
        kv("lambda_dec", p.lambda_dec.to_string());
        kv("lambda_min", p.lambda_min.to_string());
        kv("lr", run.lr.to_string());
        kv("cg_tol", run.cg_tol.to_string());
        kv("cg_max_iter", show_optional(&run.cg_max_iter));
        kv("iterations", run.max_iterations.to_string());
        kv("env_steps", show_optional(&run.max_env_steps));
        kv("seed", self.seed.to_string());
        kv("repeats", self.repeats.to_string());
        kv("out", self.out.display().to_string());
        kv("grid_step", self.grid_step.to_string());
        kv("eval", self.eval.to_string());
        kv("parallel", self.parallel.to_string());
        out
    }
}
