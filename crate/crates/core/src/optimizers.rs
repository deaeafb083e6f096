//! Stochastic second-order policy optimizers, first-order baselines and
//! the theory-driven parameter schedules.
//!
//! Every algorithm talks to the problem through an [`Oracle`], so the same
//! step code runs on sampled MDP rollouts and on exact closures.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    fit_linear_baseline, havr_correction, mean_cost, pgt_gradient, EstimatorError, HessianVariant, HvpBatch,
    LinearBaseline, TheoryConstants,
};
use crate::mdp::{dp_gradient, exact_objective, sample_batch, MdpError, SampleStream, TabularMdp};
use crate::numerics::{ceil_count, gauss_legendre_unit, CompensatedVec, Vector};
use crate::policy::{FeatureMap, LinearGaussian, Policy, TabularSoftmax};
use crate::trust_region::{solve_fdtr_steihaug, subspace_step, StepRule, SubspaceStep, TrustRegionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    TrustRegion(#[from] TrustRegionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("epsilon {epsilon} exceeds G_H²/4 = {limit}")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// An oracle answer together with what it cost.
#[derive(Debug, Clone)]
pub struct Sampled<T> {
    pub value: T,
    /// Sum of the discounted costs of the rollouts drawn at the query point.
    pub cost_sum: f64,
    /// Number of such rollouts (zero when none were drawn at that point).
    pub cost_count: usize,
    pub env_steps: u64,
}

impl<T> Sampled<T> {
    fn exact(value: T, cost: Option<f64>) -> Self {
        Self { value, cost_sum: cost.unwrap_or(0.0), cost_count: cost.is_some() as usize, env_steps: 0 }
    }
}

/// A frozen Hessian estimate.
pub trait HessianAction {
    fn apply(&self, v: &Vector) -> Vector;
    fn apply_symmetric(&self, v: &Vector) -> Vector;
}

impl<P: Policy> HessianAction for HvpBatch<P> {
    fn apply(&self, v: &Vector) -> Vector {
        HvpBatch::apply(self, v)
    }

    fn apply_symmetric(&self, v: &Vector) -> Vector {
        HvpBatch::apply_symmetric(self, v)
    }
}

/// Source of objective, gradient and Hessian information.
pub trait Oracle {
    type Hessian: HessianAction;

    fn dim(&self) -> usize;

    /// Gradient estimate from `m` rollouts at `theta`.
    fn gradient(&mut self, theta: &Vector, m: usize) -> Result<Sampled<Vector>, OptimizerError>;

    /// Hessian estimate from `m` rollouts at `theta`.
    fn hessian(&mut self, theta: &Vector, m: usize) -> Result<Sampled<Self::Hessian>, OptimizerError>;

    /// Estimate of `∇J(curr) − ∇J(prev)` from `m` Hessian actions.
    fn gradient_difference(&mut self, prev: &Vector, curr: &Vector, m: usize) -> Result<Sampled<Vector>, OptimizerError>;

    /// Objective estimate from `m` fresh rollouts.
    fn evaluate(&mut self, theta: &Vector, m: usize) -> Result<Sampled<f64>, OptimizerError>;

    /// Objective used for reporting; never counted as environment steps.
    fn monitor(&mut self, theta: &Vector) -> Option<f64>;

    fn exact_gradient(&self, _theta: &Vector) -> Option<Vector> {
        None
    }
}

/// Policies for which the exact DP oracles apply.
pub trait ExactSupport: Policy {
    fn exact_objective(&self, mdp: &TabularMdp, theta: &Vector, horizon: usize) -> Option<f64>;
    fn exact_gradient(&self, mdp: &TabularMdp, theta: &Vector, horizon: usize) -> Option<Vector>;
}

impl ExactSupport for TabularSoftmax {
    fn exact_objective(&self, mdp: &TabularMdp, theta: &Vector, horizon: usize) -> Option<f64> {
        exact_objective(mdp, self, theta, horizon).ok()
    }

    fn exact_gradient(&self, mdp: &TabularMdp, theta: &Vector, horizon: usize) -> Option<Vector> {
        dp_gradient(mdp, self, theta, horizon).ok()
    }
}

impl ExactSupport for LinearGaussian {
    fn exact_objective(&self, _: &TabularMdp, _: &Vector, _: usize) -> Option<f64> {
        None
    }

    fn exact_gradient(&self, _: &TabularMdp, _: &Vector, _: usize) -> Option<Vector> {
        None
    }
}

/// How the reported return is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Exact objective by dynamic programming.
    Exact,
    /// Mean of this many rollouts from a dedicated stream.
    Rollouts(usize),
    Off,
}

/// Sampling oracle over a tabular MDP.
pub struct MdpOracle<P: Policy> {
    pub mdp: TabularMdp,
    pub policy: P,
    pub horizon: usize,
    pub mu: f64,
    pub variant: HessianVariant,
    /// Features of the baseline refitted on every gradient batch and used on
    /// the next one.
    pub baseline_features: Option<FeatureMap>,
    pub eval: EvalMode,
    pub parallel: bool,
    stream: SampleStream,
    monitor_stream: SampleStream,
    baseline: Option<LinearBaseline>,
}

impl<P: ExactSupport> MdpOracle<P> {
    pub fn new(mdp: TabularMdp, policy: P, horizon: usize, seed: u64) -> Self {
        Self {
            mdp,
            policy,
            horizon,
            mu: 1.0,
            variant: HessianVariant::Standard,
            baseline_features: None,
            eval: EvalMode::Exact,
            parallel: false,
            stream: SampleStream::new(crate::numerics::mix_seed(seed, 1)),
            monitor_stream: SampleStream::new(crate::numerics::mix_seed(seed, 2)),
            baseline: None,
        }
    }

    pub fn stream_position(&self) -> u64 {
        self.stream.next
    }

    fn steps(&self, m: usize) -> u64 {
        (m * self.horizon) as u64
    }
}

impl<P: ExactSupport> Oracle for MdpOracle<P> {
    type Hessian = HvpBatch<P>;

    fn dim(&self) -> usize {
        self.policy.dim()
    }

    fn gradient(&mut self, theta: &Vector, m: usize) -> Result<Sampled<Vector>, OptimizerError> {
        let trajs = sample_batch(&self.mdp, &self.policy, theta, self.horizon, m, &mut self.stream, self.parallel);
        let gamma = self.mdp.gamma;
        let mut acc = CompensatedVec::zeros(self.policy.dim());
        for t in &trajs {
            acc.add_scaled(1.0 / m as f64, &pgt_gradient(&self.policy, t, theta, gamma, self.baseline.as_ref()));
        }
        if let Some(features) = self.baseline_features {
            self.baseline = Some(fit_linear_baseline(&trajs, gamma, features)?);
        }
        Ok(Sampled {
            value: acc.value(),
            cost_sum: mean_cost(&trajs, gamma) * m as f64,
            cost_count: m,
            env_steps: self.steps(m),
        })
    }

    fn hessian(&mut self, theta: &Vector, m: usize) -> Result<Sampled<HvpBatch<P>>, OptimizerError> {
        let trajs = sample_batch(&self.mdp, &self.policy, theta, self.horizon, m, &mut self.stream, self.parallel);
        let cost_sum = mean_cost(&trajs, self.mdp.gamma) * m as f64;
        let batch = HvpBatch::new(&self.policy, trajs, theta, self.mdp.gamma, self.mu, self.variant)?;
        Ok(Sampled { value: batch, cost_sum, cost_count: m, env_steps: self.steps(m) })
    }

    fn gradient_difference(&mut self, prev: &Vector, curr: &Vector, m: usize) -> Result<Sampled<Vector>, OptimizerError> {
        let est = havr_correction(
            prev,
            curr,
            &self.policy,
            &self.mdp,
            self.horizon,
            m,
            &mut self.stream,
            self.mu,
            self.parallel,
        )?;
        Ok(Sampled { value: est.xi, cost_sum: 0.0, cost_count: 0, env_steps: est.env_steps })
    }

    fn evaluate(&mut self, theta: &Vector, m: usize) -> Result<Sampled<f64>, OptimizerError> {
        let trajs = sample_batch(&self.mdp, &self.policy, theta, self.horizon, m, &mut self.stream, self.parallel);
        let mean = mean_cost(&trajs, self.mdp.gamma);
        Ok(Sampled { value: mean, cost_sum: mean * m as f64, cost_count: m, env_steps: self.steps(m) })
    }

    fn monitor(&mut self, theta: &Vector) -> Option<f64> {
        match self.eval {
            EvalMode::Exact => self.policy.exact_objective(&self.mdp, theta, self.horizon),
            EvalMode::Rollouts(n) => {
                let trajs =
                    sample_batch(&self.mdp, &self.policy, theta, self.horizon, n, &mut self.monitor_stream, self.parallel);
                Some(mean_cost(&trajs, self.mdp.gamma))
            }
            EvalMode::Off => None,
        }
    }

    fn exact_gradient(&self, theta: &Vector) -> Option<Vector> {
        self.policy.exact_gradient(&self.mdp, theta, self.horizon)
    }
}

type ObjectiveFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
type HvpFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;

/// Deterministic oracle built from closures; batch sizes are ignored and no
/// environment steps are charged.
#[derive(Clone)]
pub struct ExactOracle {
    dim: usize,
    objective: ObjectiveFn,
    gradient: GradientFn,
    hvp: HvpFn,
    /// Quadrature nodes for gradient differences.
    pub nodes: usize,
}

impl fmt::Debug for ExactOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactOracle").field("dim", &self.dim).field("nodes", &self.nodes).finish()
    }
}

/// Exact Hessian action at a fixed point.
#[derive(Clone)]
pub struct ExactHessian {
    theta: Vector,
    hvp: HvpFn,
}

impl HessianAction for ExactHessian {
    fn apply(&self, v: &Vector) -> Vector {
        (self.hvp)(&self.theta, v)
    }

    fn apply_symmetric(&self, v: &Vector) -> Vector {
        (self.hvp)(&self.theta, v)
    }
}

impl ExactOracle {
    pub fn new<F, G, H>(dim: usize, objective: F, gradient: G, hvp: H) -> Self
    where
        F: Fn(&Vector) -> f64 + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
        H: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self { dim, objective: Arc::new(objective), gradient: Arc::new(gradient), hvp: Arc::new(hvp), nodes: 32 }
    }

    /// Exact objective and gradient of a softmax policy on `mdp`; the Hessian
    /// action is a central difference of the analytic gradient.
    pub fn from_mdp(mdp: TabularMdp, policy: TabularSoftmax, horizon: usize) -> Self {
        let mdp = Arc::new(mdp);
        let (m1, m2, m3) = (mdp.clone(), mdp.clone(), mdp);
        let grad = move |m: &TabularMdp, t: &Vector| dp_gradient(m, &policy, t, horizon).expect("DP-sized MDP");
        Self::new(
            policy.dim(),
            move |t| exact_objective(&m1, &policy, t, horizon).expect("DP-sized MDP"),
            move |t| grad(&m2, t),
            move |t, v| {
                let h = crate::mdp::FD_STEP;
                let nv = v.norm();
                if nv == 0.0 {
                    return Vector::zeros(v.len());
                }
                let u = v / nv;
                (grad(&m3, &(t + &u * h)) - grad(&m3, &(t - &u * h))) * (nv / (2.0 * h))
            },
        )
    }

    pub fn objective(&self, theta: &Vector) -> f64 {
        (self.objective)(theta)
    }

    pub fn gradient_at(&self, theta: &Vector) -> Vector {
        (self.gradient)(theta)
    }

    pub fn hvp_at(&self, theta: &Vector, v: &Vector) -> Vector {
        (self.hvp)(theta, v)
    }
}

impl Oracle for ExactOracle {
    type Hessian = ExactHessian;

    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&mut self, theta: &Vector, _m: usize) -> Result<Sampled<Vector>, OptimizerError> {
        Ok(Sampled::exact((self.gradient)(theta), Some((self.objective)(theta))))
    }

    fn hessian(&mut self, theta: &Vector, _m: usize) -> Result<Sampled<ExactHessian>, OptimizerError> {
        Ok(Sampled::exact(ExactHessian { theta: theta.clone(), hvp: self.hvp.clone() }, None))
    }

    fn gradient_difference(&mut self, prev: &Vector, curr: &Vector, _m: usize) -> Result<Sampled<Vector>, OptimizerError> {
        let v = curr - prev;
        let mut acc = CompensatedVec::zeros(self.dim);
        if v.iter().any(|x| *x != 0.0) {
            for (a, w) in gauss_legendre_unit(self.nodes) {
                acc.add_scaled(w, &(self.hvp)(&(prev + &v * a), &v));
            }
        }
        Ok(Sampled::exact(acc.value(), None))
    }

    fn evaluate(&mut self, theta: &Vector, _m: usize) -> Result<Sampled<f64>, OptimizerError> {
        let j = (self.objective)(theta);
        Ok(Sampled::exact(j, Some(j)))
    }

    fn monitor(&mut self, theta: &Vector) -> Option<f64> {
        Some((self.objective)(theta))
    }

    fn exact_gradient(&self, theta: &Vector) -> Option<Vector> {
        Some((self.gradient)(theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Basic dimension-reduced method with a fixed radius.
    DrSopo,
    /// Basic method with the Hessian-aided gradient recursion.
    DvrSopo,
    /// Ratio-tested, radius-free dimension-reduced method.
    PracticalDr,
    /// Ratio-tested method with the gradient recursion.
    PracticalDvr,
    /// Full-dimension trust region solved by truncated CG.
    Fdtr,
    /// Full-dimension trust region with the gradient recursion.
    FdtrVr,
    /// Normalized policy-gradient steps.
    Reinforce,
    /// Normalized steps on the recursive gradient estimate.
    Hapg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::DrSopo,
        Algorithm::DvrSopo,
        Algorithm::PracticalDr,
        Algorithm::PracticalDvr,
        Algorithm::Fdtr,
        Algorithm::FdtrVr,
        Algorithm::Reinforce,
        Algorithm::Hapg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::DrSopo => "dr-sopo",
            Algorithm::DvrSopo => "dvr-sopo",
            Algorithm::PracticalDr => "practical-dr-sopo",
            Algorithm::PracticalDvr => "practical-dvr-sopo",
            Algorithm::Fdtr => "fdtr-sopo",
            Algorithm::FdtrVr => "fdtr-vrsopo",
            Algorithm::Reinforce => "reinforce",
            Algorithm::Hapg => "hapg",
        }
    }

    /// Whether the gradient follows the epoch recursion.
    pub fn variance_reduced(&self) -> bool {
        matches!(self, Algorithm::DvrSopo | Algorithm::PracticalDvr | Algorithm::FdtrVr | Algorithm::Hapg)
    }

    /// The same method with the basic/practical flag applied (only the
    /// dimension-reduced methods have a practical form).
    pub fn with_practical(self, practical: bool) -> Algorithm {
        match (self, practical) {
            (Algorithm::DrSopo, true) => Algorithm::PracticalDr,
            (Algorithm::DvrSopo, true) => Algorithm::PracticalDvr,
            (Algorithm::PracticalDr, false) => Algorithm::DrSopo,
            (Algorithm::PracticalDvr, false) => Algorithm::DvrSopo,
            (a, _) => a,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = OptimizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| OptimizerError::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

/// Batch sizes, epoch length, iteration budget and radius of the basic
/// methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub epsilon: f64,
    /// Gradient batch of the plain pipeline.
    pub batch_grad: u64,
    pub batch_hess: u64,
    /// Gradient batch at the start of an epoch.
    pub batch_anchor: u64,
    /// Hessian actions per gradient-difference estimate.
    pub batch_correction: u64,
    pub q: u64,
    pub iterations: u64,
    pub delta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            batch_grad: 50,
            batch_hess: 10,
            batch_anchor: 50,
            batch_correction: 10,
            q: 5,
            iterations: 100,
            delta: 0.1,
        }
    }
}

/// Settings of the ratio-tested methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticalConfig {
    pub delta_max: f64,
    pub eta: f64,
    pub q: u64,
    pub batch_grad: u64,
    pub batch_hess: u64,
    pub batch_anchor: u64,
    pub batch_correction: u64,
    pub mu: f64,
    pub lambda_init: f64,
    pub lambda_inc: f64,
    pub lambda_dec: f64,
    pub lambda_min: f64,
}

impl Default for PracticalConfig {
    fn default() -> Self {
        Self {
            delta_max: 1.0,
            eta: 0.001,
            q: 5,
            batch_grad: 50,
            batch_hess: 10,
            batch_anchor: 50,
            batch_correction: 10,
            mu: 1.0 / 500.0,
            lambda_init: 0.01,
            lambda_inc: 4.0,
            lambda_dec: 2.0,
            lambda_min: 1e-8,
        }
    }
}

impl PracticalConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must lie in (0, 1)");
        }
        if !(self.delta_max > 0.0) {
            return bad("delta_max must be positive");
        }
        if !(self.lambda_inc > 1.0 && self.lambda_dec > 1.0) {
            return bad("lambda_inc and lambda_dec must exceed 1");
        }
        if !(self.lambda_min >= 0.0 && self.lambda_init >= self.lambda_min) {
            return bad("need 0 <= lambda_min <= lambda_init");
        }
        if self.q == 0 || self.batch_grad == 0 || self.batch_hess == 0 || self.batch_anchor == 0 || self.batch_correction == 0 {
            return bad("q and batch sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Everything a run needs besides the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub schedule: ScheduleConfig,
    pub practical: PracticalConfig,
    /// Step length of the normalized first-order baselines.
    pub lr: f64,
    pub max_iterations: u64,
    pub max_env_steps: Option<u64>,
    pub cg_tol: f64,
    /// Truncated-CG iteration cap; `None` means the problem dimension.
    pub cg_max_iter: Option<usize>,
    /// Seed of the uniformly drawn returned iterate.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::DrSopo,
            schedule: ScheduleConfig::default(),
            practical: PracticalConfig::default(),
            lr: 0.01,
            max_iterations: 100,
            max_env_steps: None,
            cg_tol: 1e-6,
            cg_max_iter: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub theta: Vector,
    /// Parameter of the previous iteration (equal to `theta` after a
    /// rejected step).
    pub theta_prev: Vector,
    /// Last accepted step `θ_t − θ_{t−1}`.
    pub d_prev: Vector,
    pub g_est: Vector,
    pub t: u64,
    pub epoch_pos: u64,
    pub lambda: f64,
    pub delta: f64,
    pub cumulative_env_steps: u64,
    /// Costs of every rollout drawn at exactly `theta` so far.
    pub cost_sum_here: f64,
    pub cost_count_here: u64,
}

impl OptimizerState {
    pub fn new(theta: Vector, cfg: &RunConfig) -> Self {
        let n = theta.len();
        Self {
            theta_prev: theta.clone(),
            theta,
            d_prev: Vector::zeros(n),
            g_est: Vector::zeros(n),
            t: 0,
            epoch_pos: 0,
            lambda: cfg.practical.lambda_init,
            delta: cfg.schedule.delta,
            cumulative_env_steps: 0,
            cost_sum_here: 0.0,
            cost_count_here: 0,
        }
    }
}

/// What one iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub step: Vector,
    pub accepted: bool,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub min_eig: Option<f64>,
    pub predicted_reduction: Option<f64>,
    pub one_dimensional: bool,
    /// The radius was halved after a root-finding failure.
    pub radius_halved: bool,
}

impl StepInfo {
    fn first_order(grad_norm: f64, step: Vector) -> Self {
        Self {
            grad_norm,
            accepted: true,
            step,
            lambda: None,
            rho: None,
            min_eig: None,
            predicted_reduction: None,
            one_dimensional: false,
            radius_halved: false,
        }
    }
}

/// Costs of the rollouts drawn at the current iterate during one iteration.
#[derive(Debug, Default, Clone, Copy)]
struct CostPool {
    sum: f64,
    count: usize,
}

impl CostPool {
    fn add<T>(&mut self, s: &Sampled<T>) {
        self.sum += s.cost_sum;
        self.count += s.cost_count;
    }
}

/// Gradient pipeline: plain batch, or the epoch recursion
/// `g_t = g_{t−1} + ξ_t` with a fresh anchor batch every `q` iterations.
fn next_gradient<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    vr: bool,
    batch_grad: u64,
    batch_anchor: u64,
    batch_correction: u64,
    pool: &mut CostPool,
) -> Result<Vector, OptimizerError> {
    let g = if !vr {
        let s = oracle.gradient(&state.theta, batch_grad as usize)?;
        state.cumulative_env_steps += s.env_steps;
        pool.add(&s);
        s.value
    } else if state.epoch_pos == 0 {
        let s = oracle.gradient(&state.theta, batch_anchor as usize)?;
        state.cumulative_env_steps += s.env_steps;
        pool.add(&s);
        s.value
    } else {
        let s = oracle.gradient_difference(&state.theta_prev, &state.theta, batch_correction as usize)?;
        state.cumulative_env_steps += s.env_steps;
        &state.g_est + s.value
    };
    state.g_est = g.clone();
    Ok(g)
}

fn advance(state: &mut OptimizerState, q: u64, step: &Vector, accepted: bool) {
    state.theta_prev = state.theta.clone();
    if accepted {
        state.theta += step;
        state.d_prev = step.clone();
        state.cost_sum_here = 0.0;
        state.cost_count_here = 0;
    }
    state.t += 1;
    state.epoch_pos = (state.epoch_pos + 1) % q.max(1);
}

/// Subspace solve at radius `delta`, halving it once after a root-finding
/// failure.
fn radius_step<H: HessianAction>(
    g: &Vector,
    d: &Vector,
    hess: &H,
    delta: f64,
) -> Result<(SubspaceStep, bool), OptimizerError> {
    match subspace_step(g, d, |v| hess.apply(v), StepRule::Radius(delta)) {
        Ok(s) => Ok((s, false)),
        Err(TrustRegionError::NoConvergence(_)) => {
            Ok((subspace_step(g, d, |v| hess.apply(v), StepRule::Radius(0.5 * delta))?, true))
        }
        Err(e) => Err(e.into()),
    }
}

/// One iteration of the basic dimension-reduced method (`vr` selects the
/// gradient recursion).
pub fn drsopo_step<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    schedule: &ScheduleConfig,
    vr: bool,
) -> Result<StepInfo, OptimizerError> {
    let mut pool = CostPool::default();
    let g = next_gradient(
        state,
        oracle,
        vr,
        schedule.batch_grad,
        schedule.batch_anchor,
        schedule.batch_correction,
        &mut pool,
    )?;
    let h = oracle.hessian(&state.theta, schedule.batch_hess as usize)?;
    state.cumulative_env_steps += h.env_steps;
    let (step, radius_halved) = radius_step(&g, &state.d_prev, &h.value, state.delta)?;
    let info = StepInfo {
        grad_norm: g.norm(),
        step: step.step.clone(),
        accepted: true,
        lambda: Some(step.lambda),
        rho: None,
        min_eig: step.min_eig.is_finite().then_some(step.min_eig),
        predicted_reduction: Some(step.predicted_reduction),
        one_dimensional: step.one_dimensional,
        radius_halved,
    };
    advance(state, if vr { schedule.q } else { 1 }, &step.step, true);
    Ok(info)
}

/// Basic method with the gradient recursion.
pub fn dvrsopo_step<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    schedule: &ScheduleConfig,
) -> Result<StepInfo, OptimizerError> {
    drsopo_step(state, oracle, schedule, true)
}

/// One ratio-tested iteration of the radius-free method.
pub fn practical_step<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    cfg: &PracticalConfig,
    vr: bool,
) -> Result<StepInfo, OptimizerError> {
    let mut pool = CostPool::default();
    let g = next_gradient(state, oracle, vr, cfg.batch_grad, cfg.batch_anchor, cfg.batch_correction, &mut pool)?;
    let h = oracle.hessian(&state.theta, cfg.batch_hess as usize)?;
    state.cumulative_env_steps += h.env_steps;
    pool.add(&h);
    let q = if vr { cfg.q } else { 1 };
    let grad_norm = g.norm();

    let mut lambda = state.lambda;
    let mut solved = None;
    for _ in 0..200 {
        match subspace_step(&g, &state.d_prev, |v| h.value.apply(v), StepRule::Regularized(lambda)) {
            Ok(s) => {
                solved = Some(s);
                break;
            }
            Err(TrustRegionError::IndefiniteSystem(_)) => lambda = raise_lambda(lambda, cfg),
            Err(e) => return Err(e.into()),
        }
    }
    let mut step = solved.ok_or(TrustRegionError::NoConvergence(200))?;
    state.lambda = lambda;

    let norm = (step.alpha[0].powi(2) + step.alpha[1].powi(2)).sqrt();
    if norm > cfg.delta_max {
        let s = cfg.delta_max / norm;
        step = step.with_alpha([step.alpha[0] * s, step.alpha[1] * s], &g, &state.d_prev);
    }
    let min_eig = step.min_eig.is_finite().then_some(step.min_eig);
    let pred = step.predicted_reduction;

    // Every rollout already paid for at θ_t enters Ĵ(θ_t); the candidate
    // gets a fresh batch as large as this iteration's draw at θ_t.
    let fresh = pool.count;
    if pool.count == 0 && state.cost_count_here == 0 {
        let e = oracle.evaluate(&state.theta, cfg.batch_hess as usize)?;
        state.cumulative_env_steps += e.env_steps;
        pool.add(&e);
    }
    state.cost_sum_here += pool.sum;
    state.cost_count_here += pool.count as u64;
    let mut rho = None;
    let mut accepted = false;
    let mut there = None;
    if pred > 1e-14 {
        let here = state.cost_sum_here / state.cost_count_here as f64;
        let candidate = &state.theta + &step.step;
        let e = oracle.evaluate(&candidate, fresh.max(cfg.batch_hess as usize).max(1))?;
        state.cumulative_env_steps += e.env_steps;
        let r = (here - e.value) / pred;
        rho = Some(r);
        accepted = r > cfg.eta;
        there = Some(e);
    }
    if accepted {
        state.lambda = (state.lambda / cfg.lambda_dec).max(cfg.lambda_min);
    } else {
        state.lambda = raise_lambda(state.lambda, cfg);
    }
    let info = StepInfo {
        grad_norm,
        step: if accepted { step.step.clone() } else { Vector::zeros(g.len()) },
        accepted,
        lambda: Some(lambda),
        rho,
        min_eig,
        predicted_reduction: Some(pred),
        one_dimensional: step.one_dimensional,
        radius_halved: false,
    };
    advance(state, q, &step.step, accepted);
    if let (true, Some(e)) = (accepted, there) {
        state.cost_sum_here = e.cost_sum;
        state.cost_count_here = e.cost_count as u64;
    }
    Ok(info)
}

/// Noisy ratios drift the multiplier upward; past this level steps are
/// already negligible and further growth only risks overflow.
pub const LAMBDA_CEILING: f64 = 1e12;

fn raise_lambda(lambda: f64, cfg: &PracticalConfig) -> f64 {
    (lambda * cfg.lambda_inc).max(cfg.lambda_min.max(1e-8)).min(LAMBDA_CEILING)
}

/// Full-dimension trust-region iteration.
pub fn fdtr_step<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    schedule: &ScheduleConfig,
    vr: bool,
    cg_tol: f64,
    cg_max_iter: Option<usize>,
) -> Result<StepInfo, OptimizerError> {
    let mut pool = CostPool::default();
    let g = next_gradient(
        state,
        oracle,
        vr,
        schedule.batch_grad,
        schedule.batch_anchor,
        schedule.batch_correction,
        &mut pool,
    )?;
    let h = oracle.hessian(&state.theta, schedule.batch_hess as usize)?;
    state.cumulative_env_steps += h.env_steps;
    let max_iter = cg_max_iter.unwrap_or(g.len());
    let sol = solve_fdtr_steihaug(&g, |v| h.value.apply_symmetric(v), state.delta, cg_tol, max_iter);
    let info = StepInfo {
        grad_norm: g.norm(),
        step: sol.d.clone(),
        accepted: true,
        lambda: Some(sol.lambda_hat),
        rho: None,
        min_eig: None,
        predicted_reduction: None,
        one_dimensional: false,
        radius_halved: false,
    };
    advance(state, if vr { schedule.q } else { 1 }, &sol.d, true);
    Ok(info)
}

/// `−lr·g/‖g‖`, or zero when `g = 0`.
pub fn normalized_step(g: &Vector, lr: f64) -> Vector {
    let n = g.norm();
    if n == 0.0 || lr == 0.0 {
        Vector::zeros(g.len())
    } else {
        g * (-lr / n)
    }
}

pub fn reinforce_step<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    batch: u64,
    lr: f64,
) -> Result<StepInfo, OptimizerError> {
    let mut pool = CostPool::default();
    let g = next_gradient(state, oracle, false, batch, batch, batch, &mut pool)?;
    let step = normalized_step(&g, lr);
    let info = StepInfo::first_order(g.norm(), step.clone());
    advance(state, 1, &step, true);
    Ok(info)
}

pub fn hapg_step<O: Oracle>(
    state: &mut OptimizerState,
    oracle: &mut O,
    schedule: &ScheduleConfig,
    lr: f64,
) -> Result<StepInfo, OptimizerError> {
    let mut pool = CostPool::default();
    let g = next_gradient(
        state,
        oracle,
        true,
        schedule.batch_grad,
        schedule.batch_anchor,
        schedule.batch_correction,
        &mut pool,
    )?;
    let step = normalized_step(&g, lr);
    let info = StepInfo::first_order(g.norm(), step.clone());
    advance(state, schedule.q, &step, true);
    Ok(info)
}

/// Dispatches one iteration of `cfg.algorithm`.
pub fn step<O: Oracle>(state: &mut OptimizerState, oracle: &mut O, cfg: &RunConfig) -> Result<StepInfo, OptimizerError> {
    match cfg.algorithm {
        Algorithm::DrSopo => drsopo_step(state, oracle, &cfg.schedule, false),
        Algorithm::DvrSopo => dvrsopo_step(state, oracle, &cfg.schedule),
        Algorithm::PracticalDr => practical_step(state, oracle, &cfg.practical, false),
        Algorithm::PracticalDvr => practical_step(state, oracle, &cfg.practical, true),
        Algorithm::Fdtr => fdtr_step(state, oracle, &cfg.schedule, false, cfg.cg_tol, cfg.cg_max_iter),
        Algorithm::FdtrVr => fdtr_step(state, oracle, &cfg.schedule, true, cfg.cg_tol, cfg.cg_max_iter),
        Algorithm::Reinforce => reinforce_step(state, oracle, cfg.schedule.batch_grad, cfg.lr),
        Algorithm::Hapg => hapg_step(state, oracle, &cfg.schedule, cfg.lr),
    }
}

/// One row of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub env_steps: u64,
    /// Negated objective (the objective is a cost).
    pub mean_return: Option<f64>,
    pub grad_norm: Option<f64>,
    pub exact_grad_norm: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub accepted: bool,
    pub min_eig: Option<f64>,
}

pub const TRACE_HEADER: &str = "t,env_steps,mean_return,grad_norm,exact_grad_norm,lambda,rho,accepted,min_eig";

impl TraceRecord {
    pub fn to_csv_row(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            self.env_steps,
            f(self.mean_return),
            f(self.grad_norm),
            f(self.exact_grad_norm),
            f(self.lambda),
            f(self.rho),
            self.accepted as u8,
            f(self.min_eig)
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self, String> {
        let cols: Vec<&str> = row.trim_end().split(',').collect();
        if cols.len() != 9 {
            return Err(format!("expected 9 columns, found {}", cols.len()));
        }
        let opt = |s: &str| -> Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| format!("`{s}`: {e}"))
            }
        };
        Ok(Self {
            t: cols[0].parse().map_err(|e| format!("t: {e}"))?,
            env_steps: cols[1].parse().map_err(|e| format!("env_steps: {e}"))?,
            mean_return: opt(cols[2])?,
            grad_norm: opt(cols[3])?,
            exact_grad_norm: opt(cols[4])?,
            lambda: opt(cols[5])?,
            rho: opt(cols[6])?,
            accepted: cols[7] == "1",
            min_eig: opt(cols[8])?,
        })
    }
}

pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == TRACE_HEADER => {}
        _ => return Err("missing trace header".into()),
    }
    lines.filter(|l| !l.trim().is_empty()).map(TraceRecord::from_csv_row).collect()
}

/// Serialized optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub algorithm: String,
    pub theta: Vec<f64>,
    pub theta_prev: Vec<f64>,
    pub d_prev: Vec<f64>,
    pub g_est: Vec<f64>,
    pub t: u64,
    pub epoch_pos: u64,
    pub lambda: f64,
    pub delta: f64,
    pub cumulative_env_steps: u64,
    #[serde(default)]
    pub cost_sum_here: f64,
    #[serde(default)]
    pub cost_count_here: u64,
}

impl Checkpoint {
    pub fn from_state(algorithm: Algorithm, s: &OptimizerState) -> Self {
        let v = |x: &Vector| x.iter().copied().collect();
        Self {
            algorithm: algorithm.name().into(),
            theta: v(&s.theta),
            theta_prev: v(&s.theta_prev),
            d_prev: v(&s.d_prev),
            g_est: v(&s.g_est),
            t: s.t,
            epoch_pos: s.epoch_pos,
            lambda: s.lambda,
            delta: s.delta,
            cumulative_env_steps: s.cumulative_env_steps,
            cost_sum_here: s.cost_sum_here,
            cost_count_here: s.cost_count_here,
        }
    }

    pub fn to_state(&self) -> OptimizerState {
        let v = |x: &[f64]| Vector::from_column_slice(x);
        OptimizerState {
            theta: v(&self.theta),
            theta_prev: v(&self.theta_prev),
            d_prev: v(&self.d_prev),
            g_est: v(&self.g_est),
            t: self.t,
            epoch_pos: self.epoch_pos,
            lambda: self.lambda,
            delta: self.delta,
            cumulative_env_steps: self.cumulative_env_steps,
            cost_sum_here: self.cost_sum_here,
            cost_count_here: self.cost_count_here,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub state: OptimizerState,
    /// Index of the uniformly drawn iterate among `θ_0..θ_T`.
    pub sampled_index: u64,
    pub sampled_theta: Vector,
}

fn record<O: Oracle>(oracle: &mut O, state: &OptimizerState, info: Option<&StepInfo>) -> TraceRecord {
    TraceRecord {
        t: state.t,
        env_steps: state.cumulative_env_steps,
        mean_return: oracle.monitor(&state.theta).map(|j| -j),
        grad_norm: info.map(|i| i.grad_norm),
        exact_grad_norm: oracle.exact_gradient(&state.theta).map(|g| g.norm()),
        lambda: info.and_then(|i| i.lambda),
        rho: info.and_then(|i| i.rho),
        accepted: info.is_none_or(|i| i.accepted),
        min_eig: info.and_then(|i| i.min_eig),
    }
}

/// Runs until the iteration or environment-step budget is exhausted,
/// recording the initial point and every iteration.
pub fn run<O: Oracle>(oracle: &mut O, theta0: Vector, cfg: &RunConfig) -> Result<RunOutput, OptimizerError> {
    if cfg.algorithm == Algorithm::PracticalDr || cfg.algorithm == Algorithm::PracticalDvr {
        cfg.practical.validate()?;
    }
    let mut state = OptimizerState::new(theta0, cfg);
    let mut records = vec![record(oracle, &state, None)];
    let mut iterates = vec![state.theta.clone()];
    while state.t < cfg.max_iterations && cfg.max_env_steps.is_none_or(|b| state.cumulative_env_steps < b) {
        let info = step(&mut state, oracle, cfg)?;
        records.push(record(oracle, &state, Some(&info)));
        iterates.push(state.theta.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::numerics::mix_seed(cfg.seed, 3));
    let idx = rng.random_range(0..iterates.len());
    Ok(RunOutput { records, sampled_index: idx as u64, sampled_theta: iterates.swap_remove(idx), state })
}

/// Theory-driven batch sizes and step parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleVariant {
    Dr,
    Dvr,
    Fdtr,
}

/// Schedule from the convergence theory. Counts are rounded up; `d` enters
/// through `log d` in the Hessian batch.
pub fn theory_schedule(
    constants: &TheoryConstants,
    epsilon: f64,
    d: usize,
    variant: ScheduleVariant,
) -> Result<ScheduleConfig, OptimizerError> {
    if !(epsilon > 0.0) {
        return Err(OptimizerError::InvalidConfig("epsilon must be positive".into()));
    }
    let gg2 = constants.g_g * constants.g_g;
    let gh2 = constants.g_h * constants.g_h;
    let m = constants.m;
    let log_d = (d.max(1) as f64).ln();
    let batch_grad = ceil_count(144.0 * gg2 / (epsilon * epsilon));
    let batch_hess = ceil_count(22.0 * 24.0 * 24.0 * gh2 * log_d / epsilon).max(1);
    let iterations = ceil_count(24.0 * m * m * constants.delta_j / epsilon.powf(1.5));
    let delta = 2.0 * epsilon.sqrt() / m;
    let mut out = ScheduleConfig {
        epsilon,
        batch_grad,
        batch_hess,
        batch_anchor: batch_grad,
        batch_correction: 0,
        q: 1,
        iterations,
        delta,
    };
    if variant == ScheduleVariant::Dvr {
        let limit = gh2 / 4.0;
        if epsilon > limit {
            return Err(OptimizerError::EpsilonTooLarge { epsilon, limit });
        }
        out.q = ceil_count(1.0 / (8.0 * epsilon.sqrt())).max(1);
        out.batch_correction = ceil_count(288.0 * gh2 / (m * m * epsilon.powf(1.5)));
        out.batch_anchor = ceil_count(288.0 * gg2 / (epsilon * epsilon));
    }
    Ok(out)
}

/// Total sample counts of the complexity corollaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleComplexity {
    pub per_iteration_gradient: f64,
    pub per_iteration_hessian: f64,
    pub total: f64,
}

pub fn sample_complexity(
    constants: &TheoryConstants,
    epsilon: f64,
    d: usize,
    variant: ScheduleVariant,
) -> Result<SampleComplexity, OptimizerError> {
    let s = theory_schedule(constants, epsilon, d, variant)?;
    let gg2 = constants.g_g * constants.g_g;
    let gh2 = constants.g_h * constants.g_h;
    let m2 = constants.m * constants.m;
    let log_d = (d.max(1) as f64).ln();
    let t = 24.0 * m2 * constants.delta_j / epsilon.powf(1.5);
    let (n1, n2) = match variant {
        ScheduleVariant::Dvr => (288.0 * (8.0 * gg2 + gh2 / m2) / epsilon.powf(1.5), 22.0 * 576.0 * gh2 * log_d / epsilon),
        _ => (s.batch_grad as f64, s.batch_hess as f64),
    };
    Ok(SampleComplexity { per_iteration_gradient: n1, per_iteration_hessian: n2, total: (n1 + n2) * t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_constants() -> TheoryConstants {
        TheoryConstants { r: 1.0, g: 1.0, l: 1.0, gamma: 0.5, horizon: 1, m: 1.0, c: 1.0, delta_j: 1.0, g_g: 1.0, g_h: 1.0 }
    }

    #[test]
    fn schedule_examples() {
        let c = unit_constants();
        let s = theory_schedule(&c, 0.01, 10, ScheduleVariant::Dr).unwrap();
        assert_eq!(s.batch_grad, 1_440_000);
        assert_abs_diff_eq!(s.delta, 0.2, epsilon = 1e-15);
        assert_eq!(s.iterations, 24_000);
        let v = theory_schedule(&c, 0.01, 10, ScheduleVariant::Dvr).unwrap();
        assert_eq!(v.q, 2);
        assert_eq!(v.batch_anchor, 2_880_000);
        assert_eq!(v.batch_correction, 288_000);
        let mut small = c;
        small.g_h = 0.2;
        assert!(matches!(
            theory_schedule(&small, 0.04, 10, ScheduleVariant::Dvr),
            Err(OptimizerError::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn normalized_step_examples() {
        let g = Vector::from_vec(vec![3.0, 4.0, 0.0]);
        let s = normalized_step(&g, 0.01);
        assert_abs_diff_eq!(s[0], -0.006, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -0.008, epsilon = 1e-15);
        assert_eq!(normalized_step(&g, 0.0), Vector::zeros(3));
        assert_eq!(normalized_step(&Vector::zeros(3), 0.01), Vector::zeros(3));
    }

    #[test]
    fn trace_csv_roundtrip() {
        let r = TraceRecord {
            t: 3,
            env_steps: 1200,
            mean_return: Some(-1.25),
            grad_norm: Some(0.5),
            exact_grad_norm: None,
            lambda: Some(0.01),
            rho: None,
            accepted: false,
            min_eig: Some(-0.125),
        };
        let text = trace_to_csv(std::slice::from_ref(&r));
        assert_eq!(text.lines().nth(1).unwrap(), "3,1200,-1.25,0.5,,0.01,,0,-0.125");
        assert_eq!(trace_from_csv(&text).unwrap(), vec![r]);
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!(Algorithm::DrSopo.with_practical(true), Algorithm::PracticalDr);
    }
}
