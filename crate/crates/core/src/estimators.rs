//! Trajectory-based gradient and Hessian-action estimators, the
//! Hessian-aided gradient-difference correction, the linear baseline and
//! exact moment computations by enumeration.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mdp::{
    dp_gradient, enumerate_trajectories, sample_trajectory, stream_rng, truncation_bounds, MdpError, SampleStream,
    TabularMdp, Trajectory, TruncationBounds,
};
use crate::numerics::{gauss_legendre_unit, CompensatedSum, CompensatedVec, Vector};
use crate::policy::{policy_constants, FeatureMap, Policy, PolicyError, PolicyKind, TabularSoftmax};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("baseline fit is degenerate: {0}")]
    Degenerate(String),
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `Ψ_h = Σ_{i≥h} γ^i r_i` (discounting from the start of the rollout).
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut disc: Vec<f64> = Vec::with_capacity(rewards.len());
    let mut w = 1.0;
    for r in rewards {
        disc.push(w * r);
        w *= gamma;
    }
    let mut acc = 0.0;
    let mut out = vec![0.0; rewards.len()];
    for h in (0..rewards.len()).rev() {
        acc += disc[h];
        out[h] = acc;
    }
    out
}

/// Least-squares state baseline `b(s) = wᵀφ(s)` fitted to returns-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    pub features: FeatureMap,
    pub weights: Vector,
    pub fitted: bool,
}

impl LinearBaseline {
    pub fn zero(features: FeatureMap) -> Self {
        Self { features, weights: Vector::zeros(features.dim()), fitted: false }
    }

    pub fn value(&self, s: usize) -> f64 {
        self.features.features(s).dot(&self.weights)
    }
}

/// Solves the normal equations `ΦᵀΦ w = Φᵀy` over every visited step.
///
/// A singular Gram matrix is regularized with a `1e−8` ridge and a warning
/// is logged; the fit fails only if the regularized system is still not
/// solvable.
pub fn fit_linear_baseline<A>(
    trajectories: &[Trajectory<A>],
    gamma: f64,
    features: FeatureMap,
) -> Result<LinearBaseline, EstimatorError> {
    if trajectories.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let k = features.dim();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = Vector::zeros(k);
    for traj in trajectories {
        for (s, psi) in traj.states.iter().zip(returns_to_go(&traj.rewards, gamma)) {
            let phi = features.features(*s);
            gram += &phi * phi.transpose();
            rhs += &phi * psi;
        }
    }
    let scale = gram.diagonal().amax().max(1.0);
    let weights = match gram.clone().cholesky().filter(|c| min_pivot(c.l_dirty()) > 1e-12 * scale.sqrt()) {
        Some(chol) => chol.solve(&rhs),
        None => {
            log::warn!("baseline feature Gram matrix is singular; applying ridge 1e-8");
            let ridged = gram + DMatrix::identity(k, k) * 1e-8;
            ridged
                .cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| EstimatorError::Degenerate("Gram matrix not positive definite after ridge".into()))?
        }
    };
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(EstimatorError::Degenerate("non-finite weights".into()));
    }
    Ok(LinearBaseline { features, weights, fitted: true })
}

fn min_pivot(l: &DMatrix<f64>) -> f64 {
    l.diagonal().iter().copied().fold(f64::INFINITY, f64::min)
}

/// `Σ_h Ψ_h ∇log π(a_h|s_h)`, optionally with `Ψ_h − b(s_h)`.
pub fn pgt_gradient<P: Policy>(
    policy: &P,
    traj: &Trajectory<P::Action>,
    theta: &Vector,
    gamma: f64,
    baseline: Option<&LinearBaseline>,
) -> Vector {
    let psi = returns_to_go(&traj.rewards, gamma);
    let mut g = Vector::zeros(policy.dim());
    for h in 0..traj.horizon() {
        let s = traj.states[h];
        let w = psi[h] - baseline.map_or(0.0, |b| b.value(s));
        policy.add_score(theta, s, &traj.actions[h], w, &mut g);
    }
    g
}

/// `Σ_h (Σ_{t≤h} ∇log π_t) γ^h r_h`
pub fn gpomdp_gradient<P: Policy>(policy: &P, traj: &Trajectory<P::Action>, theta: &Vector, gamma: f64) -> Vector {
    let mut cumulative = Vector::zeros(policy.dim());
    let mut g = Vector::zeros(policy.dim());
    let mut disc = 1.0;
    for h in 0..traj.horizon() {
        policy.add_score(theta, traj.states[h], &traj.actions[h], 1.0, &mut cumulative);
        g.axpy(disc * traj.rewards[h], &cumulative, 1.0);
        disc *= gamma;
    }
    g
}

/// `∇log p(τ; θ) = Σ_h ∇log π(a_h|s_h)`
pub fn trajectory_score<P: Policy>(policy: &P, traj: &Trajectory<P::Action>, theta: &Vector) -> Vector {
    let mut out = Vector::zeros(policy.dim());
    for h in 0..traj.horizon() {
        policy.add_score(theta, traj.states[h], &traj.actions[h], 1.0, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub g: Vector,
    pub n_trajectories: usize,
    /// `Σ_τ ‖g(θ; τ)‖²`
    pub sum_sq_norm: f64,
    /// Mean discounted cost of the batch.
    pub mean_cost: f64,
}

/// Batch mean of [`pgt_gradient`], accumulated in batch order.
pub fn batch_gradient<P: Policy>(
    policy: &P,
    trajectories: &[Trajectory<P::Action>],
    theta: &Vector,
    gamma: f64,
    baseline: Option<&LinearBaseline>,
) -> Result<GradEstimate, EstimatorError> {
    if trajectories.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let per: Vec<Vector> = trajectories.iter().map(|t| pgt_gradient(policy, t, theta, gamma, baseline)).collect();
    let m = trajectories.len() as f64;
    let mut acc = CompensatedVec::zeros(policy.dim());
    let mut sq = 0.0;
    for g in &per {
        acc.add_scaled(1.0 / m, g);
        sq += g.norm_squared();
    }
    let mean_cost = mean_cost(trajectories, gamma);
    Ok(GradEstimate { g: acc.value(), n_trajectories: trajectories.len(), sum_sq_norm: sq, mean_cost })
}

pub fn mean_cost<A>(trajectories: &[Trajectory<A>], gamma: f64) -> f64 {
    let mut s = CompensatedSum::new();
    for t in trajectories {
        s.add(crate::mdp::truncated_return(t, gamma));
    }
    s.value() / trajectories.len().max(1) as f64
}

/// Which Hessian estimator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianVariant {
    /// `∇g(θ;τ) + μ·g(θ;τ)∇log p(τ;θ)ᵀ`
    Standard,
    /// `Σ_h γ^h r_h u_h u_hᵀ + ∇g(θ;τ)` with `u_h = Σ_{t≤h} ∇log π_t`.
    VrUuT,
}

impl std::fmt::Display for HessianVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HessianVariant::Standard => "standard",
            HessianVariant::VrUuT => "vr-uut",
        })
    }
}

impl std::str::FromStr for HessianVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(HessianVariant::Standard),
            "vr-uut" => Ok(HessianVariant::VrUuT),
            other => Err(format!("unknown Hessian variant `{other}`")),
        }
    }
}

struct TrajData<A> {
    traj: Trajectory<A>,
    psi: Vec<f64>,
    disc_rewards: Vec<f64>,
    /// `u_h` for the variance-reduced form.
    cumulative_scores: Vec<Vector>,
    score_sum: Vector,
    g: Vector,
}

/// A frozen batch of rollouts acting as a Hessian estimate at `theta`.
pub struct HvpBatch<P: Policy> {
    policy: P,
    theta: Vector,
    mu: f64,
    variant: HessianVariant,
    data: Vec<TrajData<P::Action>>,
}

impl<P: Policy> HvpBatch<P> {
    pub fn new(
        policy: &P,
        trajectories: Vec<Trajectory<P::Action>>,
        theta: &Vector,
        gamma: f64,
        mu: f64,
        variant: HessianVariant,
    ) -> Result<Self, EstimatorError> {
        if trajectories.is_empty() {
            return Err(EstimatorError::EmptyBatch);
        }
        let d = policy.dim();
        let data = trajectories
            .into_iter()
            .map(|traj| {
                let psi = returns_to_go(&traj.rewards, gamma);
                let mut disc_rewards = Vec::with_capacity(traj.horizon());
                let mut cumulative_scores = Vec::with_capacity(traj.horizon());
                let mut running = Vector::zeros(d);
                let mut g = Vector::zeros(d);
                let mut w = 1.0;
                for h in 0..traj.horizon() {
                    let score = policy.score(theta, traj.states[h], &traj.actions[h]);
                    g.axpy(psi[h], &score, 1.0);
                    running += &score;
                    disc_rewards.push(w * traj.rewards[h]);
                    w *= gamma;
                    if variant == HessianVariant::VrUuT {
                        cumulative_scores.push(running.clone());
                    }
                }
                TrajData { traj, psi, disc_rewards, cumulative_scores, score_sum: running, g }
            })
            .collect();
        Ok(Self { policy: policy.clone(), theta: theta.clone(), mu: mu.clamp(0.0, 1.0), variant, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory<P::Action>> {
        self.data.iter().map(|t| &t.traj)
    }

    /// Batch mean of the per-rollout gradient `g(θ; τ)`.
    pub fn mean_gradient(&self) -> Vector {
        let mut acc = CompensatedVec::zeros(self.policy.dim());
        for t in &self.data {
            acc.add_scaled(1.0 / self.data.len() as f64, &t.g);
        }
        acc.value()
    }

    fn curvature_term(&self, t: &TrajData<P::Action>, v: &Vector, out: &mut Vector) {
        for h in 0..t.traj.horizon() {
            self.policy.add_score_hvp(&self.theta, t.traj.states[h], &t.traj.actions[h], v, t.psi[h], out);
        }
    }

    /// `H·v` averaged over the batch.
    pub fn apply(&self, v: &Vector) -> Vector {
        self.apply_impl(v, false)
    }

    /// `½(H + Hᵀ)·v`; the estimators differ from their transpose only in the
    /// rank-one `g ∇log pᵀ` term.
    pub fn apply_symmetric(&self, v: &Vector) -> Vector {
        self.apply_impl(v, true)
    }

    fn apply_impl(&self, v: &Vector, symmetric: bool) -> Vector {
        let d = self.policy.dim();
        let m = self.data.len() as f64;
        let mut total = CompensatedVec::zeros(d);
        for t in &self.data {
            let mut out = Vector::zeros(d);
            self.curvature_term(t, v, &mut out);
            match self.variant {
                HessianVariant::Standard => {
                    if symmetric {
                        out.axpy(0.5 * self.mu * t.score_sum.dot(v), &t.g, 1.0);
                        out.axpy(0.5 * self.mu * t.g.dot(v), &t.score_sum, 1.0);
                    } else {
                        out.axpy(self.mu * t.score_sum.dot(v), &t.g, 1.0);
                    }
                }
                HessianVariant::VrUuT => {
                    for (u, w) in t.cumulative_scores.iter().zip(&t.disc_rewards) {
                        out.axpy(w * u.dot(v), u, 1.0);
                    }
                }
            }
            total.add_scaled(1.0 / m, &out);
        }
        total.value()
    }

    /// Dense batch-mean Hessian estimate (`d` actions on basis vectors).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.policy.dim();
        let mut out = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = Vector::zeros(d);
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
        }
        out
    }
}

/// Problem constants feeding the variance bounds and parameter schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    /// Reward bound.
    pub r: f64,
    /// Score bound.
    pub g: f64,
    /// Score-curvature bound.
    pub l: f64,
    pub gamma: f64,
    pub horizon: usize,
    /// Hessian Lipschitz constant of the objective.
    pub m: f64,
    /// Subspace curvature constant.
    pub c: f64,
    /// Initial optimality gap bound.
    pub delta_j: f64,
    /// Gradient estimator deviation bound (square root of the second moment).
    pub g_g: f64,
    /// Hessian estimator deviation bound.
    pub g_h: f64,
}

impl TheoryConstants {
    /// Derives `G_g` and `G_H` from the primitive constants.
    #[allow(clippy::too_many_arguments)]
    pub fn derive(r: f64, g: f64, l: f64, gamma: f64, horizon: usize, m: f64, c: f64, delta_j: f64) -> Self {
        let om = 1.0 - gamma;
        let h = horizon as f64;
        let g_g = g * r / om.powf(1.5);
        // Explicit products: `powi` may round differently when constant folded.
        let (hg2, om2) = (h * h * g * g, om * om);
        let g_h = (hg2 * hg2 * r * r / om2 + l * l * r * r / (om2 * om2)).sqrt();
        Self { r, g, l, gamma, horizon, m, c, delta_j, g_g, g_h }
    }

    /// Uses the closed-form `(G, L)` of a policy class.
    pub fn for_policy(
        kind: PolicyKind,
        mdp: &TabularMdp,
        horizon: usize,
        m: f64,
        c: f64,
        delta_j: f64,
    ) -> Result<Self, EstimatorError> {
        let (g, l) = policy_constants(kind)?;
        Ok(Self::derive(mdp.reward_bound, g, l, mdp.gamma, horizon, m, c, delta_j))
    }

    pub fn c_tilde(&self) -> f64 {
        self.c + 1.0 / 24.0
    }

    pub fn truncation(&self) -> TruncationBounds {
        truncation_bounds(self.r, self.gamma, self.horizon, self.g, self.l)
    }
}

/// `μ = 1 − √2·L / ((1−γ)G²H²)`, clamped to `[0, 1]`.
pub fn optimal_mu(constants: &TheoryConstants) -> f64 {
    let h = constants.horizon as f64;
    let den = (1.0 - constants.gamma) * constants.g * constants.g * h * h;
    let mu = 1.0 - std::f64::consts::SQRT_2 * constants.l / den;
    if mu.is_nan() {
        0.0
    } else {
        mu.clamp(0.0, 1.0)
    }
}

/// Monte-Carlo estimate of `∇J(θ_curr) − ∇J(θ_prev)` from Hessian actions
/// along the segment between the two parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HavrEstimate {
    pub xi: Vector,
    pub samples: usize,
    pub env_steps: u64,
}

/// Each of the `m` samples uses its own substream: draws `a ~ U[0,1]`, rolls
/// out at `θ(a) = aθ_curr + (1−a)θ_prev` and applies the Hessian estimate to
/// `v = θ_curr − θ_prev`. A zero `v` costs no rollouts, but the substreams
/// are still consumed so the stream position does not depend on it.
#[allow(clippy::too_many_arguments)]
pub fn havr_correction<P: Policy>(
    theta_prev: &Vector,
    theta_curr: &Vector,
    policy: &P,
    mdp: &TabularMdp,
    horizon: usize,
    m: usize,
    stream: &mut SampleStream,
    mu: f64,
    parallel: bool,
) -> Result<HavrEstimate, EstimatorError> {
    let first = stream.reserve(m as u64);
    let v = theta_curr - theta_prev;
    let d = policy.dim();
    if v.iter().all(|x| *x == 0.0) {
        return Ok(HavrEstimate { xi: Vector::zeros(d), samples: m, env_steps: 0 });
    }
    let key = stream.key;
    let one = |i: usize| -> Result<Vector, EstimatorError> {
        let mut rng = stream_rng(key, first + i as u64);
        let a: f64 = rng.random();
        let theta_a = theta_prev + &v * a;
        let traj = sample_trajectory(mdp, policy, &theta_a, horizon, &mut rng);
        let batch = HvpBatch::new(policy, vec![traj], &theta_a, mdp.gamma, mu, HessianVariant::Standard)?;
        Ok(batch.apply(&v))
    };
    let parts: Vec<Vector> = if parallel {
        (0..m).into_par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        (0..m).map(one).collect::<Result<_, _>>()?
    };
    let mut acc = CompensatedVec::zeros(d);
    for p in &parts {
        acc.add_scaled(1.0 / m as f64, p);
    }
    Ok(HavrEstimate { xi: acc.value(), samples: m, env_steps: (m * horizon) as u64 })
}

/// `E_τ[X(τ)]` by enumeration, for any per-trajectory vector statistic.
pub fn enumerate_mean<F>(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Vector,
    horizon: usize,
    dim: usize,
    mut stat: F,
) -> Result<Vector, MdpError>
where
    F: FnMut(&Trajectory<usize>) -> Vector,
{
    let mut acc = CompensatedVec::zeros(dim);
    enumerate_trajectories(mdp, policy, theta, horizon, |t, p| acc.add_scaled(p, &stat(t)))?;
    Ok(acc.value())
}

/// Exact `E_τ[H(θ; τ)]·v` by enumeration.
pub fn expected_hvp(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Vector,
    horizon: usize,
    v: &Vector,
    mu: f64,
    variant: HessianVariant,
) -> Result<Vector, EstimatorError> {
    let mut err = None;
    let out = enumerate_mean(mdp, policy, theta, horizon, policy.dim(), |t| {
        match HvpBatch::new(policy, vec![t.clone()], theta, mdp.gamma, mu, variant) {
            Ok(b) => b.apply(v),
            Err(e) => {
                err = Some(e);
                Vector::zeros(policy.dim())
            }
        }
    })?;
    err.map_or(Ok(out), Err)
}

/// Exact expected correction: Gauss–Legendre quadrature over `a` of the
/// enumerated `E_τ[H(θ(a); τ)]·v`.
pub fn havr_expectation_exact(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta_prev: &Vector,
    theta_curr: &Vector,
    horizon: usize,
    nodes: usize,
) -> Result<Vector, EstimatorError> {
    let v = theta_curr - theta_prev;
    let mut acc = CompensatedVec::zeros(policy.dim());
    for (a, w) in gauss_legendre_unit(nodes) {
        let theta_a = theta_prev + &v * a;
        let hv = expected_hvp(mdp, policy, &theta_a, horizon, &v, 1.0, HessianVariant::Standard)?;
        acc.add_scaled(w, &hv);
    }
    Ok(acc.value())
}

/// Which estimator a moment report describes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Gradient,
    Hessian { mu: f64, variant: HessianVariant },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    /// `E‖X − E X‖²` of one sample (Frobenius norm for Hessians).
    pub second_moment: f64,
    /// Standard error when Monte-Carlo was used, `None` when exact.
    pub std_error: Option<f64>,
    /// The corresponding `G_g²` or `G_H²`.
    pub bound: f64,
    /// `E⟨X_i − E X, X_j − E X⟩` over independent pairs (exactly 0 in theory).
    pub pair_covariance: Option<f64>,
}

impl VarianceReport {
    pub fn within_bound(&self) -> bool {
        self.second_moment <= self.bound
    }

    /// Variance of the mean of `m` independent draws, from the single-sample
    /// moment and the enumerated pair term.
    pub fn batch_variance(&self, m: usize) -> f64 {
        let m = m as f64;
        let pair = self.pair_covariance.unwrap_or(0.0);
        (m * self.second_moment + m * (m - 1.0) * pair) / (m * m)
    }
}

fn flat_statistic(
    kind: EstimatorKind,
    policy: &TabularSoftmax,
    theta: &Vector,
    gamma: f64,
    t: &Trajectory<usize>,
) -> Vector {
    match kind {
        EstimatorKind::Gradient => pgt_gradient(policy, t, theta, gamma, None),
        EstimatorKind::Hessian { mu, variant } => {
            let b = HvpBatch::new(policy, vec![t.clone()], theta, gamma, mu, variant).expect("nonempty batch");
            let m = b.to_matrix();
            Vector::from_column_slice(m.as_slice())
        }
    }
}

/// Second moment of an estimator about its own exact mean, with the
/// matching bound. Uses exact enumeration when feasible; otherwise
/// `mc_samples` rollouts from `stream` (centered at the enumerated or DP
/// truth when available).
#[allow(clippy::too_many_arguments)]
pub fn variance_report(
    kind: EstimatorKind,
    theta: &Vector,
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    horizon: usize,
    constants: &TheoryConstants,
    mc_samples: usize,
    stream: &mut SampleStream,
) -> Result<VarianceReport, EstimatorError> {
    let bound = match kind {
        EstimatorKind::Gradient => constants.g_g * constants.g_g,
        EstimatorKind::Hessian { .. } => constants.g_h * constants.g_h,
    };
    let dim = match kind {
        EstimatorKind::Gradient => policy.dim(),
        EstimatorKind::Hessian { .. } => policy.dim() * policy.dim(),
    };
    let gamma = mdp.gamma;

    let mut support: Vec<(Vector, f64)> = Vec::new();
    match enumerate_trajectories(mdp, policy, theta, horizon, |t, p| {
        support.push((flat_statistic(kind, policy, theta, gamma, t), p));
    }) {
        Ok(()) => {
            let mut mean = CompensatedVec::zeros(dim);
            for (x, p) in &support {
                mean.add_scaled(*p, x);
            }
            let mean = mean.value();
            let centered: Vec<(Vector, f64)> = support.into_iter().map(|(x, p)| (x - &mean, p)).collect();
            let mut second = CompensatedSum::new();
            for (x, p) in &centered {
                second.add(p * x.norm_squared());
            }
            // Pair term over the product law, computed without assuming
            // independence: Σ_{i,j} p_i p_j ⟨x_i, x_j⟩.
            let mut pair = CompensatedSum::new();
            for (xi, pi) in &centered {
                for (xj, pj) in &centered {
                    pair.add(pi * pj * xi.dot(xj));
                }
            }
            Ok(VarianceReport {
                second_moment: second.value(),
                std_error: None,
                bound,
                pair_covariance: Some(pair.value()),
            })
        }
        Err(MdpError::TooLarge { .. }) => {
            let center = match kind {
                EstimatorKind::Gradient => dp_gradient(mdp, policy, theta, horizon)?,
                EstimatorKind::Hessian { .. } => {
                    let h = crate::mdp::exact_hessian(mdp, policy, theta, horizon)?;
                    Vector::from_column_slice(h.as_slice())
                }
            };
            let n = mc_samples.max(2);
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let t = sample_trajectory(mdp, policy, theta, horizon, &mut stream.substream());
                vals.push((flat_statistic(kind, policy, theta, gamma, &t) - &center).norm_squared());
            }
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            Ok(VarianceReport { second_moment: mean, std_error: Some((var / n as f64).sqrt()), bound, pair_covariance: None })
        }
        Err(e) => Err(e.into()),
    }
}

/// Exact decomposition of the biased Hessian estimator's error
/// `H_μ = A + μB` with `A = ∇g` and `B = g ∇log pᵀ` (Frobenius norm):
/// `MSE(μ) = Var A + μ² Var B + 2μ Cov(A, B) + (μ−1)² ‖E B‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasedMseTerms {
    pub var_a: f64,
    pub var_b: f64,
    pub cov_ab: f64,
    pub mean_b_sq: f64,
}

impl BiasedMseTerms {
    pub fn mse(&self, mu: f64) -> f64 {
        self.var_a + mu * mu * self.var_b + 2.0 * mu * self.cov_ab + (mu - 1.0).powi(2) * self.mean_b_sq
    }
}

/// Enumerates the decomposition terms at `θ`.
pub fn biased_mse_terms(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Vector,
    horizon: usize,
) -> Result<BiasedMseTerms, EstimatorError> {
    let d = policy.dim();
    let mut parts: Vec<(Vector, Vector, f64)> = Vec::new();
    enumerate_trajectories(mdp, policy, theta, horizon, |t, p| {
        let a = HvpBatch::new(policy, vec![t.clone()], theta, mdp.gamma, 0.0, HessianVariant::Standard)
            .expect("nonempty batch")
            .to_matrix();
        let g = pgt_gradient(policy, t, theta, mdp.gamma, None);
        let s = trajectory_score(policy, t, theta);
        let b = &g * s.transpose();
        parts.push((Vector::from_column_slice(a.as_slice()), Vector::from_column_slice(b.as_slice()), p));
    })?;
    let mut ea = CompensatedVec::zeros(d * d);
    let mut eb = CompensatedVec::zeros(d * d);
    for (a, b, p) in &parts {
        ea.add_scaled(*p, a);
        eb.add_scaled(*p, b);
    }
    let (ea, eb) = (ea.value(), eb.value());
    let (mut va, mut vb, mut cab) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for (a, b, p) in &parts {
        let da = a - &ea;
        let db = b - &eb;
        va.add(p * da.norm_squared());
        vb.add(p * db.norm_squared());
        cab.add(p * da.dot(&db));
    }
    Ok(BiasedMseTerms { var_a: va.value(), var_b: vb.value(), cov_ab: cab.value(), mean_b_sq: eb.norm_squared() })
}

/// Direct enumeration of `E‖H_μ − E H_1‖²_F`.
pub fn biased_mse_direct(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Vector,
    horizon: usize,
    mu: f64,
) -> Result<f64, EstimatorError> {
    let d = policy.dim();
    let truth = enumerate_mean(mdp, policy, theta, horizon, d * d, |t| {
        flat_statistic(EstimatorKind::Hessian { mu: 1.0, variant: HessianVariant::Standard }, policy, theta, mdp.gamma, t)
    })?;
    let mut acc = CompensatedSum::new();
    enumerate_trajectories(mdp, policy, theta, horizon, |t, p| {
        let x = flat_statistic(EstimatorKind::Hessian { mu, variant: HessianVariant::Standard }, policy, theta, mdp.gamma, t);
        acc.add(p * (x - &truth).norm_squared());
    })?;
    Ok(acc.value())
}
