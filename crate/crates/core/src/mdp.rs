//! Finite MDPs, truncated rollouts and exact oracles.
//!
//! The per-step quantity `r(s, a)` is a cost: the objective
//! `J(θ) = E[Σ_{h<H} γ^h r(s_h, a_h)]` is minimized.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{CompensatedSum, Vector};
use crate::policy::{ActionIndex, Policy, TabularSoftmax};

/// Largest `S·A` accepted by the dynamic-programming oracles.
pub const DP_LIMIT: usize = 10_000;
/// Largest number of `(s, a)` sequences the enumeration oracle will visit.
pub const ENUMERATION_LIMIT: u64 = 2_000_000;
/// Central finite-difference step of the oracles.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("transition row P[{s}][{a}] is invalid (sum {sum}, min {min})")]
    InvalidTransition { s: usize, a: usize, sum: f64, min: f64 },
    #[error("initial distribution is invalid (sum {sum}, min {min})")]
    InvalidInitial { sum: f64, min: f64 },
    #[error("reward r[{s}][{a}] = {value} exceeds the bound {bound}")]
    RewardBound { s: usize, a: usize, value: f64, bound: f64 },
    #[error("discount {0} is outside [0, 1)")]
    InvalidGamma(f64),
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{what} needs {size} units of work, limit is {limit}")]
    TooLarge { what: &'static str, size: u64, limit: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `P[s][a][s']` flattened as `(s·A + a)·S + s'`.
    pub transition: Vec<f64>,
    /// `r[s][a]` flattened as `s·A + a`.
    pub reward: Vec<f64>,
    pub initial: Vec<f64>,
    pub gamma: f64,
    pub reward_bound: f64,
    /// Default rollout length.
    pub horizon: usize,
}

impl TabularMdp {
    /// Builds and validates an instance.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
        reward_bound: f64,
        horizon: usize,
    ) -> Result<Self, MdpError> {
        let mdp = Self { n_states, n_actions, transition, reward, initial, gamma, reward_bound, horizon };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Random instance: Dirichlet(1) transition rows and initial
    /// distribution, rewards uniform on `[−R, R]`.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward_bound: f64,
        horizon: usize,
        seed: u64,
    ) -> Result<Self, MdpError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let simplex = |n: usize, rng: &mut ChaCha8Rng| {
            let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            let z: f64 = w.iter().sum();
            for x in &mut w {
                *x /= z;
            }
            w
        };
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(simplex(n_states, &mut rng));
        }
        let reward = (0..n_states * n_actions).map(|_| rng.random_range(-reward_bound..=reward_bound)).collect();
        let initial = simplex(n_states, &mut rng);
        Self::new(n_states, n_actions, transition, reward, initial, gamma, reward_bound, horizon)
    }

    /// The 5-state, 3-action benchmark instance.
    pub fn bench5x3() -> Self {
        Self::random(5, 3, 0.95, 1.0, 20, 7).expect("valid builtin")
    }

    /// The 3-state, 2-action instance small enough for full enumeration.
    pub fn bench3x2() -> Self {
        Self::random(3, 2, 0.9, 1.0, 3, 3).expect("valid builtin")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "bench5x3" => Some(Self::bench5x3()),
            "bench3x2" => Some(Self::bench3x2()),
            _ => None,
        }
    }

    /// Checks every invariant and reports the first violation.
    pub fn validate(&self) -> Result<(), MdpError> {
        self.violations().into_iter().next().map_or(Ok(()), Err)
    }

    /// All invariant violations, in a fixed order.
    pub fn violations(&self) -> Vec<MdpError> {
        let (s_n, a_n) = (self.n_states, self.n_actions);
        let mut out = Vec::new();
        if s_n == 0 || a_n == 0 {
            out.push(MdpError::Shape("need at least one state and one action".into()));
            return out;
        }
        if self.transition.len() != s_n * a_n * s_n || self.reward.len() != s_n * a_n || self.initial.len() != s_n {
            out.push(MdpError::Shape(format!(
                "expected {} transition, {} reward and {} initial entries",
                s_n * a_n * s_n,
                s_n * a_n,
                s_n
            )));
            return out;
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(MdpError::InvalidGamma(self.gamma));
        }
        for s in 0..s_n {
            for a in 0..a_n {
                let row = self.transition_row(s, a);
                let sum: f64 = row.iter().sum();
                let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                if (sum - 1.0).abs() > 1e-12 || min < 0.0 || !sum.is_finite() {
                    out.push(MdpError::InvalidTransition { s, a, sum, min });
                }
            }
        }
        let sum: f64 = self.initial.iter().sum();
        let min = self.initial.iter().copied().fold(f64::INFINITY, f64::min);
        if (sum - 1.0).abs() > 1e-12 || min < 0.0 || !sum.is_finite() {
            out.push(MdpError::InvalidInitial { sum, min });
        }
        for s in 0..s_n {
            for a in 0..a_n {
                let value = self.reward(s, a);
                if !(value.abs() <= self.reward_bound) {
                    out.push(MdpError::RewardBound { s, a, value, bound: self.reward_bound });
                }
            }
        }
        out
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Same instance with another discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self, MdpError> {
        let mut out = self.clone();
        out.gamma = gamma;
        out.validate()?;
        Ok(out)
    }

    /// Serializes to the fixture text format (floats round-trip exactly).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# S A H gamma R");
        let _ = writeln!(out, "{} {} {} {} {}", self.n_states, self.n_actions, self.horizon, self.gamma, self.reward_bound);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let _ = write!(out, "P {s} {a}");
                for p in self.transition_row(s, a) {
                    let _ = write!(out, " {p}");
                }
                out.push('\n');
            }
        }
        for s in 0..self.n_states {
            let _ = write!(out, "r {s}");
            for a in 0..self.n_actions {
                let _ = write!(out, " {}", self.reward(s, a));
            }
            out.push('\n');
        }
        out.push_str("rho");
        for p in &self.initial {
            let _ = write!(out, " {p}");
        }
        out.push('\n');
        out
    }

    /// Parses and validates the fixture text format.
    pub fn from_text(text: &str) -> Result<Self, MdpError> {
        let mdp = Self::from_text_unchecked(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    /// Parses without checking probability or reward-bound invariants.
    pub fn from_text_unchecked(text: &str) -> Result<Self, MdpError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let parse_err = |line: usize, message: String| MdpError::Parse { line, message };
        let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header `S A H gamma R`".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(parse_err(hline, format!("header needs 5 fields `S A H gamma R`, found {}", fields.len())));
        }
        let num = |line: usize, x: &str| x.parse::<f64>().map_err(|e| parse_err(line, format!("`{x}`: {e}")));
        let int = |line: usize, x: &str| x.parse::<usize>().map_err(|e| parse_err(line, format!("`{x}`: {e}")));
        let n_states = int(hline, fields[0])?;
        let n_actions = int(hline, fields[1])?;
        let horizon = int(hline, fields[2])?;
        let gamma = num(hline, fields[3])?;
        let reward_bound = num(hline, fields[4])?;
        if n_states == 0 || n_actions == 0 {
            return Err(parse_err(hline, "S and A must be positive".into()));
        }

        let mut transition = vec![f64::NAN; n_states * n_actions * n_states];
        let mut reward = vec![f64::NAN; n_states * n_actions];
        let mut initial: Option<Vec<f64>> = None;
        let mut seen_p = vec![false; n_states * n_actions];
        let mut seen_r = vec![false; n_states];

        for (line, content) in lines {
            let mut parts = content.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let index = |x: Option<&&str>, bound: usize, name: &str| -> Result<usize, MdpError> {
                let x = x.ok_or_else(|| parse_err(line, format!("missing {name} index")))?;
                let i = int(line, x)?;
                if i >= bound {
                    return Err(parse_err(line, format!("{name} index {i} out of range")));
                }
                Ok(i)
            };
            let values = |xs: &[&str], n: usize| -> Result<Vec<f64>, MdpError> {
                if xs.len() != n {
                    return Err(parse_err(line, format!("expected {n} values, found {}", xs.len())));
                }
                xs.iter().map(|x| num(line, x)).collect()
            };
            match tag {
                "P" => {
                    let s = index(rest.first(), n_states, "state")?;
                    let a = index(rest.get(1), n_actions, "action")?;
                    let row = values(rest.get(2..).unwrap_or(&[]), n_states)?;
                    if std::mem::replace(&mut seen_p[s * n_actions + a], true) {
                        return Err(parse_err(line, format!("duplicate row P {s} {a}")));
                    }
                    let start = (s * n_actions + a) * n_states;
                    transition[start..start + n_states].copy_from_slice(&row);
                }
                "r" => {
                    let s = index(rest.first(), n_states, "state")?;
                    let row = values(rest.get(1..).unwrap_or(&[]), n_actions)?;
                    if std::mem::replace(&mut seen_r[s], true) {
                        return Err(parse_err(line, format!("duplicate row r {s}")));
                    }
                    reward[s * n_actions..(s + 1) * n_actions].copy_from_slice(&row);
                }
                "rho" => {
                    if initial.is_some() {
                        return Err(parse_err(line, "duplicate rho row".into()));
                    }
                    initial = Some(values(&rest, n_states)?);
                }
                other => return Err(parse_err(line, format!("unknown row tag `{other}`"))),
            }
        }
        let last = text.lines().count().max(1);
        if let Some(i) = seen_p.iter().position(|x| !x) {
            return Err(parse_err(last, format!("missing row P {} {}", i / n_actions, i % n_actions)));
        }
        if let Some(s) = seen_r.iter().position(|x| !x) {
            return Err(parse_err(last, format!("missing row r {s}")));
        }
        let initial = initial.ok_or_else(|| parse_err(last, "missing rho row".into()))?;
        Ok(Self { n_states, n_actions, transition, reward, initial, gamma, reward_bound, horizon })
    }
}

/// One rollout of length `H`; `rewards[h] = r(s_h, a_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<A> {
    pub states: Vec<usize>,
    pub actions: Vec<A>,
    pub rewards: Vec<f64>,
}

impl<A> Trajectory<A> {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    fn with_capacity(h: usize) -> Self {
        Self { states: Vec::with_capacity(h), actions: Vec::with_capacity(h), rewards: Vec::with_capacity(h) }
    }
}

/// Counter-based random substreams: the `i`-th draw is
/// `ChaCha8(key)` on stream `i`, so batches are reproducible for any
/// number of workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStream {
    pub key: u64,
    pub next: u64,
}

impl SampleStream {
    pub fn new(key: u64) -> Self {
        Self { key, next: 0 }
    }

    pub fn substream(&mut self) -> ChaCha8Rng {
        let rng = stream_rng(self.key, self.next);
        self.next += 1;
        rng
    }

    /// Reserves `n` consecutive substreams and returns the first index.
    pub fn reserve(&mut self, n: u64) -> u64 {
        let first = self.next;
        self.next += n;
        first
    }
}

pub fn stream_rng(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

pub fn sample_trajectory<P: Policy, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Vector,
    horizon: usize,
    rng: &mut R,
) -> Trajectory<P::Action> {
    let mut traj = Trajectory::with_capacity(horizon);
    let mut s = sample_categorical(&mdp.initial, rng);
    for h in 0..horizon {
        let action = policy.sample(theta, s, rng);
        let a = action.action_index(mdp.n_actions);
        traj.states.push(s);
        traj.actions.push(action);
        traj.rewards.push(mdp.reward(s, a));
        if h + 1 < horizon {
            s = sample_categorical(mdp.transition_row(s, a), rng);
        }
    }
    traj
}

/// `m` rollouts drawn from consecutive substreams of `stream`.
pub fn sample_batch<P: Policy>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &Vector,
    horizon: usize,
    m: usize,
    stream: &mut SampleStream,
    parallel: bool,
) -> Vec<Trajectory<P::Action>> {
    let first = stream.reserve(m as u64);
    let key = stream.key;
    let one = |i: usize| sample_trajectory(mdp, policy, theta, horizon, &mut stream_rng(key, first + i as u64));
    if parallel {
        (0..m).into_par_iter().map(one).collect()
    } else {
        (0..m).map(one).collect()
    }
}

/// `Σ_h γ^h r_h`
pub fn truncated_return<A>(traj: &Trajectory<A>, gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for r in &traj.rewards {
        total += disc * r;
        disc *= gamma;
    }
    total
}

fn check_dp(mdp: &TabularMdp) -> Result<(), MdpError> {
    let size = (mdp.n_states * mdp.n_actions) as u64;
    if size > DP_LIMIT as u64 {
        return Err(MdpError::TooLarge { what: "dynamic programming", size, limit: DP_LIMIT as u64 });
    }
    Ok(())
}

/// Forward state marginals `μ_h(s)` for `h < H`.
pub fn state_marginals(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Vector,
    horizon: usize,
) -> Result<Vec<Vec<f64>>, MdpError> {
    check_dp(mdp)?;
    let probs: Vec<Vec<f64>> = (0..mdp.n_states).map(|s| policy.probs(theta, s)).collect();
    let mut out = Vec::with_capacity(horizon);
    let mut mu = mdp.initial.clone();
    for h in 0..horizon {
        if h + 1 < horizon {
            let mut next = vec![0.0; mdp.n_states];
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let w = mu[s] * probs[s][a];
                    for (n, p) in next.iter_mut().zip(mdp.transition_row(s, a)) {
                        *n += w * p;
                    }
                }
            }
            out.push(std::mem::replace(&mut mu, next));
        } else {
            out.push(mu.clone());
        }
    }
    Ok(out)
}

/// `J(θ) = Σ_h γ^h Σ_{s,a} μ_h(s) π_θ(a|s) r(s,a)`
pub fn exact_objective(mdp: &TabularMdp, policy: &TabularSoftmax, theta: &Vector, horizon: usize) -> Result<f64, MdpError> {
    let marginals = state_marginals(mdp, policy, theta, horizon)?;
    let mut total = CompensatedSum::new();
    let mut disc = 1.0;
    for mu in &marginals {
        for (s, w) in mu.iter().enumerate() {
            let p = policy.probs(theta, s);
            for (a, pa) in p.iter().enumerate() {
                total.add(disc * w * pa * mdp.reward(s, a));
            }
        }
        disc *= mdp.gamma;
    }
    Ok(total.value())
}

/// Analytic gradient by backward induction:
/// `∂J/∂θ_{s,b} = Σ_h μ_h(s) π(b|s) (Q_h(s,b) − V_h(s))`.
pub fn dp_gradient(mdp: &TabularMdp, policy: &TabularSoftmax, theta: &Vector, horizon: usize) -> Result<Vector, MdpError> {
    let marginals = state_marginals(mdp, policy, theta, horizon)?;
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let probs: Vec<Vec<f64>> = (0..s_n).map(|s| policy.probs(theta, s)).collect();
    let mut grad = Vector::zeros(s_n * a_n);
    let mut v_next = vec![0.0; s_n];
    for h in (0..horizon).rev() {
        let disc = mdp.gamma.powi(h as i32);
        let mut v = vec![0.0; s_n];
        for s in 0..s_n {
            let q: Vec<f64> = (0..a_n)
                .map(|a| {
                    let cont: f64 = mdp.transition_row(s, a).iter().zip(&v_next).map(|(p, x)| p * x).sum();
                    disc * mdp.reward(s, a) + cont
                })
                .collect();
            v[s] = probs[s].iter().zip(&q).map(|(p, x)| p * x).sum();
            for b in 0..a_n {
                grad[s * a_n + b] += marginals[h][s] * probs[s][b] * (q[b] - v[s]);
            }
        }
        v_next = v;
    }
    Ok(grad)
}

/// Central finite differences of [`exact_objective`].
pub fn exact_gradient(mdp: &TabularMdp, policy: &TabularSoftmax, theta: &Vector, horizon: usize) -> Result<Vector, MdpError> {
    let d = theta.len();
    let mut out = Vector::zeros(d);
    let mut t = theta.clone();
    for i in 0..d {
        t[i] = theta[i] + FD_STEP;
        let plus = exact_objective(mdp, policy, &t, horizon)?;
        t[i] = theta[i] - FD_STEP;
        let minus = exact_objective(mdp, policy, &t, horizon)?;
        t[i] = theta[i];
        out[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(out)
}

/// Central finite differences of [`dp_gradient`].
pub fn exact_hessian(mdp: &TabularMdp, policy: &TabularSoftmax, theta: &Vector, horizon: usize) -> Result<DMatrix<f64>, MdpError> {
    let d = theta.len();
    if d > 200 {
        return Err(MdpError::TooLarge { what: "dense Hessian", size: d as u64, limit: 200 });
    }
    let mut out = DMatrix::zeros(d, d);
    let mut t = theta.clone();
    for i in 0..d {
        t[i] = theta[i] + FD_STEP;
        let plus = dp_gradient(mdp, policy, &t, horizon)?;
        t[i] = theta[i] - FD_STEP;
        let minus = dp_gradient(mdp, policy, &t, horizon)?;
        t[i] = theta[i];
        out.set_column(i, &((plus - minus) / (2.0 * FD_STEP)));
    }
    Ok(out)
}

/// Number of `(s, a)` sequences of length `H`.
pub fn enumeration_size(mdp: &TabularMdp, horizon: usize) -> u64 {
    let base = (mdp.n_states * mdp.n_actions) as u64;
    (0..horizon).try_fold(1u64, |acc, _| acc.checked_mul(base)).unwrap_or(u64::MAX)
}

/// Visits every trajectory of positive probability with its probability
/// `p(τ; θ)`. Trajectories are visited in lexicographic order.
pub fn enumerate_trajectories<F>(
    mdp: &TabularMdp,
    policy: &TabularSoftmax,
    theta: &Vector,
    horizon: usize,
    mut visit: F,
) -> Result<(), MdpError>
where
    F: FnMut(&Trajectory<usize>, f64),
{
    let size = enumeration_size(mdp, horizon);
    if size > ENUMERATION_LIMIT {
        return Err(MdpError::TooLarge { what: "trajectory enumeration", size, limit: ENUMERATION_LIMIT });
    }
    if horizon == 0 {
        visit(&Trajectory::with_capacity(0), 1.0);
        return Ok(());
    }
    let probs: Vec<Vec<f64>> = (0..mdp.n_states).map(|s| policy.probs(theta, s)).collect();
    let mut traj = Trajectory::with_capacity(horizon);
    for (s, &p0) in mdp.initial.iter().enumerate() {
        if p0 > 0.0 {
            descend(mdp, &probs, horizon, s, p0, &mut traj, &mut visit);
        }
    }
    Ok(())
}

fn descend<F>(
    mdp: &TabularMdp,
    probs: &[Vec<f64>],
    horizon: usize,
    s: usize,
    prob: f64,
    traj: &mut Trajectory<usize>,
    visit: &mut F,
) where
    F: FnMut(&Trajectory<usize>, f64),
{
    for a in 0..mdp.n_actions {
        let pa = prob * probs[s][a];
        if pa == 0.0 {
            continue;
        }
        traj.states.push(s);
        traj.actions.push(a);
        traj.rewards.push(mdp.reward(s, a));
        if traj.states.len() == horizon {
            visit(traj, pa);
        } else {
            for (next, &pn) in mdp.transition_row(s, a).iter().enumerate() {
                if pn > 0.0 {
                    descend(mdp, probs, horizon, next, pa * pn, traj, visit);
                }
            }
        }
        traj.states.pop();
        traj.actions.pop();
        traj.rewards.pop();
    }
}

/// Bounds on the gap between the truncated and infinite-horizon problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationBounds {
    pub value: f64,
    pub gradient: f64,
    pub hessian: f64,
}

pub fn truncation_bounds(r: f64, gamma: f64, horizon: usize, g: f64, l: f64) -> TruncationBounds {
    let h = horizon as f64;
    let om = 1.0 - gamma;
    let tail = gamma.powi(horizon as i32);
    let value = r / om * tail;
    let gradient = g * r / om * (1.0 / om + h).sqrt() * tail;
    let score_part = 24.0 / om.powi(4) + 24.0 * h / om.powi(3) + 12.0 * h * h / om.powi(2) + 4.0 * h.powi(3) / om + h.powi(4);
    let curv_part = 2.0 / om.powi(2) + 2.0 * h / om + h * h;
    let hessian = (r * g * g / om * score_part.sqrt() + r * l / om * curv_part.sqrt()) * tail;
    TruncationBounds { value, gradient, hessian }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![reward], vec![1.0], gamma, 1.0, 4).unwrap()
    }

    #[test]
    fn geometric_objective() {
        let mdp = one_state(1.0, 0.5);
        let pol = TabularSoftmax::new(1, 1);
        assert_abs_diff_eq!(exact_objective(&mdp, &pol, &Vector::zeros(1), 4).unwrap(), 1.875, epsilon = 1e-15);
        let zero = one_state(0.0, 0.5);
        assert_eq!(exact_objective(&zero, &pol, &Vector::zeros(1), 4).unwrap(), 0.0);
    }

    #[test]
    fn truncated_return_examples() {
        let t = Trajectory { states: vec![0; 3], actions: vec![0usize; 3], rewards: vec![1.0; 3] };
        assert_abs_diff_eq!(truncated_return(&t, 0.9), 2.71, epsilon = 1e-15);
        let z = Trajectory { states: vec![0; 3], actions: vec![0usize; 3], rewards: vec![0.0; 3] };
        assert_eq!(truncated_return(&z, 0.9), 0.0);
    }

    #[test]
    fn deterministic_rollout_is_unique() {
        // 0 → 1 → 2 → 2 with a single action.
        let p = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(3, 1, p, vec![0.1, 0.2, 0.3], vec![1.0, 0.0, 0.0], 0.9, 1.0, 4).unwrap();
        let pol = TabularSoftmax::new(3, 1);
        let mut rng = stream_rng(1, 0);
        let t = sample_trajectory(&mdp, &pol, &Vector::zeros(3), 4, &mut rng);
        assert_eq!(t.states, vec![0, 1, 2, 2]);
        assert_eq!(t.rewards, vec![0.1, 0.2, 0.3, 0.3]);
        let t1 = sample_trajectory(&mdp, &pol, &Vector::zeros(3), 1, &mut rng);
        assert_eq!(t1.horizon(), 1);
        assert_eq!(t1.states, vec![0]);
    }

    #[test]
    fn batches_do_not_depend_on_parallelism() {
        let mdp = TabularMdp::bench5x3();
        let pol = TabularSoftmax::new(5, 3);
        let theta = Vector::from_fn(15, |i, _| (i as f64 * 0.37).sin());
        let a = sample_batch(&mdp, &pol, &theta, 20, 64, &mut SampleStream::new(9), false);
        let b = sample_batch(&mdp, &pol, &theta, 20, 64, &mut SampleStream::new(9), true);
        assert_eq!(a, b);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let mdp = TabularMdp::bench5x3();
        let back = TabularMdp::from_text(&mdp.to_text()).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "1 1 2 0.5 1\nP 0 0 1\nr 0 x\nrho 1\n";
        match TabularMdp::from_text(text) {
            Err(MdpError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "1 1 2 0.5 1\nP 0 0 1\nr 0 2\nrho 1\n";
        assert!(matches!(TabularMdp::from_text(text), Err(MdpError::RewardBound { .. })));
        assert!(TabularMdp::from_text_unchecked(text).is_ok());
    }

    #[test]
    fn dp_gradient_matches_finite_differences() {
        let mdp = TabularMdp::bench5x3();
        let pol = TabularSoftmax::new(5, 3);
        let theta = Vector::from_fn(15, |i, _| (i as f64 * 0.61).cos());
        let a = dp_gradient(&mdp, &pol, &theta, 20).unwrap();
        let b = exact_gradient(&mdp, &pol, &theta, 20).unwrap();
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn truncation_value_example() {
        assert_abs_diff_eq!(truncation_bounds(1.0, 0.5, 3, 1.0, 1.0).value, 0.25, epsilon = 1e-15);
    }
}
