//! Differentiable parametric policies.
//!
//! Parameter layouts:
//!
//! * tabular softmax: `θ[s·A + a]` is the logit of action `a` in state `s`
//!   (row-major per state), `d = S·A`;
//! * linear Gaussian: the mean weights `W` (row-major, `action_dim × k`)
//!   followed by one log standard deviation per action dimension,
//!   `d = k·action_dim + action_dim`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numerics::Vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("closed-form constants are not available for {0} policies")]
    Unsupported(PolicyKind),
    #[error("malformed parameter file: {0}")]
    Parse(String),
}

/// A stochastic policy `π_θ(a | s)` over discrete states.
pub trait Policy: Clone + Send + Sync {
    type Action: ActionIndex + Clone + Send + Sync + fmt::Debug;

    fn dim(&self) -> usize;

    fn log_prob(&self, theta: &Vector, s: usize, a: &Self::Action) -> f64;

    fn sample<R: Rng + ?Sized>(&self, theta: &Vector, s: usize, rng: &mut R) -> Self::Action;

    /// Adds `w · ∇_θ log π_θ(a | s)` into `out`.
    fn add_score(&self, theta: &Vector, s: usize, a: &Self::Action, w: f64, out: &mut Vector);

    /// Adds `w · ∇²_θ log π_θ(a | s) · v` into `out`.
    fn add_score_hvp(&self, theta: &Vector, s: usize, a: &Self::Action, v: &Vector, w: f64, out: &mut Vector);

    fn score(&self, theta: &Vector, s: usize, a: &Self::Action) -> Vector {
        let mut out = Vector::zeros(self.dim());
        self.add_score(theta, s, a, 1.0, &mut out);
        out
    }

    fn score_hvp(&self, theta: &Vector, s: usize, a: &Self::Action, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim());
        self.add_score_hvp(theta, s, a, v, 1.0, &mut out);
        out
    }
}

/// Maps a policy action onto one of the MDP's discrete actions.
pub trait ActionIndex {
    fn action_index(&self, n_actions: usize) -> usize;
}

impl ActionIndex for usize {
    fn action_index(&self, n_actions: usize) -> usize {
        (*self).min(n_actions - 1)
    }
}

/// Continuous actions are quantized: the first coordinate is rounded to the
/// nearest action index and clamped to the valid range.
impl ActionIndex for Vector {
    fn action_index(&self, n_actions: usize) -> usize {
        let x = self[0].round();
        if x.is_nan() || x <= 0.0 {
            0
        } else {
            (x as usize).min(n_actions - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    TabularSoftmax,
    LinearGaussian,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::TabularSoftmax => "tabular-softmax",
            PolicyKind::LinearGaussian => "linear-gaussian",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabular-softmax" => Ok(PolicyKind::TabularSoftmax),
            "linear-gaussian" => Ok(PolicyKind::LinearGaussian),
            other => Err(PolicyError::Parse(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// Softmax over one logit per (state, action).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularSoftmax {
    pub n_states: usize,
    pub n_actions: usize,
}

impl TabularSoftmax {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions }
    }

    /// `π_θ(· | s)`
    pub fn probs(&self, theta: &Vector, s: usize) -> Vec<f64> {
        let block = &theta.as_slice()[s * self.n_actions..(s + 1) * self.n_actions];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = block.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = p.iter().sum();
        for x in &mut p {
            *x /= z;
        }
        p
    }

    fn block(&self, s: usize) -> std::ops::Range<usize> {
        s * self.n_actions..(s + 1) * self.n_actions
    }
}

impl Policy for TabularSoftmax {
    type Action = usize;

    fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn log_prob(&self, theta: &Vector, s: usize, a: &usize) -> f64 {
        let block = &theta.as_slice()[self.block(s)];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + block.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        block[*a] - lse
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Vector, s: usize, rng: &mut R) -> usize {
        let p = self.probs(theta, s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        p.iter().rposition(|&x| x > 0.0).unwrap_or(self.n_actions - 1)
    }

    fn add_score(&self, theta: &Vector, s: usize, a: &usize, w: f64, out: &mut Vector) {
        let p = self.probs(theta, s);
        let base = s * self.n_actions;
        for (b, pb) in p.iter().enumerate() {
            out[base + b] -= w * pb;
        }
        out[base + a] += w;
    }

    fn add_score_hvp(&self, theta: &Vector, s: usize, _a: &usize, v: &Vector, w: f64, out: &mut Vector) {
        // ∇² log π(a|s) = −(diag(π) − ππᵀ) on the state's block, independent of a.
        let p = self.probs(theta, s);
        let base = s * self.n_actions;
        let pv: f64 = p.iter().enumerate().map(|(b, pb)| pb * v[base + b]).sum();
        for (b, pb) in p.iter().enumerate() {
            out[base + b] -= w * pb * (v[base + b] - pv);
        }
    }
}

/// State features for linear models and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// The constant 1.
    Bias,
    /// Indicator of the state.
    OneHot { n_states: usize },
    /// Indicator of the state plus a constant (rank deficient by one).
    OneHotBias { n_states: usize },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureMap::Bias => 1,
            FeatureMap::OneHot { n_states } => n_states,
            FeatureMap::OneHotBias { n_states } => n_states + 1,
        }
    }

    pub fn features(&self, s: usize) -> Vector {
        let mut phi = Vector::zeros(self.dim());
        match *self {
            FeatureMap::Bias => phi[0] = 1.0,
            FeatureMap::OneHot { .. } => phi[s] = 1.0,
            FeatureMap::OneHotBias { n_states } => {
                phi[s] = 1.0;
                phi[n_states] = 1.0;
            }
        }
        phi
    }
}

/// Gaussian policy with mean `W φ(s)` and a state-independent diagonal
/// covariance `diag(exp(2·log_std))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearGaussian {
    pub features: FeatureMap,
    pub action_dim: usize,
}

impl LinearGaussian {
    /// One-hot state features.
    pub fn one_hot(n_states: usize, action_dim: usize) -> Self {
        Self { features: FeatureMap::OneHot { n_states }, action_dim }
    }

    fn k(&self) -> usize {
        self.features.dim()
    }

    pub fn mean(&self, theta: &Vector, s: usize) -> Vector {
        let phi = self.features.features(s);
        let k = self.k();
        Vector::from_iterator(
            self.action_dim,
            (0..self.action_dim).map(|j| (0..k).map(|i| theta[j * k + i] * phi[i]).sum::<f64>()),
        )
    }

    pub fn log_std(&self, theta: &Vector, j: usize) -> f64 {
        theta[self.k() * self.action_dim + j]
    }
}

impl Policy for LinearGaussian {
    type Action = Vector;

    fn dim(&self) -> usize {
        self.k() * self.action_dim + self.action_dim
    }

    fn log_prob(&self, theta: &Vector, s: usize, a: &Vector) -> f64 {
        let mean = self.mean(theta, s);
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        (0..self.action_dim)
            .map(|j| {
                let ls = self.log_std(theta, j);
                let z = (a[j] - mean[j]) * (-ls).exp();
                -0.5 * z * z - ls - 0.5 * ln_2pi
            })
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &Vector, s: usize, rng: &mut R) -> Vector {
        let mean = self.mean(theta, s);
        Vector::from_iterator(
            self.action_dim,
            (0..self.action_dim).map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                mean[j] + self.log_std(theta, j).exp() * z
            }),
        )
    }

    fn add_score(&self, theta: &Vector, s: usize, a: &Vector, w: f64, out: &mut Vector) {
        let phi = self.features.features(s);
        let mean = self.mean(theta, s);
        let k = self.k();
        for j in 0..self.action_dim {
            let inv_var = (-2.0 * self.log_std(theta, j)).exp();
            let diff = a[j] - mean[j];
            for i in 0..k {
                out[j * k + i] += w * diff * inv_var * phi[i];
            }
            out[k * self.action_dim + j] += w * (diff * diff * inv_var - 1.0);
        }
    }

    fn add_score_hvp(&self, theta: &Vector, s: usize, a: &Vector, v: &Vector, w: f64, out: &mut Vector) {
        let phi = self.features.features(s);
        let mean = self.mean(theta, s);
        let k = self.k();
        for j in 0..self.action_dim {
            let inv_var = (-2.0 * self.log_std(theta, j)).exp();
            let diff = a[j] - mean[j];
            let ls_idx = k * self.action_dim + j;
            let phi_v: f64 = (0..k).map(|i| phi[i] * v[j * k + i]).sum();
            let v_ls = v[ls_idx];
            // ∂²/∂W∂W = −φφᵀ/σ², ∂²/∂W∂logσ = −2(a−μ)φ/σ², ∂²/∂logσ² = −2(a−μ)²/σ².
            for i in 0..k {
                out[j * k + i] += w * (-phi[i] * phi_v * inv_var - 2.0 * diff * inv_var * phi[i] * v_ls);
            }
            out[ls_idx] += w * (-2.0 * diff * inv_var * phi_v - 2.0 * diff * diff * inv_var * v_ls);
        }
    }
}

/// Pointwise bounds `(G, L)` with `‖∇log π‖ ≤ G` and `‖∇²log π‖ ≤ L`.
///
/// For the tabular softmax `‖e_a − π‖ ≤ √2` and the spectral norm of
/// `diag(π) − ππᵀ` is at most ½.
pub fn policy_constants(kind: PolicyKind) -> Result<(f64, f64), PolicyError> {
    match kind {
        PolicyKind::TabularSoftmax => Ok((std::f64::consts::SQRT_2, 0.5)),
        PolicyKind::LinearGaussian => Err(PolicyError::Unsupported(kind)),
    }
}

/// Writes `kind d` followed by one value per line.
pub fn write_params(kind: PolicyKind, theta: &Vector) -> String {
    let mut out = format!("{} {}\n", kind, theta.len());
    for x in theta.iter() {
        out.push_str(&format!("{x}\n"));
    }
    out
}

pub fn read_params(text: &str) -> Result<(PolicyKind, Vector), PolicyError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| PolicyError::Parse("empty input".into()))?;
    let mut parts = header.split_whitespace();
    let kind: PolicyKind = parts.next().unwrap_or_default().parse()?;
    let d: usize = parts
        .next()
        .and_then(|x| x.parse().ok())
        .ok_or_else(|| PolicyError::Parse(format!("bad header `{header}`")))?;
    let values: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|x| x.parse::<f64>().map_err(|e| PolicyError::Parse(format!("`{x}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if values.len() != d {
        return Err(PolicyError::Parse(format!("expected {d} values, found {}", values.len())));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(PolicyError::Parse("non-finite parameter".into()));
    }
    Ok((kind, Vector::from_vec(values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_theta(d: usize, rng: &mut ChaCha8Rng) -> Vector {
        Vector::from_iterator(d, (0..d).map(|_| rng.random_range(-2.0..2.0)))
    }

    #[test]
    fn uniform_softmax_log_prob() {
        let p = TabularSoftmax::new(3, 4);
        let theta = Vector::zeros(12);
        for s in 0..3 {
            assert_abs_diff_eq!(p.log_prob(&theta, s, &2), -(4f64).ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn dominant_logit_is_always_sampled() {
        let p = TabularSoftmax::new(1, 3);
        let theta = Vector::from_vec(vec![0.0, 50.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..100_000).filter(|_| p.sample(&theta, 0, &mut rng) == 1).count();
        assert_eq!(hits, 100_000);
    }

    #[test]
    fn softmax_score_block() {
        let p = TabularSoftmax::new(2, 2);
        let theta = Vector::zeros(4);
        let g = p.score(&theta, 1, &0);
        assert_eq!(g, Vector::from_vec(vec![0.0, 0.0, 0.5, -0.5]));
    }

    #[test]
    fn softmax_score_hvp_closed_form() {
        let p = TabularSoftmax::new(1, 2);
        let theta = Vector::zeros(2);
        let v = Vector::from_vec(vec![1.0, -1.0]);
        let h = p.score_hvp(&theta, 0, &0, &v);
        assert_abs_diff_eq!(h[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h[1], 0.5, epsilon = 1e-15);
        assert_eq!(p.score_hvp(&theta, 0, &1, &Vector::zeros(2)), Vector::zeros(2));
    }

    #[test]
    fn score_and_fisher_identities() {
        let p = TabularSoftmax::new(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let theta = random_theta(12, &mut rng);
            for s in 0..3 {
                let pi = p.probs(&theta, s);
                let mut mean = Vector::zeros(12);
                let mut fisher = nalgebra::DMatrix::zeros(12, 12);
                let mut neg_hess = nalgebra::DMatrix::zeros(12, 12);
                for a in 0..4 {
                    let sc = p.score(&theta, s, &a);
                    mean += &sc * pi[a];
                    fisher += &sc * sc.transpose() * pi[a];
                    for j in 0..12 {
                        let mut e = Vector::zeros(12);
                        e[j] = 1.0;
                        let col = p.score_hvp(&theta, s, &a, &e);
                        neg_hess.column_mut(j).axpy(-pi[a], &col, 1.0);
                    }
                }
                assert!(mean.amax() < 1e-12);
                assert!((fisher - neg_hess).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let sm = TabularSoftmax::new(3, 3);
        let lg = LinearGaussian::one_hot(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let s = rng.random_range(0..3);

            let theta = random_theta(9, &mut rng);
            let a = rng.random_range(0..3usize);
            let v = random_theta(9, &mut rng);
            check_fd(&sm, &theta, s, &a, &v, h);

            let mut theta = random_theta(lg.dim(), &mut rng);
            for j in 0..2 {
                theta[6 + j] *= 0.3;
            }
            let act = lg.sample(&theta, s, &mut rng);
            let v = random_theta(lg.dim(), &mut rng);
            check_fd(&lg, &theta, s, &act, &v, h);
        }
    }

    fn check_fd<P: Policy>(p: &P, theta: &Vector, s: usize, a: &P::Action, v: &Vector, h: f64) {
        let d = p.dim();
        let score = p.score(theta, s, a);
        for i in 0..d {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (p.log_prob(&tp, s, a) - p.log_prob(&tm, s, a)) / (2.0 * h);
            assert!((fd - score[i]).abs() < 1e-7 * score[i].abs().max(1.0), "score {i}: {fd} vs {}", score[i]);
        }
        let hv = p.score_hvp(theta, s, a, v);
        let fd = (p.score(&(theta + v * h), s, a) - p.score(&(theta - v * h), s, a)) / (2.0 * h);
        assert!((fd - &hv).amax() < 1e-6 * hv.amax().max(1.0));
    }

    #[test]
    fn gaussian_log_prob_matches_density() {
        let lg = LinearGaussian::one_hot(2, 2);
        let theta = Vector::from_vec(vec![0.5, -1.0, 2.0, 0.1, (0.7f64).ln(), (1.3f64).ln()]);
        let a = Vector::from_vec(vec![0.2, 1.9]);
        // s = 1: means (−1, 0.1); independent N(μ, σ²) densities.
        let dens = |x: f64, m: f64, sd: f64| {
            (-(x - m) * (x - m) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        };
        let expected = (dens(0.2, -1.0, 0.7) * dens(1.9, 0.1, 1.3)).ln();
        assert_abs_diff_eq!(lg.log_prob(&theta, 1, &a), expected, epsilon = 1e-13);
    }

    #[test]
    fn softmax_bounds_hold_on_grid() {
        let (g_bound, l_bound) = policy_constants(PolicyKind::TabularSoftmax).unwrap();
        let p = TabularSoftmax::new(1, 3);
        let steps = 40;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let pi = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                // Spectral norm of diag(π) − ππᵀ via dense eigenvalues.
                let m = nalgebra::DMatrix::from_fn(3, 3, |r, c| if r == c { pi[r] } else { 0.0 } - pi[r] * pi[c]);
                let eig = m.symmetric_eigenvalues();
                assert!(eig.amax() <= l_bound + 1e-12);
                for a in 0..3 {
                    let n2: f64 = (0..3).map(|b| ((a == b) as u8 as f64 - pi[b]).powi(2)).sum();
                    assert!(n2.sqrt() <= g_bound + 1e-12);
                }
            }
        }
        let theta = Vector::from_vec(vec![1.0, -3.0, 0.5]);
        for a in 0..3 {
            assert!(p.score(&theta, 0, &a).norm() <= g_bound);
        }
        assert!(matches!(policy_constants(PolicyKind::LinearGaussian), Err(PolicyError::Unsupported(_))));
    }

    #[test]
    fn params_text_roundtrip() {
        let theta = Vector::from_vec(vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0]);
        let text = write_params(PolicyKind::TabularSoftmax, &theta);
        assert!(text.starts_with("tabular-softmax 4\n"));
        let (kind, back) = read_params(&text).unwrap();
        assert_eq!(kind, PolicyKind::TabularSoftmax);
        assert_eq!(back, theta);
        assert!(read_params("tabular-softmax 3\n1\n2\n").is_err());
    }
}
