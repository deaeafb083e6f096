//! Trust-region subproblems.
//!
//! Three solvers live here:
//!
//! * [`solve_drtr`]: the two-dimensional generalized trust-region problem
//!   `min cᵀα + ½αᵀQα  s.t. ‖α‖_G ≤ Δ` over the coefficients of the step
//!   `−α₁g + α₂d` in `span{g, d}`;
//! * [`solve_radius_free`]: the Lagrangian form where a fixed multiplier
//!   `λ` replaces the radius;
//! * [`solve_fdtr_steihaug`]: the full-dimension problem, matrix free, by
//!   Steihaug's truncated conjugate gradient.
//!
//! [`subspace_step`] glues the reduced model to the parameter space and
//! takes care of the degenerate one-dimensional case.

use thiserror::Error;

use crate::numerics::{dot2, norm2, Sym2, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustRegionError {
    #[error("metric matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NonPsdMetric(f64),
    #[error("metric matrix is singular; use the one-dimensional fallback")]
    SingularMetric,
    #[error("multiplier search did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("regularized system is not positive definite (min eigenvalue {0:e})")]
    IndefiniteSystem(f64),
    #[error("step has a component of relative size {0:e} outside span{{g, d}}")]
    NotInSubspace(f64),
    #[error("invalid trust radius {0}")]
    InvalidRadius(f64),
}

/// Reduced quadratic model `(Q, c, G, Δ)` over `α ∈ ℝ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoDimModel {
    pub q: Sym2,
    pub c: [f64; 2],
    pub metric: Sym2,
    pub delta: f64,
}

impl TwoDimModel {
    /// `cᵀα + ½αᵀQα`
    pub fn value(&self, alpha: [f64; 2]) -> f64 {
        dot2(self.c, alpha) + 0.5 * self.q.quad(alpha)
    }

    pub fn metric_norm(&self, alpha: [f64; 2]) -> f64 {
        self.metric.quad(alpha).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrSolution {
    pub alpha: [f64; 2],
    pub lambda: f64,
    pub predicted_reduction: f64,
}

const MAX_SECULAR_ITERS: usize = 200;
const SECULAR_TOL: f64 = 1e-12;

/// Solves the reduced trust-region problem exactly.
///
/// The pencil `(Q, G)` is reduced to a standard problem through the Cholesky
/// factor of `G`; the multiplier is then the root of the secular equation
/// `‖α(λ)‖_G = Δ`, found by safeguarded Newton on `1/‖α(λ)‖ − 1/Δ` with a
/// bisection fallback. The hard case is completed with the eigenvector of
/// the leftmost pencil eigenvalue.
pub fn solve_drtr(model: &TwoDimModel) -> Result<TrSolution, TrustRegionError> {
    let delta = model.delta;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(TrustRegionError::InvalidRadius(delta));
    }
    let g = model.metric;
    let g_min = g.min_eigenvalue();
    if g_min < -1e-8 {
        return Err(TrustRegionError::NonPsdMetric(g_min));
    }
    if g.xx <= 0.0 || g.det() <= 1e-12 * g.xx.abs() * g.yy.abs() || g.det() <= 0.0 {
        return Err(TrustRegionError::SingularMetric);
    }

    // Jacobi scaling makes the metric unit-diagonal; α = D β.
    let dx = 1.0 / g.xx.sqrt();
    let dy = 1.0 / g.yy.sqrt();
    let g = Sym2::new(1.0, g.xy * dx * dy, 1.0);
    let q = Sym2::new(model.q.xx * dx * dx, model.q.xy * dx * dy, model.q.yy * dy * dy);
    let c = [model.c[0] * dx, model.c[1] * dy];

    // G = L Lᵀ with L lower triangular.
    let l11 = g.xx.sqrt();
    let l21 = g.xy / l11;
    let l22 = (g.yy - l21 * l21).max(0.0).sqrt();
    if l22 == 0.0 {
        return Err(TrustRegionError::SingularMetric);
    }
    let linv = |v: [f64; 2]| -> [f64; 2] {
        let y0 = v[0] / l11;
        [y0, (v[1] - l21 * y0) / l22]
    };
    let linv_t = |v: [f64; 2]| -> [f64; 2] {
        let y1 = v[1] / l22;
        [(v[0] - l21 * y1) / l11, y1]
    };
    // Q̂ = L⁻¹ Q L⁻ᵀ, built column by column.
    let col0 = linv(q.apply(linv_t([1.0, 0.0])));
    let col1 = linv(q.apply(linv_t([0.0, 1.0])));
    let q_hat = Sym2::new(col0[0], 0.5 * (col0[1] + col1[0]), col1[1]);
    let c_hat = linv(c);

    let beta = solve_standard_tr(&q_hat, c_hat, delta)?;
    let scaled = linv_t(beta.step);
    let alpha = [scaled[0] * dx, scaled[1] * dy];
    let predicted_reduction = (-model.value(alpha)).max(0.0);
    Ok(TrSolution { alpha, lambda: beta.lambda, predicted_reduction })
}

struct StandardSolution {
    step: [f64; 2],
    lambda: f64,
}

/// `min cᵀx + ½xᵀAx  s.t. ‖x‖ ≤ Δ` for symmetric 2×2 `A`.
fn solve_standard_tr(a: &Sym2, c: [f64; 2], delta: f64) -> Result<StandardSolution, TrustRegionError> {
    // The minimizer is invariant under positive scaling of the objective.
    let s = a.max_abs().max(norm2(c) / delta);
    if s == 0.0 {
        return Ok(StandardSolution { step: [0.0, 0.0], lambda: 0.0 });
    }
    let a = Sym2::new(a.xx / s, a.xy / s, a.yy / s);
    let c = [c[0] / s, c[1] / s];
    let mut sol = solve_unit_tr(&a, c, delta)?;
    sol.lambda *= s;
    Ok(sol)
}

fn solve_unit_tr(a: &Sym2, c: [f64; 2], delta: f64) -> Result<StandardSolution, TrustRegionError> {
    let (mu, u) = a.eigen();
    let gam = [dot2(u[0], c), dot2(u[1], c)];
    let c_norm = norm2(c);
    let scale = a.max_abs().max(1.0);
    let compose = |w: [f64; 2]| -> [f64; 2] {
        [w[0] * u[0][0] + w[1] * u[1][0], w[0] * u[0][1] + w[1] * u[1][1]]
    };
    // Components of x(λ) = −(A + λI)⁻¹c in the eigenbasis.
    let coords = |lambda: f64| -> [f64; 2] {
        let mut w = [0.0; 2];
        for i in 0..2 {
            let den = mu[i] + lambda;
            w[i] = if gam[i] == 0.0 { 0.0 } else { -gam[i] / den };
        }
        w
    };

    if c_norm == 0.0 && mu[0] >= 0.0 {
        return Ok(StandardSolution { step: [0.0, 0.0], lambda: 0.0 });
    }

    // Interior solution.
    if mu[0] > 1e-14 * scale {
        let w = coords(0.0);
        if norm2(w) <= delta {
            return Ok(StandardSolution { step: compose(w), lambda: 0.0 });
        }
    }

    let lambda_lo = (-mu[0]).max(0.0);
    let hard_tol = 1e-13 * c_norm.max(f64::MIN_POSITIVE);

    // Hard case: c has (numerically) no weight on the leftmost eigenvector.
    let hard_case = |lambda: f64| -> Option<StandardSolution> {
        let den = mu[1] + lambda;
        let w1 = if gam[1] == 0.0 { 0.0 } else if den > 0.0 { -gam[1] / den } else { return None };
        if w1.abs() > delta {
            return None;
        }
        let tau = if lambda > 0.0 { (delta * delta - w1 * w1).max(0.0).sqrt() } else { 0.0 };
        Some(StandardSolution { step: compose([tau, w1]), lambda })
    };
    if gam[0].abs() <= hard_tol {
        if let Some(sol) = hard_case(lambda_lo) {
            return Ok(sol);
        }
    }

    // Secular equation on (lambda_lo, lambda_hi].
    let phi = |lambda: f64| norm2(coords(lambda)) - delta;
    let mut lo = lambda_lo;
    let mut hi = lambda_lo + c_norm / delta + 1e-12 * scale;
    while phi(hi) > 0.0 {
        hi = 2.0 * hi + 1.0;
    }
    let mut lambda = hi;
    let mut best = (f64::INFINITY, hi);
    for _ in 0..MAX_SECULAR_ITERS {
        let w = coords(lambda);
        let norm = norm2(w);
        let f = norm - delta;
        if f.abs() < best.0 {
            best = (f.abs(), lambda);
        }
        if f.abs() <= SECULAR_TOL {
            return Ok(StandardSolution { step: compose(w), lambda });
        }
        if f > 0.0 {
            lo = lo.max(lambda);
        } else {
            hi = hi.min(lambda);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(1.0) {
            break;
        }
        // Newton on ψ(λ) = 1/‖x(λ)‖ − 1/Δ, which is close to linear in λ.
        let mut dnorm2 = 0.0;
        for i in 0..2 {
            let den = mu[i] + lambda;
            if den > 0.0 {
                dnorm2 += -2.0 * gam[i] * gam[i] / (den * den * den);
            }
        }
        let mut next = if norm > 0.0 && dnorm2 < 0.0 {
            let psi = 1.0 / norm - 1.0 / delta;
            let dpsi = -0.5 * dnorm2 / (norm * norm * norm);
            lambda - psi / dpsi
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        lambda = next;
    }

    // The bracket has collapsed onto the pole; this is the near-hard case.
    let lambda = best.1;
    let w = coords(lambda);
    if (norm2(w) - delta).abs() <= 1e-9 * delta.max(1.0) {
        return Ok(StandardSolution { step: compose(w), lambda });
    }
    if gam[0].abs() <= 1e-8 * c_norm.max(1.0) {
        if let Some(sol) = hard_case(lambda_lo) {
            return Ok(sol);
        }
    }
    Err(TrustRegionError::NoConvergence(MAX_SECULAR_ITERS))
}

/// Minimizes `cᵀα + ½αᵀQα + λ‖α‖²_G`, i.e. solves `(Q + 2λG)α = −c`.
pub fn solve_radius_free(q: &Sym2, c: [f64; 2], metric: &Sym2, lambda: f64) -> Result<[f64; 2], TrustRegionError> {
    let m = q.add_scaled(2.0 * lambda, metric);
    // Judge definiteness after scaling by the metric diagonal, so the test
    // does not depend on the lengths of g and d (identity metric: unscaled).
    let sx = if metric.xx > 0.0 { metric.xx.sqrt().recip() } else { 1.0 };
    let sy = if metric.yy > 0.0 { metric.yy.sqrt().recip() } else { 1.0 };
    let scaled = Sym2::new(m.xx * sx * sx, m.xy * sx * sy, m.yy * sy * sy);
    let min_eig = scaled.min_eigenvalue();
    if !(min_eig > 1e-12) {
        return Err(TrustRegionError::IndefiniteSystem(min_eig));
    }
    m.solve([-c[0], -c[1]]).ok_or(TrustRegionError::IndefiniteSystem(min_eig))
}

/// Reduced model data `(Q, c, G)` from the gradient estimate `g`, the
/// previous direction `d` and the Hessian action. The off-diagonal of `Q`
/// symmetrizes the two mixed products because single-sample Hessian
/// estimates are not symmetric.
pub fn build_drtr_data<F>(g: &Vector, d: &Vector, mut hvp: F) -> (Sym2, [f64; 2], Sym2)
where
    F: FnMut(&Vector) -> Vector,
{
    let hg = hvp(g);
    let hd = hvp(d);
    reduced_from_products(g, d, &hg, &hd)
}

fn reduced_from_products(g: &Vector, d: &Vector, hg: &Vector, hd: &Vector) -> (Sym2, [f64; 2], Sym2) {
    let gg = g.dot(g);
    let gd = g.dot(d);
    let dd = d.dot(d);
    let mixed = -0.5 * (d.dot(hg) + g.dot(hd));
    let q = Sym2::new(g.dot(hg), mixed, d.dot(hd));
    let c = [-gg, gd];
    let metric = Sym2::new(gg, -gd, dd);
    (q, c, metric)
}

/// True when `span{g, d}` is numerically one dimensional (or empty).
pub fn is_degenerate(g: &Vector, d: &Vector) -> bool {
    let gg = g.dot(g);
    let dd = d.dot(d);
    if dd.sqrt() < 1e-12 || gg == 0.0 {
        return true;
    }
    let gd = g.dot(d);
    gg * dd - gd * gd < 1e-12 * gg * dd
}

/// `−α₁g + α₂d`
pub fn lift_direction(alpha: [f64; 2], g: &Vector, d: &Vector) -> Vector {
    g * (-alpha[0]) + d * alpha[1]
}

/// How the reduced step is regularized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Trust radius `Δ` in the parameter norm.
    Radius(f64),
    /// Fixed multiplier `λ` of the radius-free problem.
    Regularized(f64),
}

/// Reduced step mapped back to parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceStep {
    pub alpha: [f64; 2],
    pub lambda: f64,
    /// `m(0) − m(α)` of the quadratic model (without the `λ` term).
    pub predicted_reduction: f64,
    pub step: Vector,
    /// The span collapsed and the step was taken along `−g` only.
    pub one_dimensional: bool,
    /// Smallest eigenvalue of the (symmetrized) Hessian restricted to the span.
    pub min_eig: f64,
    pub model: TwoDimModel,
}

impl SubspaceStep {
    /// Recomputes the step after rescaling `alpha` (used by step clipping).
    pub fn with_alpha(&self, alpha: [f64; 2], g: &Vector, d: &Vector) -> SubspaceStep {
        let mut out = self.clone();
        out.alpha = alpha;
        out.step = lift_direction(alpha, g, d);
        out.predicted_reduction = -self.model.value(alpha);
        out
    }
}

/// One dimension-reduced step.
///
/// Uses two Hessian actions (`Hg`, `Hd`) in the regular case and a single
/// one (`Hg`) when `span{g, d}` is degenerate, e.g. on the first iteration.
pub fn subspace_step<F>(g: &Vector, d: &Vector, mut hvp: F, rule: StepRule) -> Result<SubspaceStep, TrustRegionError>
where
    F: FnMut(&Vector) -> Vector,
{
    let n = g.len();
    let gg = g.dot(g);
    if gg == 0.0 {
        let zero = TwoDimModel { q: Sym2::ZERO, c: [0.0, 0.0], metric: Sym2::ZERO, delta: radius_of(rule) };
        return Ok(SubspaceStep {
            alpha: [0.0, 0.0],
            lambda: 0.0,
            predicted_reduction: 0.0,
            step: Vector::zeros(n),
            one_dimensional: true,
            min_eig: f64::NAN,
            model: zero,
        });
    }

    if is_degenerate(g, d) {
        let hg = hvp(g);
        let curv = g.dot(&hg);
        let model = TwoDimModel {
            q: Sym2::new(curv, 0.0, 0.0),
            c: [-gg, 0.0],
            metric: Sym2::new(gg, 0.0, 0.0),
            delta: radius_of(rule),
        };
        let (a, lambda) = match rule {
            StepRule::Radius(delta) => solve_one_dim(curv, gg, delta),
            StepRule::Regularized(lambda) => {
                let den = curv + 2.0 * lambda * gg;
                if !(den > 1e-12 * gg) {
                    return Err(TrustRegionError::IndefiniteSystem(den / gg));
                }
                (gg / den, lambda)
            }
        };
        let alpha = [a, 0.0];
        return Ok(SubspaceStep {
            alpha,
            lambda,
            predicted_reduction: (-model.value(alpha)).max(0.0),
            step: g * (-a),
            one_dimensional: true,
            min_eig: curv / gg,
            model,
        });
    }

    let hg = hvp(g);
    let hd = hvp(d);
    let (q, c, metric) = reduced_from_products(g, d, &hg, &hd);
    let model = TwoDimModel { q, c, metric, delta: radius_of(rule) };
    let min_eig = pencil_min_eig(&q, &metric);
    let (alpha, lambda) = match rule {
        StepRule::Radius(_) => {
            let sol = solve_drtr(&model)?;
            (sol.alpha, sol.lambda)
        }
        StepRule::Regularized(lambda) => (solve_radius_free(&q, c, &metric, lambda)?, lambda),
    };
    Ok(SubspaceStep {
        alpha,
        lambda,
        predicted_reduction: -model.value(alpha),
        step: lift_direction(alpha, g, d),
        one_dimensional: false,
        min_eig,
        model,
    })
}

fn radius_of(rule: StepRule) -> f64 {
    match rule {
        StepRule::Radius(d) => d,
        StepRule::Regularized(_) => f64::INFINITY,
    }
}

/// `min −‖g‖²a + ½a²·curv  s.t. |a|·‖g‖ ≤ Δ`; returns `(a, λ)`.
fn solve_one_dim(curv: f64, gg: f64, delta: f64) -> (f64, f64) {
    let a_max = delta / gg.sqrt();
    if curv > 0.0 {
        let a = gg / curv;
        if a <= a_max {
            return (a, 0.0);
        }
    }
    // Boundary: (curv + λ‖g‖²)a = ‖g‖².
    let lambda = ((gg / a_max - curv) / gg).max(0.0);
    (a_max, lambda)
}

/// Smallest generalized eigenvalue of the pencil `(Q, G)`.
pub fn pencil_min_eig(q: &Sym2, metric: &Sym2) -> f64 {
    let l11 = metric.xx.sqrt();
    let l21 = metric.xy / l11;
    let l22 = (metric.yy - l21 * l21).max(0.0).sqrt();
    if !(l11 > 0.0 && l22 > 0.0) {
        return f64::NAN;
    }
    let linv = |v: [f64; 2]| {
        let y0 = v[0] / l11;
        [y0, (v[1] - l21 * y0) / l22]
    };
    let linv_t = |v: [f64; 2]| {
        let y1 = v[1] / l22;
        [(v[0] - l21 * y1) / l11, y1]
    };
    let col0 = linv(q.apply(linv_t([1.0, 0.0])));
    let col1 = linv(q.apply(linv_t([0.0, 1.0])));
    Sym2::new(col0[0], 0.5 * (col0[1] + col1[0]), col1[1]).min_eigenvalue()
}

/// Residuals of the projected full-space optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖Vᵀ[(H̃ + λI)d + g]‖ / max(1, ‖g‖)`
    pub stationarity: f64,
    /// `max(0, ‖d‖ − Δ)`
    pub feasibility: f64,
    /// `|λ(Δ − ‖d‖)|`
    pub complementarity: f64,
    /// Smallest eigenvalue of `VᵀH̃V + λI`.
    pub min_eig_shifted: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

/// Checks a full-space step against the conditions of the projected problem
/// `min gᵀd + ½dᵀH̃d s.t. ‖d‖ ≤ Δ` with `H̃ = VVᵀ H VVᵀ`, `V` an orthonormal
/// basis of `span{g, d_prev}`. The Hessian is symmetrized on the subspace.
pub fn check_subspace_kkt<F>(
    d_step: &Vector,
    lambda: f64,
    g: &Vector,
    d_prev: &Vector,
    mut hvp: F,
    delta: f64,
) -> Result<KktReport, TrustRegionError>
where
    F: FnMut(&Vector) -> Vector,
{
    let basis = orthonormal_basis(&[g, d_prev], 1e-10);
    let step_norm = d_step.norm();
    let coords: Vec<f64> = basis.iter().map(|v| v.dot(d_step)).collect();
    let mut inside = Vector::zeros(d_step.len());
    for (v, c) in basis.iter().zip(&coords) {
        inside += v * *c;
    }
    let outside = (d_step - &inside).norm();
    if outside > 1e-8 * step_norm.max(f64::MIN_POSITIVE) && step_norm > 0.0 {
        return Err(TrustRegionError::NotInSubspace(outside / step_norm));
    }

    let k = basis.len();
    let hv: Vec<Vector> = basis.iter().map(&mut hvp).collect();
    let mut reduced = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            reduced[i][j] = 0.5 * (basis[i].dot(&hv[j]) + basis[j].dot(&hv[i]));
        }
    }
    let mut res = 0.0;
    for i in 0..k {
        let mut r = basis[i].dot(g) + lambda * coords[i];
        for j in 0..k {
            r += reduced[i][j] * coords[j];
        }
        res += r * r;
    }
    let min_eig_shifted = match k {
        0 => 0.0,
        1 => reduced[0][0],
        _ => Sym2::new(reduced[0][0], reduced[0][1], reduced[1][1]).min_eigenvalue(),
    } + lambda;
    Ok(KktReport {
        stationarity: res.sqrt() / g.norm().max(1.0),
        feasibility: (step_norm - delta).max(0.0),
        complementarity: (lambda * (delta - step_norm)).abs(),
        min_eig_shifted,
    })
}

/// Modified Gram–Schmidt; vectors whose residual norm falls below
/// `tol·max(1, ‖v‖)` are dropped.
pub fn orthonormal_basis(vectors: &[&Vector], tol: f64) -> Vec<Vector> {
    let mut basis: Vec<Vector> = Vec::new();
    for v in vectors {
        let mut w = (*v).clone();
        for b in &basis {
            let p = b.dot(&w);
            w -= b * p;
        }
        let n = w.norm();
        if n > 0.0 && n > tol * v.norm() {
            basis.push(w / n);
        }
    }
    basis
}

/// Why the truncated CG iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgTermination {
    /// Residual fell below `tol·‖g‖` inside the region.
    Converged,
    /// An iterate left the region; the step was cut at the boundary.
    Boundary,
    /// Non-positive curvature direction; followed to the boundary.
    NegativeCurvature,
    /// Iteration cap reached; the last iterate is returned.
    MaxIter,
    /// `g = 0`; the step is zero.
    ZeroGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdtrSolution {
    pub d: Vector,
    /// Multiplier estimate `‖Hd + g‖/‖d‖` on the boundary, zero inside.
    pub lambda_hat: f64,
    pub boundary_hit: bool,
    pub cg_iterations: usize,
    pub termination: CgTermination,
}

/// Steihaug–Toint truncated conjugate gradient for
/// `min gᵀd + ½dᵀHd  s.t. ‖d‖ ≤ Δ`.
pub fn solve_fdtr_steihaug<F>(g: &Vector, mut hvp: F, delta: f64, tol: f64, max_iter: usize) -> FdtrSolution
where
    F: FnMut(&Vector) -> Vector,
{
    let n = g.len();
    let g_norm = g.norm();
    let mut d = Vector::zeros(n);
    if g_norm == 0.0 {
        return FdtrSolution {
            d,
            lambda_hat: 0.0,
            boundary_hit: false,
            cg_iterations: 0,
            termination: CgTermination::ZeroGradient,
        };
    }
    let mut r = g.clone();
    let mut p = -g;
    let mut rr = r.dot(&r);
    let target = tol * g_norm;

    for k in 0..max_iter {
        let hp = hvp(&p);
        let curv = p.dot(&hp);
        if curv <= 0.0 {
            let tau = boundary_tau(&d, &p, delta);
            d += &p * tau;
            return finish(d, g, &mut hvp, true, k + 1, CgTermination::NegativeCurvature);
        }
        let step = rr / curv;
        let next = &d + &p * step;
        if next.norm() >= delta {
            let tau = boundary_tau(&d, &p, delta);
            d += &p * tau;
            return finish(d, g, &mut hvp, true, k + 1, CgTermination::Boundary);
        }
        d = next;
        r += &hp * step;
        let rr_next = r.dot(&r);
        if rr_next.sqrt() <= target {
            return finish(d, g, &mut hvp, false, k + 1, CgTermination::Converged);
        }
        p = &p * (rr_next / rr) - &r;
        rr = rr_next;
    }
    finish(d, g, &mut hvp, false, max_iter, CgTermination::MaxIter)
}

/// Positive root `τ` of `‖d + τp‖ = Δ`.
fn boundary_tau(d: &Vector, p: &Vector, delta: f64) -> f64 {
    let pp = p.dot(p);
    let dp = d.dot(p);
    let dd = d.dot(d);
    let disc = (dp * dp + pp * (delta * delta - dd)).max(0.0);
    (-dp + disc.sqrt()) / pp
}

fn finish<F>(d: Vector, g: &Vector, hvp: &mut F, boundary: bool, iters: usize, termination: CgTermination) -> FdtrSolution
where
    F: FnMut(&Vector) -> Vector,
{
    let lambda_hat = if boundary {
        let dn = d.norm();
        if dn > 0.0 {
            (hvp(&d) + g).norm() / dn
        } else {
            0.0
        }
    } else {
        0.0
    };
    FdtrSolution { d, lambda_hat, boundary_hit: boundary, cg_iterations: iters, termination }
}
