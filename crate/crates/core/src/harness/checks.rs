use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::estimators::{
    enumerate_mean, expected_hvp, gpomdp_gradient, havr_correction, havr_expectation_exact, pgt_gradient,
    variance_report, EstimatorKind, HessianVariant, TheoryConstants,
};
use crate::mdp::{
    dp_gradient, enumerate_trajectories, exact_gradient, exact_hessian, exact_objective, truncated_return,
    truncation_bounds, MdpError, SampleStream, TabularMdp,
};
use crate::numerics::{Sym2, Vector};
use crate::optimizers::{
    sample_complexity, theory_schedule, MdpOracle, Oracle, OptimizerError, ScheduleVariant,
};
use crate::policy::{policy_constants, Policy, PolicyKind, TabularSoftmax};
use crate::trust_region::{check_subspace_kkt, solve_drtr, subspace_step, StepRule, TwoDimModel};

/// Fixture whose rewards break the declared bound.
pub const CORRUPTED_FIXTURE: &str = include_str!("../../fixtures/corrupted_reward.mdp");

/// One cross-check: the worst observed residual against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
    /// Wall time of the group the check belongs to.
    pub seconds: f64,
}

impl CheckResult {
    fn at_most(name: &str, observed: f64, tolerance: f64, detail: String) -> Self {
        Self { name: name.into(), observed, tolerance, passed: observed <= tolerance, detail, seconds: 0.0 }
    }

    fn failed(name: &str, detail: String) -> Self {
        Self { name: name.into(), observed: f64::NAN, tolerance: 0.0, passed: false, detail, seconds: 0.0 }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} observed={:.3e} tolerance={:.3e} ({:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn timed(start: Instant, mut checks: Vec<CheckResult>) -> Vec<CheckResult> {
    let s = start.elapsed().as_secs_f64();
    for c in &mut checks {
        c.seconds = s;
    }
    checks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleScope {
    Estimators,
    Solver,
    All,
}

impl FromStr for OracleScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "estimators" => Ok(OracleScope::Estimators),
            "solver" => Ok(OracleScope::Solver),
            "all" => Ok(OracleScope::All),
            _ => Err(format!("unknown scope `{s}` (estimators, solver, all)")),
        }
    }
}

impl fmt::Display for OracleScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleScope::Estimators => "estimators",
            OracleScope::Solver => "solver",
            OracleScope::All => "all",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub scope: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    /// 0 when every check passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

/// Runs the cross-checks in `scope` at their stated tolerances.
pub fn run_oracle_suite(scope: OracleScope) -> OracleReport {
    let mut checks = Vec::new();
    if matches!(scope, OracleScope::Solver | OracleScope::All) {
        checks.extend(solver_grid_checks(1000, 1));
        checks.extend(subspace_equivalence_checks(200, 2));
    }
    if matches!(scope, OracleScope::Estimators | OracleScope::All) {
        checks.extend(dp_checks());
        checks.extend(unbiasedness_checks());
        checks.extend(havr_checks(20, 100_000, 3));
        checks.extend(variance_checks());
    }
    if scope == OracleScope::All {
        checks.extend(truncation_checks());
        checks.extend(schedule_checks());
        checks.extend(negative_control());
    }
    OracleReport { scope: scope.to_string(), passed: checks.iter().all(|c| c.passed), checks }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_theta(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| rng.random_range(-scale..scale)))
}

/// Lower Cholesky factor `(l11, l21, l22)` of a 2×2 positive definite matrix.
fn cholesky2(g: &Sym2) -> (f64, f64, f64) {
    let l11 = g.xx.sqrt();
    let l21 = g.xy / l11;
    (l11, l21, (g.yy - l21 * l21).sqrt())
}

/// Random reduced model; every tenth instance is a hard case (the linear
/// term has no weight on the leftmost eigenvector of the pencil).
fn random_model(rng: &mut ChaCha8Rng, hard: bool) -> TwoDimModel {
    let a = [normal(rng), normal(rng), normal(rng), normal(rng)];
    let metric = Sym2::new(a[0] * a[0] + a[1] * a[1] + 0.1, a[0] * a[2] + a[1] * a[3], a[2] * a[2] + a[3] * a[3] + 0.1);
    let delta = rng.random_range(-2.0f64..1.0).exp();
    if !hard {
        let q = Sym2::new(2.0 * normal(rng), 2.0 * normal(rng), 2.0 * normal(rng));
        return TwoDimModel { q, c: [normal(rng), normal(rng)], metric, delta };
    }
    let (l11, l21, l22) = cholesky2(&metric);
    let mu1 = -normal(rng).abs() - 0.1;
    let mu2 = mu1 + normal(rng).abs() + 0.1;
    let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (cs, sn) = (phi.cos(), phi.sin());
    // Q̂ = R diag(μ1, μ2) Rᵀ and ĉ along the second eigenvector.
    let q_hat = Sym2::new(mu1 * cs * cs + mu2 * sn * sn, (mu1 - mu2) * cs * sn, mu1 * sn * sn + mu2 * cs * cs);
    let s = rng.random_range(0.1..0.9) * (mu2 - mu1) * delta;
    let c_hat = [-s * sn, s * cs];
    // Q = L Q̂ Lᵀ, c = L ĉ.
    let lmul = |v: [f64; 2]| [l11 * v[0], l21 * v[0] + l22 * v[1]];
    let c = lmul(c_hat);
    let col0 = lmul(q_hat.apply([l11, 0.0]));
    let col1 = lmul(q_hat.apply([l21, l22]));
    TwoDimModel { q: Sym2::new(col0[0], 0.5 * (col0[1] + col1[0]), col1[1]), c, metric, delta }
}

/// Minimum of the model over the metric ball by a polar grid in whitened
/// coordinates followed by shrinking local grids.
fn grid_minimum(model: &TwoDimModel) -> f64 {
    let (l11, l21, l22) = cholesky2(&model.metric);
    let value = |r: f64, phi: f64| {
        let b = [model.delta * r * phi.cos(), model.delta * r * phi.sin()];
        // α = L⁻ᵀ β
        let a1 = b[1] / l22;
        let a0 = (b[0] - l21 * a1) / l11;
        model.value([a0, a1])
    };
    let (nr, nphi) = (120usize, 720usize);
    let tau = std::f64::consts::TAU;
    let mut best = (0.0, 0.0, value(0.0, 0.0));
    for i in 0..=nr {
        let r = i as f64 / nr as f64;
        for j in 0..nphi {
            let phi = tau * j as f64 / nphi as f64;
            let v = value(r, phi);
            if v < best.2 {
                best = (r, phi, v);
            }
        }
    }
    let (mut dr, mut dphi) = (1.0 / nr as f64, tau / nphi as f64);
    for _ in 0..40 {
        let (r0, p0) = (best.0, best.1);
        for i in -10..=10 {
            let r = (r0 + dr * i as f64 / 10.0).clamp(0.0, 1.0);
            for j in -10..=10 {
                let phi = p0 + dphi * j as f64 / 10.0;
                let v = value(r, phi);
                if v < best.2 {
                    best = (r, phi, v);
                }
            }
        }
        dr *= 0.5;
        dphi *= 0.5;
    }
    best.2
}

/// Exact reduced solver against the grid oracle: value gap, KKT residuals
/// and the sufficient-reduction inequality.
pub fn solver_grid_checks(instances: usize, seed: u64) -> Vec<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gap, mut kkt, mut reduction) = (0.0f64, 0.0f64, 0.0f64);
    let mut hard_count = 0;
    for k in 0..instances {
        let hard = k % 10 == 9;
        hard_count += hard as usize;
        let model = random_model(&mut rng, hard);
        let sol = match solve_drtr(&model) {
            Ok(s) => s,
            Err(e) => return vec![CheckResult::failed("drtr-grid-gap", format!("instance {k}: {e}"))],
        };
        let (alpha, lambda) = (sol.alpha, sol.lambda);
        gap = gap.max((model.value(alpha) - grid_minimum(&model)).abs());

        let shifted = model.q.add_scaled(lambda, &model.metric);
        let r = shifted.apply(alpha);
        let c_norm = (model.c[0].hypot(model.c[1])).max(1.0);
        let stationarity = (r[0] + model.c[0]).hypot(r[1] + model.c[1]) / c_norm;
        let norm = model.metric_norm(alpha);
        let feasibility = (norm - model.delta).max(0.0);
        let complementarity = (lambda * (model.delta - norm)).abs();
        let (l11, l21, l22) = cholesky2(&model.metric);
        // L⁻¹(Q + λG)L⁻ᵀ must be positive semidefinite.
        let linv = |v: [f64; 2]| {
            let y0 = v[0] / l11;
            [y0, (v[1] - l21 * y0) / l22]
        };
        let linv_t = |v: [f64; 2]| {
            let y1 = v[1] / l22;
            [(v[0] - l21 * y1) / l11, y1]
        };
        let c0 = linv(shifted.apply(linv_t([1.0, 0.0])));
        let c1 = linv(shifted.apply(linv_t([0.0, 1.0])));
        let curvature = (-Sym2::new(c0[0], 0.5 * (c0[1] + c1[0]), c1[1]).min_eigenvalue()).max(0.0);
        kkt = kkt.max(stationarity).max(feasibility).max(complementarity).max((-lambda).max(0.0)).max(curvature);

        let predicted = -model.value(alpha);
        reduction = reduction.max(0.5 * lambda * norm * norm - predicted);
    }
    let detail = format!("{instances} instances, {hard_count} hard cases");
    timed(
        start,
        vec![
            CheckResult::at_most("drtr-grid-gap", gap, 1e-5, detail.clone()),
            CheckResult::at_most("drtr-kkt", kkt, 1e-8, detail.clone()),
            CheckResult::at_most("drtr-reduction", reduction.max(0.0), 1e-10, detail),
        ],
    )
}

/// Lifted reduced steps along a sampled optimization path satisfy the
/// optimality conditions of the subspace-projected full problem.
pub fn subspace_equivalence_checks(iterates: usize, seed: u64) -> Vec<CheckResult> {
    let start = Instant::now();
    let name = "subspace-kkt";
    let mdp = TabularMdp::bench5x3();
    let policy = TabularSoftmax::new(mdp.n_states, mdp.n_actions);
    let horizon = mdp.horizon;
    let mut oracle = MdpOracle::new(mdp, policy, horizon, seed);
    let delta = 0.5;
    let mut theta = Vector::zeros(policy.dim());
    let mut d_prev = Vector::zeros(policy.dim());
    let mut worst = 0.0f64;
    for k in 0..iterates {
        let sampled = oracle.gradient(&theta, 50).and_then(|g| Ok((g.value, oracle.hessian(&theta, 10)?.value)));
        let (g, h) = match sampled {
            Ok(x) => x,
            Err(e) => return vec![CheckResult::failed(name, format!("iterate {k}: {e}"))],
        };
        let step = match subspace_step(&g, &d_prev, |v| h.apply(v), StepRule::Radius(delta)) {
            Ok(s) => s,
            Err(e) => return vec![CheckResult::failed(name, format!("iterate {k}: {e}"))],
        };
        match check_subspace_kkt(&step.step, step.lambda, &g, &d_prev, |v| h.apply(v), delta) {
            Ok(r) => worst = worst.max(r.max_residual()).max((-r.min_eig_shifted).max(0.0)),
            Err(e) => return vec![CheckResult::failed(name, format!("iterate {k}: {e}"))],
        }
        theta += &step.step;
        d_prev = step.step;
    }
    timed(start, vec![CheckResult::at_most(name, worst, 1e-8, format!("{iterates} sampled iterates on bench5x3"))])
}

fn bench3x2_thetas(seed: u64, count: usize, scale: f64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vector::zeros(6)];
    out.extend((1..count).map(|_| random_theta(&mut rng, 6, scale)));
    out
}

fn mdp_failure(name: &str, e: impl fmt::Display) -> Vec<CheckResult> {
    vec![CheckResult::failed(name, e.to_string())]
}

/// Dynamic programming against enumeration and finite differences.
pub fn dp_checks() -> Vec<CheckResult> {
    let start = Instant::now();
    let mdp = TabularMdp::bench3x2();
    let p = TabularSoftmax::new(3, 2);
    let h = mdp.horizon;
    let (mut value_gap, mut mass_gap, mut grad_gap) = (0.0f64, 0.0f64, 0.0f64);
    for theta in bench3x2_thetas(31, 5, 1.5) {
        let mut mass = 0.0;
        let mut value = 0.0;
        let visited = enumerate_trajectories(&mdp, &p, &theta, h, |t, prob| {
            mass += prob;
            value += prob * truncated_return(t, mdp.gamma);
        });
        let dp = exact_objective(&mdp, &p, &theta, h);
        let fd = exact_gradient(&mdp, &p, &theta, h);
        let grad = dp_gradient(&mdp, &p, &theta, h);
        let (dp, fd, grad) = match (visited, dp, fd, grad) {
            (Ok(_), Ok(dp), Ok(fd), Ok(grad)) => (dp, fd, grad),
            _ => return mdp_failure("dp-enumeration", "oracle evaluation failed"),
        };
        value_gap = value_gap.max((value - dp).abs());
        mass_gap = mass_gap.max((mass - 1.0f64).abs());
        grad_gap = grad_gap.max((grad - fd).amax());
    }
    let detail = "bench3x2, 5 parameters".to_string();
    timed(
        start,
        vec![
            CheckResult::at_most("dp-enumeration-value", value_gap, 1e-12, detail.clone()),
            CheckResult::at_most("enumeration-mass", mass_gap, 1e-12, detail.clone()),
            CheckResult::at_most("dp-gradient-vs-fd", grad_gap, 1e-7, detail),
        ],
    )
}

fn enumerated_hessian(
    mdp: &TabularMdp,
    p: &TabularSoftmax,
    theta: &Vector,
    variant: HessianVariant,
) -> Result<DMatrix<f64>, crate::estimators::EstimatorError> {
    let d = p.dim();
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = Vector::zeros(d);
        e[j] = 1.0;
        out.set_column(j, &expected_hvp(mdp, p, theta, mdp.horizon, &e, 1.0, variant)?);
    }
    Ok(out)
}

/// Enumerated means of the gradient and both Hessian estimators against
/// finite differences, and the pathwise identity of the two gradient forms.
pub fn unbiasedness_checks() -> Vec<CheckResult> {
    let start = Instant::now();
    let mdp = TabularMdp::bench3x2();
    let p = TabularSoftmax::new(3, 2);
    let h = mdp.horizon;
    let (mut g_gap, mut h_gap, mut hvr_gap, mut path_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for theta in bench3x2_thetas(21, 5, 1.5) {
        let res = (|| -> Result<(), Box<dyn std::error::Error>> {
            let fd = exact_gradient(&mdp, &p, &theta, h)?;
            let mean = enumerate_mean(&mdp, &p, &theta, h, 6, |t| pgt_gradient(&p, t, &theta, mdp.gamma, None))?;
            g_gap = g_gap.max((mean - fd).amax());
            let hess = exact_hessian(&mdp, &p, &theta, h)?;
            h_gap = h_gap.max((enumerated_hessian(&mdp, &p, &theta, HessianVariant::Standard)? - &hess).amax());
            hvr_gap = hvr_gap.max((enumerated_hessian(&mdp, &p, &theta, HessianVariant::VrUuT)? - &hess).amax());
            enumerate_trajectories(&mdp, &p, &theta, h, |t, _| {
                let a = pgt_gradient(&p, t, &theta, mdp.gamma, None);
                let b = gpomdp_gradient(&p, t, &theta, mdp.gamma);
                path_gap = path_gap.max((a - b).amax());
            })?;
            Ok(())
        })();
        if let Err(e) = res {
            return mdp_failure("gradient-unbiased", e);
        }
    }
    let detail = "bench3x2, 5 parameters".to_string();
    timed(
        start,
        vec![
            CheckResult::at_most("gradient-unbiased", g_gap, 1e-5, detail.clone()),
            CheckResult::at_most("hessian-unbiased", h_gap, 1e-5, detail.clone()),
            CheckResult::at_most("hessian-vr-unbiased", hvr_gap, 1e-5, detail.clone()),
            CheckResult::at_most("pgt-equals-gpomdp", path_gap, 1e-12, detail),
        ],
    )
}

/// Expected gradient-difference estimate against the exact gradient
/// difference, and a Monte-Carlo mean against the expectation.
pub fn havr_checks(pairs: usize, mc_samples: usize, seed: u64) -> Vec<CheckResult> {
    let start = Instant::now();
    let mdp = TabularMdp::bench3x2();
    let p = TabularSoftmax::new(3, 2);
    let h = mdp.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut telescoping = 0.0f64;
    let mut first = None;
    for _ in 0..pairs {
        let prev = random_theta(&mut rng, 6, 1.0);
        let mut v = random_theta(&mut rng, 6, 1.0);
        v *= rng.random_range(0.05..0.2) / v.norm();
        let curr = &prev + &v;
        let pair = (|| -> Result<Vector, Box<dyn std::error::Error>> {
            let exact = havr_expectation_exact(&mdp, &p, &prev, &curr, h, 32)?;
            let diff = dp_gradient(&mdp, &p, &curr, h)? - dp_gradient(&mdp, &p, &prev, h)?;
            telescoping = telescoping.max((&exact - diff).amax());
            Ok(exact)
        })();
        match pair {
            Ok(exact) => {
                first.get_or_insert((prev, curr, exact));
            }
            Err(e) => return mdp_failure("havr-telescoping", e),
        }
    }
    let mut checks = vec![CheckResult::at_most(
        "havr-telescoping",
        telescoping,
        1e-6,
        format!("{pairs} parameter pairs, step norm at most 0.2"),
    )];
    if let Some((prev, curr, exact)) = first.filter(|_| mc_samples > 1) {
        let mut stream = SampleStream::new(seed);
        let mut sum = Vector::zeros(6);
        let mut sum_sq = Vector::zeros(6);
        for _ in 0..mc_samples {
            match havr_correction(&prev, &curr, &p, &mdp, h, 1, &mut stream, 1.0, false) {
                Ok(est) => {
                    sum += &est.xi;
                    sum_sq += est.xi.component_mul(&est.xi);
                }
                Err(e) => return mdp_failure("havr-monte-carlo", e),
            }
        }
        let n = mc_samples as f64;
        let mut worst = 0.0f64;
        for i in 0..6 {
            let mean = sum[i] / n;
            let var = ((sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let z = if se > 0.0 { (mean - exact[i]).abs() / se } else { (mean - exact[i]).abs() * 1e12 };
            worst = worst.max(z);
        }
        checks.push(CheckResult::at_most("havr-monte-carlo", worst, 4.0, format!("{mc_samples} samples, worst z-score")));
    }
    timed(start, checks)
}

/// Enumerated estimator second moments against the variance bounds, and the
/// exact `1/|batch|` scaling.
pub fn variance_checks() -> Vec<CheckResult> {
    let start = Instant::now();
    let mut instances = vec![TabularMdp::bench3x2()];
    for seed in [11, 12] {
        match TabularMdp::random(3, 2, 0.9, 1.0, 3, seed) {
            Ok(m) => instances.push(m),
            Err(e) => return mdp_failure("gradient-variance-bound", e),
        }
    }
    let p = TabularSoftmax::new(3, 2);
    let kinds = [
        EstimatorKind::Gradient,
        EstimatorKind::Hessian { mu: 1.0, variant: HessianVariant::Standard },
        EstimatorKind::Hessian { mu: 1.0, variant: HessianVariant::VrUuT },
    ];
    let mut ratios = [0.0f64; 3];
    let mut scaling = 0.0f64;
    let mut count = 0;
    for (i, mdp) in instances.iter().enumerate() {
        let constants = match TheoryConstants::for_policy(PolicyKind::TabularSoftmax, mdp, mdp.horizon, 1.0, 1.0, 1.0) {
            Ok(c) => c,
            Err(e) => return mdp_failure("gradient-variance-bound", e),
        };
        for theta in bench3x2_thetas(40 + i as u64, 3, 1.0) {
            count += 1;
            for (k, kind) in kinds.iter().enumerate() {
                let mut stream = SampleStream::new(0);
                let r = match variance_report(*kind, &theta, mdp, &p, mdp.horizon, &constants, 0, &mut stream) {
                    Ok(r) => r,
                    Err(e) => return mdp_failure("gradient-variance-bound", e),
                };
                ratios[k] = ratios[k].max(r.second_moment / r.bound);
                let one = r.batch_variance(1);
                for m in [2usize, 10, 100] {
                    scaling = scaling.max((r.batch_variance(m) - one / m as f64).abs() / one.max(f64::MIN_POSITIVE));
                }
            }
        }
    }
    let detail = format!("{count} enumerated instances, ratio to bound");
    timed(
        start,
        vec![
            CheckResult::at_most("gradient-variance-bound", ratios[0], 1.0, detail.clone()),
            CheckResult::at_most("hessian-variance-bound", ratios[1], 1.0, detail.clone()),
            CheckResult::at_most("hessian-vr-variance-bound", ratios[2], 1.0, detail),
            CheckResult::at_most("batch-variance-scaling", scaling, 1e-12, "relative deviation for m in {2, 10, 100}".into()),
        ],
    )
}

/// Horizon-`H` against horizon-`2H` objective and gradient, relative to the
/// truncation bounds.
pub fn truncation_checks() -> Vec<CheckResult> {
    let start = Instant::now();
    let mdp = TabularMdp::bench5x3();
    let p = TabularSoftmax::new(5, 3);
    let (g, l) = match policy_constants(PolicyKind::TabularSoftmax) {
        Ok(x) => x,
        Err(e) => return mdp_failure("truncation-value", e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let thetas = [Vector::zeros(15), random_theta(&mut rng, 15, 1.0), random_theta(&mut rng, 15, 1.0)];
    let (mut value_ratio, mut grad_ratio) = (0.0f64, 0.0f64);
    for h in [5usize, 10, 20] {
        let bound = truncation_bounds(mdp.reward_bound, mdp.gamma, h, g, l);
        for theta in &thetas {
            let res = (|| -> Result<(f64, f64), MdpError> {
                let dj = (exact_objective(&mdp, &p, theta, h)? - exact_objective(&mdp, &p, theta, 2 * h)?).abs();
                let dg = (exact_gradient(&mdp, &p, theta, h)? - exact_gradient(&mdp, &p, theta, 2 * h)?).norm();
                Ok((dj, dg))
            })();
            match res {
                Ok((dj, dg)) => {
                    value_ratio = value_ratio.max(dj / bound.value);
                    grad_ratio = grad_ratio.max(dg / bound.gradient);
                }
                Err(e) => return mdp_failure("truncation-value", e),
            }
        }
    }
    let detail = "bench5x3, H in {5, 10, 20}, ratio to bound".to_string();
    timed(
        start,
        vec![
            CheckResult::at_most("truncation-value", value_ratio, 1.0, detail.clone()),
            CheckResult::at_most("truncation-gradient", grad_ratio, 1.0, detail),
        ],
    )
}

/// Schedule formulas at unit constants against hand-evaluated values.
pub fn schedule_checks() -> Vec<CheckResult> {
    let start = Instant::now();
    let unit = TheoryConstants { r: 1.0, g: 1.0, l: 1.0, gamma: 0.5, horizon: 1, m: 1.0, c: 1.0, delta_j: 1.0, g_g: 1.0, g_h: 1.0 };
    let mut mismatches = Vec::new();
    let mut expect = |what: &str, got: f64, want: f64| {
        if got != want {
            mismatches.push(format!("{what}: {got} != {want}"));
        }
    };
    match (
        theory_schedule(&unit, 0.01, 10, ScheduleVariant::Dr),
        theory_schedule(&unit, 0.01, 10, ScheduleVariant::Dvr),
        sample_complexity(&unit, 0.01, 10, ScheduleVariant::Dvr),
    ) {
        (Ok(dr), Ok(dvr), Ok(cx)) => {
            expect("batch_grad", dr.batch_grad as f64, 1_440_000.0);
            expect("iterations", dr.iterations as f64, 24_000.0);
            expect("delta", dr.delta, 0.2);
            expect("q", dvr.q as f64, 2.0);
            expect("batch_correction", dvr.batch_correction as f64, 288_000.0);
            expect("batch_anchor", dvr.batch_anchor as f64, 2_880_000.0);
            expect("dvr gradient samples", cx.per_iteration_gradient.round(), 2_592_000.0);
        }
        _ => mismatches.push("schedule evaluation failed".into()),
    }
    let too_large = TheoryConstants { g_h: 0.2, ..unit };
    let rejected =
        matches!(theory_schedule(&too_large, 0.04, 10, ScheduleVariant::Dvr), Err(OptimizerError::EpsilonTooLarge { .. }));
    if !rejected {
        mismatches.push("epsilon above G_H^2/4 accepted".into());
    }
    let detail = if mismatches.is_empty() { "unit constants".to_string() } else { mismatches.join("; ") };
    timed(start, vec![CheckResult::at_most("schedule-formulas", mismatches.len() as f64, 0.0, detail)])
}

/// A fixture with a reward outside its declared bound must be rejected.
pub fn negative_control() -> Vec<CheckResult> {
    let start = Instant::now();
    let strict_rejects = TabularMdp::from_text(CORRUPTED_FIXTURE).is_err();
    let violations = TabularMdp::from_text_unchecked(CORRUPTED_FIXTURE).map(|m| m.violations()).unwrap_or_default();
    let flagged = violations.iter().any(|v| matches!(v, MdpError::RewardBound { .. }));
    let detail = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
    let missed = if strict_rejects && flagged { 0.0 } else { 1.0 };
    timed(start, vec![CheckResult::at_most("corrupted-fixture-rejected", missed, 0.0, detail)])
}
