//! Small dense helpers shared by the solvers and oracles: 2×2 symmetric
//! algebra, compensated summation and Gauss–Legendre quadrature.

use nalgebra::DVector;

pub type Vector = DVector<f64>;

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::new(a, 0.0, b)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// `vᵀ A v`
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        dot2(v, self.apply(v))
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// `self + s·other`
    pub fn add_scaled(&self, s: f64, other: &Sym2) -> Sym2 {
        Sym2::new(self.xx + s * other.xx, self.xy + s * other.xy, self.yy + s * other.yy)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.xx.abs().max(self.xy.abs()).max(self.yy.abs())
    }

    /// Eigenvalues in ascending order with matching unit eigenvectors.
    pub fn eigen(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_gap = 0.5 * (self.xx - self.yy);
        let r = half_gap.hypot(self.xy);
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        let (s, c) = angle.sin_cos();
        // (c, s) spans the eigenspace of the larger eigenvalue.
        ([mean - r, mean + r], [[-s, c], [c, s]])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    /// Solves `A x = b`; `None` when the determinant vanishes.
    pub fn solve(&self, b: [f64; 2]) -> Option<[f64; 2]> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some([
            (self.yy * b[0] - self.xy * b[1]) / det,
            (self.xx * b[1] - self.xy * b[0]) / det,
        ])
    }
}

pub fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm2(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Element-wise compensated accumulator for vectors.
#[derive(Debug, Clone)]
pub struct CompensatedVec {
    parts: Vec<CompensatedSum>,
}

impl CompensatedVec {
    pub fn zeros(n: usize) -> Self {
        Self { parts: vec![CompensatedSum::new(); n] }
    }

    pub fn add_scaled(&mut self, w: f64, v: &Vector) {
        for (p, x) in self.parts.iter_mut().zip(v.iter()) {
            p.add(w * x);
        }
    }

    pub fn value(&self) -> Vector {
        Vector::from_iterator(self.parts.len(), self.parts.iter().map(|p| p.value()))
    }
}

/// Gauss–Legendre nodes and weights mapped onto `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rounds a positive real count up, ignoring floating noise of a few ulps
/// (so `144 / 0.01²` is 1 440 000 and not 1 440 001).
pub fn ceil_count(x: f64) -> u64 {
    if !x.is_finite() || x <= 0.0 {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// splitmix64 finaliser, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sym2_eigen_reconstructs() {
        for &(a, b, c) in &[(1.0, 0.0, -2.0), (2.0, 0.7, -1.3), (0.0, 1.0, 0.0), (3.0, 0.0, 3.0)] {
            let m = Sym2::new(a, b, c);
            let (vals, vecs) = m.eigen();
            assert!(vals[0] <= vals[1]);
            for k in 0..2 {
                let mv = m.apply(vecs[k]);
                assert_abs_diff_eq!(mv[0], vals[k] * vecs[k][0], epsilon = 1e-14);
                assert_abs_diff_eq!(mv[1], vals[k] * vecs[k][1], epsilon = 1e-14);
                assert_abs_diff_eq!(norm2(vecs[k]), 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre_unit(32);
        let w: f64 = rule.iter().map(|p| p.1).sum();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-14);
        // ∫₀¹ x^k dx = 1/(k+1) for k up to 2n-1.
        for k in [1, 5, 20, 63] {
            let q: f64 = rule.iter().map(|&(x, w)| w * x.powi(k)).sum();
            assert_abs_diff_eq!(q, 1.0 / (k as f64 + 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let mut s = CompensatedSum::new();
        for x in [1e16, 1.0, -1e16, 1.0] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn ceil_count_ignores_ulps() {
        assert_eq!(ceil_count(144.0 / (0.01 * 0.01)), 1_440_000);
        assert_eq!(ceil_count(1.25), 2);
        assert_eq!(ceil_count(3.0), 3);
    }
}
