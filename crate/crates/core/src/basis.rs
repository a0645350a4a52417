//! B-spline basis on `[0, 1]` for the profile functions, its curvature penalty
//! matrix, and tabulated (monotone cubic) reference profiles.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
    m: usize,
    end_constraint: bool,
}

impl Default for SplineBasis {
    /// Eight open-uniform cubic B-splines with `A(1) = B(1) = 0` enforced.
    fn default() -> Self {
        Self::open_uniform(8, 3, true).expect("valid default basis")
    }
}

impl SplineBasis {
    pub fn open_uniform(m: usize, degree: usize, end_constraint: bool) -> Result<Self> {
        if m < degree + 1 {
            return Err(Error::UnsupportedBasis(format!(
                "{m} functions cannot carry degree {degree}"
            )));
        }
        let interior = m - degree - 1;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..=interior).map(|k| k as f64 / (interior + 1) as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            knots,
            m,
            end_constraint,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn end_constraint(&self) -> bool {
        self.end_constraint
    }

    /// Free coefficients per function once the end constraint is applied.
    pub fn n_free(&self) -> usize {
        if self.end_constraint {
            self.m - 1
        } else {
            self.m
        }
    }

    /// Greville abscissae; using them as coefficients reproduces `f(x) = x`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.m)
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        if x >= self.knots[self.m] {
            return self.m - 1;
        }
        // last index with knots[i] <= x, within [p, m-1]
        let mut lo = p;
        let mut hi = self.m;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Non-zero basis values and derivatives up to order `n` at `x` (Cox-de Boor
    /// triangle). Returns the span index; `out[k][j]` is the `k`-th derivative of
    /// basis function `span - degree + j`.
    fn ders(&self, x: f64, n: usize, out: &mut [[f64; 8]; 3]) -> usize {
        let p = self.degree;
        let span = self.span(x);
        let u = &self.knots;
        let mut ndu = [[0.0f64; 8]; 8];
        let mut left = [0.0f64; 8];
        let mut right = [0.0f64; 8];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for row in out.iter_mut() {
            row.fill(0.0);
        }
        for j in 0..=p {
            out[0][j] = ndu[j][p];
        }
        let mut a = [[0.0f64; 8]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0].fill(0.0);
            a[1].fill(0.0);
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in out.iter_mut().enumerate().take(n.min(p) + 1).skip(1) {
            row.iter_mut().take(p + 1).for_each(|v| *v *= factor);
            factor *= (p - k) as f64;
        }
        span
    }

    /// Writes all `m` basis values at `x` into `out`. Arguments outside `[0, 1]`
    /// are clamped; the return value reports whether clamping happened.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> bool {
        let clamped = !(0.0..=1.0).contains(&x);
        let x = if x.is_nan() { 1.0 } else { x.clamp(0.0, 1.0) };
        out.fill(0.0);
        let mut d = [[0.0; 8]; 3];
        let span = self.ders(x, 0, &mut d);
        for j in 0..=self.degree {
            out[span - self.degree + j] = d[0][j];
        }
        clamped
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        self.eval_into(x, &mut v);
        v
    }

    /// `sum_i c_i Phi_i(x)` with `x` clamped to `[0, 1]`.
    pub fn combine(&self, coeffs: &[f64], x: f64) -> f64 {
        let x = if x.is_nan() { 1.0 } else { x.clamp(0.0, 1.0) };
        let mut d = [[0.0; 8]; 3];
        let span = self.ders(x, 0, &mut d);
        (0..=self.degree)
            .map(|j| coeffs[span - self.degree + j] * d[0][j])
            .sum()
    }

    /// `Lambda_ij = int_0^1 Phi_i'' Phi_j'' dx`, exact by Gauss quadrature per span.
    pub fn regularization_matrix(&self) -> Result<DMatrix<f64>> {
        let p = self.degree;
        if p < 2 {
            return Err(Error::UnsupportedBasis(format!(
                "curvature penalty needs degree >= 2, got {p}"
            )));
        }
        if p > 7 {
            return Err(Error::UnsupportedBasis(format!("degree {p} exceeds 7")));
        }
        // Integrand has degree 2(p-2); this rule is exact up to degree 2*6-1.
        let (gx, gw) = gauss_legendre_6();
        let mut lam = DMatrix::zeros(self.m, self.m);
        let mut d = [[0.0; 8]; 3];
        for s in p..self.m {
            let (a, b) = (self.knots[s], self.knots[s + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            for (&xi, &wi) in gx.iter().zip(&gw) {
                let x = a + half * (xi + 1.0);
                let span = self.ders(x, 2, &mut d);
                let base = span - p;
                for i in 0..=p {
                    for j in i..=p {
                        lam[(base + i, base + j)] += wi * half * d[2][i] * d[2][j];
                    }
                }
            }
        }
        lam.fill_lower_triangle_with_upper_triangle();
        Ok(lam)
    }

    /// Penalty restricted to the free coefficients.
    pub fn free_regularization_matrix(&self) -> Result<DMatrix<f64>> {
        let full = self.regularization_matrix()?;
        let k = self.n_free();
        Ok(full.view((0, 0), (k, k)).into_owned())
    }

    /// Full-length coefficient vector from the free ones.
    pub fn expand_free(&self, free: &[f64]) -> Vec<f64> {
        let mut c = free.to_vec();
        c.resize(self.m, 0.0);
        c
    }
}

fn gauss_legendre_6() -> ([f64; 6], [f64; 6]) {
    (
        [
            -0.932_469_514_203_152,
            -0.661_209_386_466_264_5,
            -0.238_619_186_083_196_9,
            0.238_619_186_083_196_9,
            0.661_209_386_466_264_5,
            0.932_469_514_203_152,
        ],
        [
            0.171_324_492_379_170_3,
            0.360_761_573_048_138_6,
            0.467_913_934_572_691,
            0.467_913_934_572_691,
            0.360_761_573_048_138_6,
            0.171_324_492_379_170_3,
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    A,
    B,
    Ne,
}

/// Coefficients of `A`, `B` and optionally `n_e` in a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileExpansion {
    pub basis: SplineBasis,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub ne: Option<Vec<f64>>,
}

impl ProfileExpansion {
    pub fn new(basis: SplineBasis, mut a: Vec<f64>, mut b: Vec<f64>, ne: Option<Vec<f64>>) -> Result<Self> {
        let m = basis.m();
        if a.len() != m || b.len() != m || ne.as_ref().is_some_and(|c| c.len() != m) {
            return Err(Error::Argument(format!("coefficient vectors must have length {m}")));
        }
        if a.iter().chain(&b).chain(ne.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite coefficient".into()));
        }
        if basis.end_constraint() {
            a[m - 1] = 0.0;
            b[m - 1] = 0.0;
        }
        Ok(Self { basis, a, b, ne })
    }

    pub fn zeros(basis: SplineBasis) -> Self {
        let m = basis.m();
        Self {
            basis,
            a: vec![0.0; m],
            b: vec![0.0; m],
            ne: None,
        }
    }

    /// `A(x) = B(x) = 1 - x`, the cold-start guess.
    pub fn first_guess(basis: SplineBasis) -> Self {
        let c: Vec<f64> = basis.greville().iter().map(|g| 1.0 - g).collect();
        Self::new(basis, c.clone(), c, None).expect("finite coefficients")
    }

    /// Builds from the stacked free coefficients `(a_free, b_free)`.
    pub fn from_free(basis: SplineBasis, u: &[f64], ne: Option<Vec<f64>>) -> Result<Self> {
        let k = basis.n_free();
        if u.len() != 2 * k {
            return Err(Error::Argument(format!(
                "expected {} free coefficients, got {}",
                2 * k,
                u.len()
            )));
        }
        let a = basis.expand_free(&u[..k]);
        let b = basis.expand_free(&u[k..]);
        Self::new(basis, a, b, ne)
    }

    pub fn free_dofs(&self) -> Vec<f64> {
        let k = self.basis.n_free();
        self.a[..k].iter().chain(&self.b[..k]).copied().collect()
    }

    pub fn eval(&self, which: ProfileKind, x: f64) -> Result<f64> {
        let coeffs = match which {
            ProfileKind::A => &self.a,
            ProfileKind::B => &self.b,
            ProfileKind::Ne => self
                .ne
                .as_ref()
                .ok_or_else(|| Error::State("no n_e coefficients in this expansion".into()))?,
        };
        Ok(self.basis.combine(coeffs, x))
    }
}

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson slopes)
/// through tabulated points.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Argument("need at least two (x, y) pairs of equal length".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("abscissae must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
                let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
                if s * d0 <= 0.0 {
                    0.0
                } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
                    3.0 * d0
                } else {
                    s
                }
            };
            slopes[0] = end(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, slopes })
    }

    /// Samples `f` at `n` uniform points on `[0, 1]`.
    pub fn sample(f: impl Fn(f64) -> f64, n: usize) -> Self {
        let x: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let y = x.iter().map(|&t| f(t)).collect();
        Self::new(x, y).expect("uniform grid is increasing")
    }

    pub fn points(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let t = t.clamp(self.x[0], self.x[n - 1]);
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// Current-profile functions driving the plasma source.
#[derive(Debug, Clone, PartialEq)]
pub enum Profiles {
    Expansion(ProfileExpansion),
    Tabulated {
        a: MonotoneCubic,
        b: MonotoneCubic,
        ne: Option<MonotoneCubic>,
    },
}

impl Profiles {
    pub fn a(&self, x: f64) -> f64 {
        match self {
            Profiles::Expansion(e) => e.basis.combine(&e.a, x),
            Profiles::Tabulated { a, .. } => a.eval(x),
        }
    }

    pub fn b(&self, x: f64) -> f64 {
        match self {
            Profiles::Expansion(e) => e.basis.combine(&e.b, x),
            Profiles::Tabulated { b, .. } => b.eval(x),
        }
    }

    pub fn ne(&self, x: f64) -> Option<f64> {
        match self {
            Profiles::Expansion(e) => e.ne.as_ref().map(|c| e.basis.combine(c, x)),
            Profiles::Tabulated { ne, .. } => ne.as_ref().map(|n| n.eval(x)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_local_support() {
        let b = SplineBasis::default();
        for k in 0..=200 {
            let x = k as f64 / 200.0;
            let v = b.eval(x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12, "x = {x}");
            assert!(v.iter().all(|&p| p >= 0.0));
        }
        let at0 = b.eval(0.0);
        assert_eq!(at0[0], 1.0);
        assert!(at0[1..].iter().all(|&v| v == 0.0));
        let at1 = b.eval(1.0);
        assert_eq!(at1[7], 1.0);
        assert!(at1[..7].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greville_coefficients_reproduce_identity() {
        for (m, p) in [(8, 3), (6, 2), (11, 3)] {
            let b = SplineBasis::open_uniform(m, p, false).unwrap();
            let g = b.greville();
            for k in 0..=100 {
                let x = k as f64 / 100.0;
                assert!((b.combine(&g, x) - x).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn clamping_is_flagged() {
        let b = SplineBasis::default();
        let mut out = vec![0.0; 8];
        assert!(b.eval_into(1.05, &mut out));
        assert_eq!(out, b.eval(1.0));
        assert!(!b.eval_into(0.5, &mut out));
    }

    #[test]
    fn penalty_matrix_is_symmetric_psd_with_affine_null_space() {
        let b = SplineBasis::default();
        let lam = b.regularization_matrix().unwrap();
        assert_eq!(lam, lam.transpose());
        let eig = lam.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-12));
        let scale = eig.eigenvalues.max();
        let rank = eig.eigenvalues.iter().filter(|&&e| e > 1e-10 * scale).count();
        assert_eq!(rank, b.m() - 2);
        let ones = nalgebra::DVector::from_element(8, 1.0);
        assert!((&lam * ones).amax() <= 1e-12);
        let line = nalgebra::DVector::from_vec(b.greville());
        assert!((&lam * line).amax() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn penalty_matches_finite_difference_curvature_on_one_function() {
        // int (Phi_3'')^2 by a fine midpoint rule on a numerically differentiated basis
        let b = SplineBasis::default();
        let lam = b.regularization_matrix().unwrap();
        let n = 20_000;
        let h = 1e-4;
        let f = |x: f64| b.eval(x)[3];
        let mut acc = 0.0;
        for k in 0..n {
            let x = (k as f64 + 0.5) / n as f64;
            let (lo, hi) = ((x - h).max(0.0), (x + h).min(1.0));
            let mid = 0.5 * (lo + hi);
            let d2 = (f(hi) - 2.0 * f(mid) + f(lo)) / (0.5 * (hi - lo)).powi(2);
            acc += d2 * d2 / n as f64;
        }
        assert!(
            (acc - lam[(3, 3)]).abs() <= 1e-3 * lam[(3, 3)],
            "{acc} vs {}",
            lam[(3, 3)]
        );
    }

    #[test]
    fn low_degree_penalty_is_unsupported() {
        let b = SplineBasis::open_uniform(5, 1, false).unwrap();
        assert!(matches!(b.regularization_matrix(), Err(Error::UnsupportedBasis(_))));
    }

    #[test]
    fn expansion_evaluation() {
        let basis = SplineBasis::default();
        let zero = ProfileExpansion::zeros(basis.clone());
        assert_eq!(zero.eval(ProfileKind::A, 0.3).unwrap(), 0.0);
        let guess = ProfileExpansion::first_guess(basis.clone());
        assert!(guess.eval(ProfileKind::A, 1.0).unwrap().abs() <= 1e-12);
        assert!(guess.eval(ProfileKind::B, 1.0).unwrap().abs() <= 1e-12);
        assert!((guess.eval(ProfileKind::A, 0.25).unwrap() - 0.75).abs() <= 1e-12);
        assert!(matches!(guess.eval(ProfileKind::Ne, 0.5), Err(Error::State(_))));
        let mut e = vec![0.0; 8];
        e[4] = 1.0;
        let unit = ProfileExpansion::new(basis.clone(), e.clone(), e, None).unwrap();
        for x in [0.45, 0.6, 0.7] {
            assert_eq!(unit.eval(ProfileKind::A, x).unwrap(), basis.eval(x)[4]);
        }
    }

    #[test]
    fn end_constraint_drops_last_coefficient() {
        let basis = SplineBasis::default();
        let e = ProfileExpansion::new(basis, vec![1.0; 8], vec![2.0; 8], None).unwrap();
        assert_eq!(e.eval(ProfileKind::A, 1.0).unwrap(), 0.0);
        assert_eq!(e.free_dofs().len(), 14);
    }

    #[test]
    fn monotone_cubic_interpolates_and_preserves_monotonicity() {
        let t = MonotoneCubic::new(vec![0.0, 0.3, 0.5, 1.0], vec![1.0, 0.9, 0.2, 0.0]).unwrap();
        assert_eq!(t.eval(0.3), 0.9);
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let v = t.eval(k as f64 / 100.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let s = MonotoneCubic::sample(|x| 1.0 - x * x, 41);
        assert!((s.eval(0.37) - (1.0 - 0.37 * 0.37)).abs() < 1e-4);
    }
}
