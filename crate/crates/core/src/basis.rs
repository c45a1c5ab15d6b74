//! Orthonormal families on `L²(I, dx)`.
//!
//! Two families are provided:
//!
//! * trigonometric on a compact interval `[lo, hi]`: `φ_1 = 1/√L`,
//!   `φ_{2k} = √(2/L) cos(2πk(x-lo)/L)`, `φ_{2k+1} = √(2/L) sin(2πk(x-lo)/L)`,
//!   all vanishing outside `[lo, hi]`;
//! * Hermite functions on ℝ, `φ_j = h_{j-1}`, evaluated through the
//!   normalized three-term recurrence so `H_n` is never formed.
//!
//! Both families are nested: the first `m'` functions of the `m`-dimensional
//! family are exactly the `m'`-dimensional family.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::simpson;

/// Default cap on the dimension index.
pub const DEFAULT_MAX_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BasisKind {
    #[serde(rename = "trig")]
    Trigonometric { lo: f64, hi: f64 },
    Hermite,
}

/// A basis family together with its dimension cap `N_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    #[serde(flatten)]
    pub kind: BasisKind,
    pub max_dim: usize,
}

/// `L(m) = 1 ∨ sup_{x∈I} Σ_{j≤m} φ_j(x)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LBound {
    pub m: usize,
    pub value: f64,
    /// The supremum before taking the maximum with one.
    pub sup: f64,
}

/// `N_T = ⌊N T⌋ + 1`.
pub fn dimension_cap(n_paths: usize, horizon: f64) -> usize {
    (n_paths as f64 * horizon).floor() as usize + 1
}

impl BasisSpec {
    pub fn trigonometric(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param(format!(
                "trigonometric basis needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            kind: BasisKind::Trigonometric { lo, hi },
            max_dim: DEFAULT_MAX_DIM,
        })
    }

    pub fn hermite() -> Self {
        Self {
            kind: BasisKind::Hermite,
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    pub fn with_max_dim(mut self, max_dim: usize) -> Self {
        self.max_dim = max_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let BasisKind::Trigonometric { lo, hi } = self.kind {
            Self::trigonometric(lo, hi)?;
        }
        if self.max_dim == 0 {
            return Err(Error::param("basis dimension cap must be positive"));
        }
        Ok(())
    }

    /// Support interval of the family, `None` for ℝ.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self.kind {
            BasisKind::Trigonometric { lo, hi } => Some((lo, hi)),
            BasisKind::Hermite => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BasisKind::Trigonometric { .. } => "trig",
            BasisKind::Hermite => "hermite",
        }
    }

    /// The constant `𝔠_φ²` with `L(m) ≤ 𝔠_φ² m`.
    pub fn c_phi_sq(&self) -> f64 {
        match self.kind {
            BasisKind::Trigonometric { lo, hi } => (2.0 / (hi - lo)).max(1.0),
            BasisKind::Hermite => 1.0,
        }
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.max_dim {
            return Err(Error::param(format!(
                "basis index/dimension {m} outside 1..={}",
                self.max_dim
            )));
        }
        Ok(())
    }

    /// `φ_j(x)` for `j ≥ 1`.
    pub fn eval_basis(&self, j: usize, x: f64) -> Result<f64> {
        self.check_dim(j)?;
        match self.kind {
            BasisKind::Trigonometric { lo, hi } => Ok(trig_single(lo, hi, j, x)),
            BasisKind::Hermite => {
                let mut buf = vec![0.0; j];
                hermite_fill(x, &mut buf);
                Ok(buf[j - 1])
            }
        }
    }

    /// `(φ_1(x), …, φ_m(x))`.
    pub fn eval_all(&self, m: usize, x: f64) -> Result<Vec<f64>> {
        self.check_dim(m)?;
        let mut out = vec![0.0; m];
        self.fill(x, &mut out);
        Ok(out)
    }

    /// Writes `φ_1(x), …, φ_k(x)` into `out` where `k = out.len()`.
    ///
    /// Unchecked hot-path variant of [`BasisSpec::eval_all`]; `out.len()`
    /// must not exceed the cap.
    #[inline]
    pub fn fill(&self, x: f64, out: &mut [f64]) {
        match self.kind {
            BasisKind::Trigonometric { lo, hi } => trig_fill(lo, hi, x, out),
            BasisKind::Hermite => hermite_fill(x, out),
        }
    }

    /// Evaluates `Σ_j coef_j φ_j(x)`.
    pub fn combination(&self, coef: &[f64], x: f64) -> f64 {
        if coef.is_empty() {
            return 0.0;
        }
        let mut buf = vec![0.0; coef.len()];
        self.fill(x, &mut buf);
        buf.iter().zip(coef).map(|(p, c)| p * c).sum()
    }

    /// Computes `L(m)`.
    ///
    /// Trigonometric with odd `m` uses the closed form `m/(hi-lo)`. Otherwise
    /// the supremum is taken on a grid of at least `10⁴·m` points followed
    /// by one local refinement around the best node.
    pub fn compute_l(&self, m: usize) -> Result<LBound> {
        self.check_dim(m)?;
        let sup = match self.kind {
            BasisKind::Trigonometric { lo, hi } if m % 2 == 1 => m as f64 / (hi - lo),
            BasisKind::Trigonometric { lo, hi } => self.grid_sup(m, lo, hi),
            BasisKind::Hermite => {
                // Σ h_k² is even and decays like a Gaussian past √(2m+1).
                let k = hermite_half_width(m);
                self.grid_sup(m, 0.0, k)
            }
        };
        Ok(LBound {
            m,
            value: sup.max(1.0),
            sup,
        })
    }

    fn grid_sup(&self, m: usize, a: f64, b: f64) -> f64 {
        let mut buf = vec![0.0; m];
        let mut sum_sq = |x: f64| {
            self.fill(x, &mut buf);
            buf.iter().map(|v| v * v).sum::<f64>()
        };
        let points = 10_000 * m;
        let h = (b - a) / points as f64;
        let (mut best_x, mut best) = (a, f64::NEG_INFINITY);
        for i in 0..=points {
            let x = if i == points { b } else { a + i as f64 * h };
            let v = sum_sq(x);
            if v > best {
                best = v;
                best_x = x;
            }
        }
        let (ra, rb) = ((best_x - h).max(a), (best_x + h).min(b));
        let fine = 2_000;
        let hf = (rb - ra) / fine as f64;
        for i in 0..=fine {
            best = best.max(sum_sq(ra + i as f64 * hf));
        }
        best
    }

    /// Quadrature domain used for `L²` integrals of this family.
    pub fn quadrature_domain(&self, m: usize) -> (f64, f64) {
        match self.kind {
            BasisKind::Trigonometric { lo, hi } => (lo, hi),
            BasisKind::Hermite => {
                let k = hermite_half_width(m);
                (-k, k)
            }
        }
    }

    /// `(⟨f, φ_j⟩)_{j≤m}` by composite Simpson with `quadrature_n` subintervals.
    ///
    /// Hermite integrals are truncated to `[-K, K]` where the Gaussian
    /// envelope of `h_{m-1}` is negligible.
    pub fn project_coefficients<F: Fn(f64) -> f64>(
        &self,
        m: usize,
        f: F,
        quadrature_n: usize,
    ) -> Result<Vec<f64>> {
        self.check_dim(m)?;
        let (a, b) = self.quadrature_domain(m);
        let mut buf = vec![0.0; m];
        let coef: Vec<f64> = (0..m)
            .map(|j| {
                simpson(
                    |x| {
                        self.fill(x, &mut buf);
                        f(x) * buf[j]
                    },
                    a,
                    b,
                    quadrature_n,
                )
            })
            .collect();
        if let Some(j) = coef.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("projection coefficient {} is not finite", j + 1)));
        }
        Ok(coef)
    }
}

/// Truncation half-width for Hermite integrals of the first `m` functions.
pub fn hermite_half_width(m: usize) -> f64 {
    ((2.0 * m as f64 + 1.0).sqrt() + 12.0).max(20.0)
}

fn trig_single(lo: f64, hi: f64, j: usize, x: f64) -> f64 {
    if !(lo..=hi).contains(&x) {
        return 0.0;
    }
    let len = hi - lo;
    if j == 1 {
        return (1.0 / len).sqrt();
    }
    let k = (j / 2) as f64;
    let arg = 2.0 * PI * k * (x - lo) / len;
    let amp = (2.0 / len).sqrt();
    if j.is_multiple_of(2) {
        amp * arg.cos()
    } else {
        amp * arg.sin()
    }
}

/// Harmonics by angle addition from a single `sin_cos`.
fn trig_fill(lo: f64, hi: f64, x: f64, out: &mut [f64]) {
    if !(lo..=hi).contains(&x) {
        out.fill(0.0);
        return;
    }
    let Some(first) = out.first_mut() else {
        return;
    };
    let len = hi - lo;
    *first = (1.0 / len).sqrt();
    let amp = (2.0 / len).sqrt();
    let (s1, c1) = (2.0 * PI * (x - lo) / len).sin_cos();
    let (mut s, mut c) = (s1, c1);
    for pair in out[1..].chunks_mut(2) {
        pair[0] = amp * c;
        if let Some(odd) = pair.get_mut(1) {
            *odd = amp * s;
        }
        (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
    }
}

fn hermite_fill(x: f64, out: &mut [f64]) {
    let Some(first) = out.first_mut() else {
        return;
    };
    let h0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    *first = h0;
    if out.len() == 1 {
        return;
    }
    out[1] = std::f64::consts::SQRT_2 * x * h0;
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (2.0 / (kf + 1.0)).sqrt() * x * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig6() -> BasisSpec {
        BasisSpec::trigonometric(-3.0, 3.0).unwrap()
    }

    #[test]
    fn trig_point_values() {
        let b = trig6();
        assert!((b.eval_basis(1, 0.0).unwrap() - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((b.eval_basis(1, 0.0).unwrap() - 0.408248).abs() < 1e-6);
        assert_eq!(b.eval_basis(2, 5.0).unwrap(), 0.0);
        assert_eq!(b.eval_basis(1, -3.0001).unwrap(), 0.0);
    }

    #[test]
    fn hermite_point_values() {
        let h = BasisSpec::hermite();
        assert_eq!(h.eval_basis(2, 0.0).unwrap(), 0.0);
        let h0 = h.eval_basis(1, 0.0).unwrap();
        assert!((h0 - PI.powf(-0.25)).abs() < 1e-15);
        assert!((h0 - 0.751126).abs() < 1e-6);
        // h_2(x) = (2x² - 1) π^{-1/4} e^{-x²/2} / √2, written out from H_2 = 4x² - 2.
        let x: f64 = 0.7;
        let direct = (4.0 * x * x - 2.0) / (8.0 * PI.sqrt()).sqrt() * (-x * x / 2.0).exp();
        assert!((h.eval_basis(3, x).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn index_out_of_range() {
        let b = trig6().with_max_dim(4);
        assert!(b.eval_basis(0, 0.0).is_err());
        assert!(b.eval_basis(5, 0.0).is_err());
        assert!(b.eval_all(5, 0.0).is_err());
        assert!(BasisSpec::trigonometric(1.0, 1.0).is_err());
    }

    #[test]
    fn eval_all_matches_single_evaluations() {
        let b = trig6();
        assert_eq!(b.eval_all(1, 0.3).unwrap(), vec![b.eval_basis(1, 0.3).unwrap()]);
        for &x in &[-3.0, -1.2, 0.0, 2.9, 3.0] {
            let v = b.eval_all(3, x).unwrap();
            let s: f64 = v.iter().map(|p| p * p).sum();
            assert!((s - 0.5).abs() < 1e-14, "x={x}: {s}");
            let long = b.eval_all(101, x).unwrap();
            for (j, v) in long.iter().enumerate() {
                assert!((v - b.eval_basis(j + 1, x).unwrap()).abs() < 1e-12, "j={}", j + 1);
            }
        }
        let h = BasisSpec::hermite();
        for &x in &[-4.0, -0.5, 0.0, 1.3, 6.0] {
            let all = h.eval_all(6, x).unwrap();
            for (j, v) in all.iter().enumerate() {
                assert!((v - h.eval_basis(j + 1, x).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn l_bound_examples() {
        let b = trig6();
        let l1 = b.compute_l(1).unwrap();
        assert_eq!(l1.value, 1.0);
        assert!((l1.sup - 1.0 / 6.0).abs() < 1e-15);
        let l3 = b.compute_l(3).unwrap();
        assert_eq!(l3.value, 1.0);
        assert!((l3.sup - 0.5).abs() < 1e-15);
        // Even m falls back to the grid; m=2 peaks at the interval ends: (1 + 2)/6.
        let l2 = b.compute_l(2).unwrap();
        assert!((l2.sup - 0.5).abs() < 1e-12);
        let h4 = BasisSpec::hermite().compute_l(4).unwrap();
        assert!(h4.value >= 1.0 && h4.value <= 4.0);
    }

    #[test]
    fn grid_sup_agrees_with_closed_form_for_odd_m() {
        let b = trig6();
        for m in [1, 3, 5, 7] {
            let closed = b.compute_l(m).unwrap().sup;
            let grid = b.grid_sup(m, -3.0, 3.0);
            assert!((closed - grid).abs() < 1e-12, "m={m}");
        }
    }

    #[test]
    fn l_bound_monotone_and_linear() {
        for spec in [trig6(), BasisSpec::trigonometric(0.0, 1.5).unwrap(), BasisSpec::hermite()] {
            let mut prev = 0.0;
            for m in 1..=12 {
                let l = spec.compute_l(m).unwrap().value;
                assert!(l >= prev - 1e-12, "{spec:?} m={m}");
                assert!(l <= spec.c_phi_sq() * m as f64 + 1e-12, "{spec:?} m={m} L={l}");
                prev = l;
            }
        }
    }

    #[test]
    fn projection_examples() {
        let b = trig6();
        let c = b.project_coefficients(4, |x| b.eval_basis(2, x).unwrap(), 2000).unwrap();
        for (j, v) in c.iter().enumerate() {
            let e = if j == 1 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-8, "coef {j}: {v}");
        }
        let c = b.project_coefficients(3, |x| -x, 2000).unwrap();
        assert!(c[0].abs() < 1e-12);

        // Oracle: fine trapezoid of the explicit integrand -x·h_1(x) on [-30, 30].
        let oracle = crate::quadrature::trapezoid(
            |x| -x * std::f64::consts::SQRT_2 * x * PI.powf(-0.25) * (-0.5 * x * x).exp(),
            -30.0,
            30.0,
            200_000,
        );
        // Closed form: -√2 π^{-1/4} ∫ x² e^{-x²/2} dx = -2 π^{1/4}.
        assert!((oracle + 2.0 * PI.powf(0.25)).abs() < 1e-10);
        let h = BasisSpec::hermite();
        let c = h.project_coefficients(2, |x| -x, 4000).unwrap();
        assert!(c[0].abs() < 1e-12);
        assert!((c[1] - oracle).abs() < 1e-8, "{} vs {oracle}", c[1]);
    }
}
