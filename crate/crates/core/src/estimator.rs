//! Projection least-squares estimation of the drift.
//!
//! From `N` paths observed on a uniform grid we form, with left-point sums,
//!
//! ```text
//! Ψ̂_m[j,k] = (1/NT) Σ_i Σ_l φ_j(X^i_l) φ_k(X^i_l) Δ
//! X̂_m[j]   = (1/NT) Σ_i Σ_l φ_j(X^i_l) (X^i_{l+1} - X^i_l)
//! ```
//!
//! and solve `Ψ̂_m θ̂ = X̂_m`. The fit is kept only on the event
//! `L(m) (‖Ψ̂_m⁻¹‖_op ∨ 1) ≤ 𝔠_T NT / log(NT)`; otherwise it is the zero function.
//!
//! Accumulation runs per path in parallel, and partial sums are reduced in
//! path order, so results are bitwise independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, inv_op_norm_from_min_eig, sym_eigen_min, SymMatrix};
use crate::sim::PathBundle;

/// Constants of the truncation event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationConstants {
    /// `𝔠_T = (3 log(3/2) - 1) / (8T)`
    pub c_t: f64,
    /// `𝔠_T NT / log(NT)`
    pub threshold: f64,
}

impl TruncationConstants {
    pub fn new(n_paths: usize, horizon: f64) -> Result<Self> {
        let nt = n_paths as f64 * horizon;
        if !(nt > 1.0) {
            return Err(Error::param(format!("truncation threshold needs NT > 1, got {nt}")));
        }
        let c_t = c_t(horizon);
        Ok(Self {
            c_t,
            threshold: c_t * nt / nt.ln(),
        })
    }
}

pub fn c_t(horizon: f64) -> f64 {
    (3.0 * 1.5f64.ln() - 1.0) / (8.0 * horizon)
}

/// Whether the truncation event is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Keep the fit only when `L(m)(‖Ψ̂⁻¹‖∨1) ≤ 𝔠_T NT/log(NT)`.
    #[default]
    Theoretical,
    /// Keep every fit whose Gram matrix can be factored.
    Off,
}

/// `Ψ̂_m` and `X̂_m` for one bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub gram: SymMatrix,
    pub vector: Vec<f64>,
    pub n_paths: usize,
    pub horizon: f64,
}

impl EmpiricalMoments {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Moments of the nested `m`-dimensional model.
    pub fn truncate(&self, m: usize) -> Self {
        Self {
            gram: self.gram.leading_block(m),
            vector: self.vector[..m].to_vec(),
            n_paths: self.n_paths,
            horizon: self.horizon,
        }
    }

    /// `γ_N(θ) = θᵀ Ψ̂ θ - 2 θᵀ X̂`
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let dot: f64 = theta.iter().zip(&self.vector).map(|(a, b)| a * b).sum();
        self.gram.quad_form(theta) - 2.0 * dot
    }
}

/// Computes `Ψ̂_m` and `X̂_m` in one pass over the bundle.
pub fn empirical_moments(bundle: &PathBundle, spec: &BasisSpec, m: usize) -> Result<EmpiricalMoments> {
    if m == 0 || m > spec.max_dim {
        return Err(Error::param(format!("dimension {m} outside 1..={}", spec.max_dim)));
    }
    let tri = m * (m + 1) / 2;
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = bundle
        .paths()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(i, path)| {
            let mut g = vec![0.0; tri];
            let mut v = vec![0.0; m];
            let mut phi = vec![0.0; m];
            for (l, w) in path.windows(2).enumerate() {
                spec.fill(w[0], &mut phi);
                let dx = w[1] - w[0];
                if !dx.is_finite() || phi.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Numeric(format!("path {i}, step {l}: non-finite state or basis value")));
                }
                let mut k = 0;
                for a in 0..m {
                    let pa = phi[a];
                    v[a] += pa * dx;
                    for &pb in &phi[a..] {
                        g[k] += pa * pb;
                        k += 1;
                    }
                }
            }
            Ok((g, v))
        })
        .collect();

    let mut g_sum = vec![0.0; tri];
    let mut v_sum = vec![0.0; m];
    for part in partials {
        let (g, v) = part?;
        g_sum.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
        v_sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
    }

    let nt = bundle.total_time();
    let dt = bundle.grid().dt();
    let mut gram = SymMatrix::zeros(m);
    let mut k = 0;
    for a in 0..m {
        for b in a..m {
            gram.set(a, b, g_sum[k] * dt / nt);
            k += 1;
        }
    }
    Ok(EmpiricalMoments {
        gram,
        vector: v_sum.into_iter().map(|s| s / nt).collect(),
        n_paths: bundle.n_paths(),
        horizon: bundle.grid().horizon,
    })
}

/// `⟨f, g⟩_N = (1/NT) Σ_i Σ_l f(X^i_l) g(X^i_l) Δ`.
pub fn empirical_inner<F, G>(bundle: &PathBundle, f: F, g: G) -> Result<f64>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    let partials: Vec<Result<f64>> = bundle
        .paths()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(i, path)| {
            let mut s = 0.0;
            for (l, &x) in path[..path.len() - 1].iter().enumerate() {
                let v = f(x) * g(x);
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("path {i}, step {l}: f·g is not finite at x = {x}")));
                }
                s += v;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total * bundle.grid().dt() / bundle.total_time())
}

pub fn gram_matrix(bundle: &PathBundle, spec: &BasisSpec, m: usize) -> Result<SymMatrix> {
    Ok(empirical_moments(bundle, spec, m)?.gram)
}

pub fn empirical_vector(bundle: &PathBundle, spec: &BasisSpec, m: usize) -> Result<Vec<f64>> {
    Ok(empirical_moments(bundle, spec, m)?.vector)
}

/// Fitted drift in the span of the first `m` basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub basis: BasisSpec,
    pub m: usize,
    pub theta: Vec<f64>,
    pub gram_min_eig: f64,
    #[serde(with = "crate::serde_inf")]
    pub inv_op_norm: f64,
    /// `L(m)`, computed only when the gate is enforced.
    pub l_bound: Option<f64>,
    pub gate: GateMode,
    pub gate_threshold: f64,
    pub truncated: bool,
    /// The Gram matrix could not be factored.
    pub singular: bool,
    /// `‖b̂_m‖²_N = θ̂ᵀ Ψ̂_m θ̂`
    pub empirical_norm_sq: f64,
    /// `γ_N(b̂_m)`
    pub objective: f64,
}

impl DriftFit {
    /// `Σ_j θ̂_j φ_j(x)`; zero everywhere for a truncated fit.
    pub fn evaluate(&self, x: f64) -> f64 {
        if self.truncated {
            return 0.0;
        }
        self.basis.combination(&self.theta, x)
    }

    /// Left side of the gate inequality, when `L(m)` is known.
    pub fn gate_lhs(&self) -> Option<f64> {
        self.l_bound.map(|l| l * self.inv_op_norm.max(1.0))
    }
}

pub fn evaluate_fit(fit: &DriftFit, x: f64) -> f64 {
    fit.evaluate(x)
}

/// Solves the least-squares problem from precomputed moments.
pub fn fit_from_moments(moments: &EmpiricalMoments, spec: &BasisSpec, gate: GateMode) -> Result<DriftFit> {
    let m = moments.dim();
    let consts = TruncationConstants::new(moments.n_paths, moments.horizon)?;
    let gram_min_eig = sym_eigen_min(&moments.gram);
    let inv_op_norm = inv_op_norm_from_min_eig(gram_min_eig);

    let (l_bound, gate_passes) = match gate {
        GateMode::Theoretical => {
            let l = spec.compute_l(m)?.value;
            (Some(l), l * inv_op_norm.max(1.0) <= consts.threshold)
        }
        GateMode::Off => (None, true),
    };

    let solved = if gate_passes {
        match cholesky_solve(&moments.gram, &moments.vector) {
            Ok(theta) => Some(theta),
            Err(Error::SingularMatrix { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let singular = gate_passes && solved.is_none();
    let truncated = solved.is_none();
    let theta = solved.unwrap_or_else(|| vec![0.0; m]);
    let empirical_norm_sq = if truncated { 0.0 } else { moments.gram.quad_form(&theta) };

    Ok(DriftFit {
        basis: *spec,
        m,
        objective: moments.objective(&theta),
        theta,
        gram_min_eig,
        inv_op_norm,
        l_bound,
        gate,
        gate_threshold: consts.threshold,
        truncated,
        singular,
        empirical_norm_sq,
    })
}

/// Truncated projection estimator with the theoretical gate.
pub fn fit_projection(bundle: &PathBundle, spec: &BasisSpec, m: usize) -> Result<DriftFit> {
    fit_projection_with(bundle, spec, m, GateMode::Theoretical)
}

pub fn fit_projection_with(bundle: &PathBundle, spec: &BasisSpec, m: usize, gate: GateMode) -> Result<DriftFit> {
    let moments = empirical_moments(bundle, spec, m)?;
    fit_from_moments(&moments, spec, gate)
}

/// `γ_N(Σ θ_j φ_j)` on the bundle.
pub fn objective_gamma(bundle: &PathBundle, spec: &BasisSpec, theta: &[f64]) -> Result<f64> {
    Ok(empirical_moments(bundle, spec, theta.len())?.objective(theta))
}
