//! Penalized choice of the dimension.
//!
//! `m̂ = argmin_{m ∈ M̂_N} { -‖b̂_m‖²_N + 𝔠_cal m / (NT) }`, with
//! `M̂_N = { m : 𝔠_φ² m (‖Ψ̂_m⁻¹‖²_op ∨ 1) ≤ 𝔡_T NT / log(NT) }`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::estimator::{c_t, empirical_moments, fit_from_moments, DriftFit, EmpiricalMoments, GateMode};
use crate::linalg::{inv_op_norm_from_min_eig, sym_eigen_min};
use crate::metrics::{mise, ExperimentConfig};
use crate::rng::repetition_seed;
use crate::sim::{simulate_bundle, PathBundle};

/// How the admissible set `M̂_N` is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtMode {
    /// `𝔡_T` with a histogram estimate of `‖f_T‖_∞`.
    #[default]
    PlugIn,
    /// `𝔡_T = 𝔠_T / 2`.
    Simplified,
    /// Every candidate is admissible.
    Unrestricted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub candidates: Vec<usize>,
    pub c_cal: f64,
    pub dt_mode: DtMode,
    /// Overrides the histogram estimate in plug-in mode.
    #[serde(default)]
    pub f_sup_hat: Option<f64>,
    pub gate: GateMode,
    /// Interval for the density estimate when the basis has no compact support.
    pub density_interval: (f64, f64),
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            candidates: (1..=6).collect(),
            c_cal: 1.0,
            dt_mode: DtMode::PlugIn,
            f_sup_hat: None,
            gate: GateMode::Theoretical,
            density_interval: (-3.0, 3.0),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, spec: &BasisSpec) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::param("candidate dimensions must be nonempty"));
        }
        if let Some(&m) = self.candidates.iter().find(|&&m| m == 0 || m > spec.max_dim) {
            return Err(Error::param(format!("candidate dimension {m} outside 1..={}", spec.max_dim)));
        }
        if !(self.c_cal > 0.0 && self.c_cal.is_finite()) {
            return Err(Error::param(format!("c_cal must be positive, got {}", self.c_cal)));
        }
        if let Some(f) = self.f_sup_hat {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::param(format!("f_sup_hat must be positive, got {f}")));
            }
        }
        let (lo, hi) = self.density_interval;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param(format!("density interval [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    /// Sorted, deduplicated candidates.
    fn sorted_candidates(&self) -> Vec<usize> {
        let mut c = self.candidates.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// `pen(m) = 𝔠_cal m / (NT)`
pub fn penalty(m: usize, n_paths: usize, horizon: f64, c_cal: f64) -> f64 {
    c_cal * m as f64 / (n_paths as f64 * horizon)
}

/// `𝔡_T = min{𝔠_T/2, 1/(64 𝔠_φ² T (f_sup + √(𝔠_T/2)/(3𝔠_φ)))}`
pub fn d_t_plug_in(horizon: f64, c_phi_sq: f64, f_sup: f64) -> f64 {
    let half = c_t(horizon) / 2.0;
    let second = 1.0 / (64.0 * c_phi_sq * horizon * (f_sup + half.sqrt() / (3.0 * c_phi_sq.sqrt())));
    half.min(second)
}

const MIN_BINS: usize = 50;
const MAX_BINS: usize = 10_000;

/// Max height of a histogram of `samples` over `[lo, hi]`.
///
/// Heights are normalized by `samples.len()`, so mass outside the interval
/// still counts in the denominator.
pub fn density_sup_from_samples(samples: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let mut inside: Vec<f64> = samples.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
    if inside.is_empty() {
        return Err(Error::DegenerateData(format!("no samples fall in [{lo}, {hi}]")));
    }
    inside.sort_unstable_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (inside.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        let next = inside[(i + 1).min(inside.len() - 1)];
        inside[i] + frac * (next - inside[i])
    };
    let iqr = q(0.75) - q(0.25);
    let width = hi - lo;
    let fd = 2.0 * iqr / (inside.len() as f64).cbrt();
    let bins = if fd > 0.0 {
        ((width / fd).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
    } else {
        MAX_BINS
    };
    let h = width / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in &inside {
        counts[(((x - lo) / h) as usize).min(bins - 1)] += 1;
    }
    let peak = *counts.iter().max().unwrap();
    Ok(peak as f64 / (samples.len() as f64 * h))
}

/// Histogram estimate of `‖f_T‖_∞` from all pooled states `X^i_{t_l}`, `l < n`.
pub fn estimate_density_sup(bundle: &PathBundle, lo: f64, hi: f64) -> Result<f64> {
    let samples: Vec<f64> = bundle.paths().flat_map(|p| &p[..p.len() - 1]).copied().collect();
    density_sup_from_samples(&samples, lo, hi)
}

/// Outcome of the admissibility test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissible {
    pub dims: Vec<usize>,
    /// The inequality excluded every candidate and the smallest one was kept.
    pub fallback: bool,
    pub d_t: Option<f64>,
    pub f_sup_hat: Option<f64>,
    pub threshold: Option<f64>,
    /// `𝔠_φ² m (‖Ψ̂_m⁻¹‖² ∨ 1)` per sorted candidate.
    pub lhs: Vec<f64>,
}

fn admissible_from_moments(
    bundle: &PathBundle,
    moments: &EmpiricalMoments,
    spec: &BasisSpec,
    config: &SelectionConfig,
    candidates: &[usize],
) -> Result<Admissible> {
    let c_phi_sq = spec.c_phi_sq();
    let lhs: Vec<f64> = candidates
        .iter()
        .map(|&m| {
            let inv = inv_op_norm_from_min_eig(sym_eigen_min(&moments.gram.leading_block(m)));
            c_phi_sq * m as f64 * (inv * inv).max(1.0)
        })
        .collect();

    let (d_t, f_sup_hat) = match config.dt_mode {
        DtMode::Unrestricted => {
            return Ok(Admissible {
                dims: candidates.to_vec(),
                fallback: false,
                d_t: None,
                f_sup_hat: None,
                threshold: None,
                lhs,
            })
        }
        DtMode::Simplified => (c_t(moments.horizon) / 2.0, None),
        DtMode::PlugIn => {
            let f = match config.f_sup_hat {
                Some(f) => f,
                None => {
                    let (lo, hi) = spec.support().unwrap_or(config.density_interval);
                    estimate_density_sup(bundle, lo, hi)?
                }
            };
            (d_t_plug_in(moments.horizon, c_phi_sq, f), Some(f))
        }
    };
    let nt = moments.n_paths as f64 * moments.horizon;
    let threshold = d_t * nt / nt.ln();
    let mut dims: Vec<usize> = candidates
        .iter()
        .zip(&lhs)
        .filter(|(_, &l)| l <= threshold)
        .map(|(&m, _)| m)
        .collect();
    let fallback = dims.is_empty();
    if fallback {
        warn!(
            "no candidate satisfies the admissibility inequality (threshold {threshold:.4e}); keeping m = {}",
            candidates[0]
        );
        dims.push(candidates[0]);
    }
    Ok(Admissible {
        dims,
        fallback,
        d_t: Some(d_t),
        f_sup_hat,
        threshold: Some(threshold),
        lhs,
    })
}

/// `M̂_N` for the configured mode. Never empty.
pub fn admissible_dims(bundle: &PathBundle, spec: &BasisSpec, config: &SelectionConfig) -> Result<Admissible> {
    config.validate(spec)?;
    let candidates = config.sorted_candidates();
    let moments = empirical_moments(bundle, spec, *candidates.last().unwrap())?;
    admissible_from_moments(bundle, &moments, spec, config, &candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub m_hat: usize,
    pub fit: DriftFit,
    pub candidates: Vec<usize>,
    pub admissible: Vec<usize>,
    pub fallback: bool,
    /// `-‖b̂_m‖²_N + pen(m)` per candidate; `None` off the admissible set.
    pub criterion: Vec<Option<f64>>,
    pub pen: Vec<f64>,
    pub c_cal: f64,
    pub d_t_mode: DtMode,
    pub d_t: Option<f64>,
    pub f_sup_hat: Option<f64>,
}

/// Fits and admissibility for every candidate, before a penalty is applied.
#[derive(Debug, Clone)]
pub struct CandidateFits {
    pub candidates: Vec<usize>,
    pub admissible: Admissible,
    /// One fit per candidate; `None` off the admissible set.
    pub fits: Vec<Option<DriftFit>>,
    n_paths: usize,
    horizon: f64,
}

impl CandidateFits {
    pub fn compute(bundle: &PathBundle, spec: &BasisSpec, config: &SelectionConfig) -> Result<Self> {
        config.validate(spec)?;
        let candidates = config.sorted_candidates();
        let moments = empirical_moments(bundle, spec, *candidates.last().unwrap())?;
        let admissible = admissible_from_moments(bundle, &moments, spec, config, &candidates)?;
        let fits = candidates
            .iter()
            .map(|&m| {
                if admissible.dims.contains(&m) {
                    fit_from_moments(&moments.truncate(m), spec, config.gate).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            candidates,
            admissible,
            fits,
            n_paths: moments.n_paths,
            horizon: moments.horizon,
        })
    }

    /// Applies the penalty with constant `c_cal` and picks `m̂`.
    pub fn select(&self, c_cal: f64, dt_mode: DtMode) -> SelectionResult {
        let pen: Vec<f64> = self
            .candidates
            .iter()
            .map(|&m| penalty(m, self.n_paths, self.horizon, c_cal))
            .collect();
        let criterion: Vec<Option<f64>> = self
            .fits
            .iter()
            .zip(&pen)
            .map(|(fit, p)| fit.as_ref().map(|f| -f.empirical_norm_sq + p))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in criterion.iter().enumerate() {
            if let Some(c) = *c {
                if best.is_none_or(|(_, b)| c < b) {
                    best = Some((k, c));
                }
            }
        }
        let (k, _) = best.expect("admissible set is never empty");
        SelectionResult {
            m_hat: self.candidates[k],
            fit: self.fits[k].clone().unwrap(),
            candidates: self.candidates.clone(),
            admissible: self.admissible.dims.clone(),
            fallback: self.admissible.fallback,
            criterion,
            pen,
            c_cal,
            d_t_mode: dt_mode,
            d_t: self.admissible.d_t,
            f_sup_hat: self.admissible.f_sup_hat,
        }
    }
}

/// Adaptive estimator `b̂_m̂`.
pub fn select_model(bundle: &PathBundle, spec: &BasisSpec, config: &SelectionConfig) -> Result<SelectionResult> {
    Ok(CandidateFits::compute(bundle, spec, config)?.select(config.c_cal, config.dt_mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub c_cal: f64,
    pub mean_mise: f64,
    pub std_mise: Option<f64>,
    pub mean_m_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub model_id: u8,
    pub reps: usize,
    pub seed: u64,
    pub failures: usize,
    pub table: Vec<CalibrationRow>,
    pub best: f64,
}

/// Picks the `c_cal` in `grid` with the smallest mean MISE against the known drift.
///
/// Each repetition simulates one bundle and evaluates every grid value on it.
pub fn calibrate_c_cal(base: &ExperimentConfig, grid: &[f64], reps: usize, seed: u64) -> Result<CalibrationReport> {
    if grid.is_empty() {
        return Err(Error::param("calibration grid must be nonempty"));
    }
    if reps == 0 {
        return Err(Error::param("calibration needs at least one repetition"));
    }
    if let Some(c) = grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::param(format!("grid value {c} is not a positive constant")));
    }
    base.validate()?;
    let model = base.model()?;
    let time_grid = base.time_grid()?;
    let sel = base.selection_config();
    let (lo, hi) = base.mise_interval;

    // (mise, m_hat) per grid value, per repetition
    let per_rep: Vec<Result<Vec<(f64, usize)>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let bundle = simulate_bundle(&model, &time_grid, base.n_paths, repetition_seed(seed, r as u64))?;
            let fits = CandidateFits::compute(&bundle, &base.basis, &sel)?;
            Ok(grid
                .iter()
                .map(|&c| {
                    let res = fits.select(c, sel.dt_mode);
                    (mise(&res.fit, |x| model.drift(x), lo, hi, base.mise_grid), res.m_hat)
                })
                .collect())
        })
        .collect();

    let mut failures = 0;
    let mut ok = Vec::new();
    for r in per_rep {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                warn!("calibration repetition failed: {e}");
                failures += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::DegenerateData("every calibration repetition failed".into()));
    }
    let table: Vec<CalibrationRow> = grid
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let mises: Vec<f64> = ok.iter().map(|v| v[k].0).collect();
            let ms: Vec<f64> = ok.iter().map(|v| v[k].1 as f64).collect();
            let (mean_mise, std_mise) = crate::metrics::mean_std(&mises);
            CalibrationRow {
                c_cal: c,
                mean_mise,
                std_mise,
                mean_m_hat: crate::metrics::mean_std(&ms).0,
            }
        })
        .collect();
    let best = table
        .iter()
        .fold(None::<&CalibrationRow>, |acc, row| match acc {
            Some(a) if a.mean_mise <= row.mean_mise => Some(a),
            _ => Some(row),
        })
        .unwrap()
        .c_cal;
    Ok(CalibrationReport {
        model_id: base.model_id,
        reps,
        seed,
        failures,
        table,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_model, SdeModel, TimeGrid};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Uniform};

    fn trig6() -> BasisSpec {
        BasisSpec::trigonometric(-3.0, 3.0).unwrap()
    }

    fn model1(n_paths: usize, seed: u64) -> PathBundle {
        simulate_bundle(&builtin_model(1).unwrap(), &TimeGrid::new(5.0, 200).unwrap(), n_paths, seed).unwrap()
    }

    fn open_config(c_cal: f64) -> SelectionConfig {
        SelectionConfig {
            c_cal,
            dt_mode: DtMode::Unrestricted,
            gate: GateMode::Off,
            ..Default::default()
        }
    }

    #[test]
    fn penalty_examples() {
        assert!((penalty(4, 400, 5.0, 1.0) - 0.002).abs() < 1e-18);
        assert_eq!(penalty(0, 400, 5.0, 1.0), 0.0);
        assert_eq!(penalty(3, 400, 5.0, 2.0), 2.0 * penalty(3, 400, 5.0, 1.0));
    }

    #[test]
    fn d_t_branches() {
        let half = c_t(5.0) / 2.0;
        // Tiny density: the first branch wins.
        assert_eq!(d_t_plug_in(5.0, 1.0, 1e-9), half.min(1.0 / (320.0 * (1e-9 + half.sqrt() / 3.0))));
        // 1/(320·(0.3 + 0.0173)) ≈ 0.00985 > c_T/2 ≈ 0.0027
        assert_eq!(d_t_plug_in(5.0, 1.0, 0.3), half);
        assert!(d_t_plug_in(5.0, 1.0, 10.0) < half);
    }

    #[test]
    fn density_of_uniform_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let u = Uniform::new(-3.0, 3.0).unwrap();
        let xs: Vec<f64> = (0..200_000).map(|_| u.sample(&mut rng)).collect();
        let f = density_sup_from_samples(&xs, -3.0, 3.0).unwrap();
        assert!((f - 1.0 / 6.0).abs() < 0.1 / 6.0, "{f}");
    }

    #[test]
    fn density_of_a_point_mass() {
        let xs = vec![0.3; 1000];
        let f = density_sup_from_samples(&xs, -3.0, 3.0).unwrap();
        assert!((f - MAX_BINS as f64 / 6.0).abs() < 1e-9);
        assert!(matches!(density_sup_from_samples(&xs, 1.0, 2.0), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn density_stable_across_seeds() {
        let a = estimate_density_sup(&model1(400, 1), -3.0, 3.0).unwrap();
        let b = estimate_density_sup(&model1(400, 2), -3.0, 3.0).unwrap();
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() / a < 0.15, "{a} vs {b}");
    }

    #[test]
    fn theoretical_sets_fall_back() {
        let b = model1(400, 9);
        let spec = trig6();
        for mode in [DtMode::PlugIn, DtMode::Simplified] {
            let cfg = SelectionConfig {
                dt_mode: mode,
                ..Default::default()
            };
            let adm = admissible_dims(&b, &spec, &cfg).unwrap();
            // 𝔠_φ²·1·36 against 𝔡_T·2000/log 2000 ≤ 0.0027·263
            assert!(adm.lhs[0] >= 36.0 - 1e-9);
            assert!(adm.threshold.unwrap() < 0.72);
            assert!(adm.fallback);
            assert_eq!(adm.dims, vec![1]);
        }
        let open = admissible_dims(&b, &spec, &open_config(1.0)).unwrap();
        assert_eq!(open.dims, (1..=6).collect::<Vec<_>>());
        assert!(!open.fallback);
    }

    #[test]
    fn nested_modes() {
        // The simplified set is the plug-in set whenever c_T/2 is the smaller branch.
        let spec = BasisSpec::trigonometric(0.0, 0.5).unwrap();
        let grid = TimeGrid::new(5.0, 10).unwrap();
        let b = PathBundle::from_paths(grid, 0, vec![vec![0.25; 11]; 40_000]).unwrap();
        let simple = SelectionConfig {
            candidates: vec![1],
            dt_mode: DtMode::Simplified,
            ..Default::default()
        };
        let plug = SelectionConfig {
            dt_mode: DtMode::PlugIn,
            f_sup_hat: Some(0.1),
            ..simple.clone()
        };
        let s = admissible_dims(&b, &spec, &simple).unwrap();
        let p = admissible_dims(&b, &spec, &plug).unwrap();
        assert!(s.d_t.unwrap() <= p.d_t.unwrap());
        assert!(s.dims.iter().all(|m| p.dims.contains(m)));
    }

    #[test]
    fn singular_gram_excluded() {
        let spec = trig6();
        let grid = TimeGrid::new(5.0, 20).unwrap();
        let b = PathBundle::from_paths(grid, 0, vec![vec![0.5; 21]; 100]).unwrap();
        let cfg = SelectionConfig {
            candidates: vec![1, 2, 3],
            dt_mode: DtMode::Simplified,
            ..Default::default()
        };
        let adm = admissible_dims(&b, &spec, &cfg).unwrap();
        assert!(adm.lhs[1..].iter().all(|l| l.is_infinite()));
    }

    #[test]
    fn single_candidate_is_selected() {
        let b = model1(100, 3);
        let cfg = SelectionConfig {
            candidates: vec![4],
            ..open_config(1.0)
        };
        let res = select_model(&b, &trig6(), &cfg).unwrap();
        assert_eq!(res.m_hat, 4);
        assert_eq!(res.fit.m, 4);
    }

    #[test]
    fn criterion_identity_and_argmin() {
        let b = model1(400, 12);
        let res = select_model(&b, &trig6(), &open_config(1.0)).unwrap();
        let k = res.candidates.iter().position(|&m| m == res.m_hat).unwrap();
        let best = res.criterion[k].unwrap();
        for (j, c) in res.criterion.iter().enumerate() {
            let c = c.unwrap();
            assert!(c > best || (c == best && j >= k));
        }
        let via_gamma = res.fit.objective + res.pen[k];
        assert!((via_gamma - best).abs() < 1e-12);
    }

    #[test]
    fn larger_penalty_never_increases_m_hat() {
        let b = model1(200, 21);
        let fits = CandidateFits::compute(&b, &trig6(), &open_config(1.0)).unwrap();
        let ms: Vec<usize> = [0.01, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 100.0, 1e6]
            .iter()
            .map(|&c| fits.select(c, DtMode::Unrestricted).m_hat)
            .collect();
        assert!(ms.windows(2).all(|w| w[1] <= w[0]), "{ms:?}");
        assert_eq!(*ms.last().unwrap(), 1);
    }

    #[test]
    fn noise_free_constant_drift_selects_small_m() {
        // b = 2φ_1 is constant, so the paths are straight lines starting at -2.
        let phi1 = 1.0 / 6f64.sqrt();
        let model = SdeModel::new("const", move |_| 2.0 * phi1, |_| 0.0, |_| 0.0, -2.0);
        let grid = TimeGrid::new(5.0, 200).unwrap();
        let b = simulate_bundle(&model, &grid, 5, 0).unwrap();
        let res = select_model(&b, &trig6(), &open_config(1.0)).unwrap();
        assert_eq!(res.m_hat, 1);
        assert!((res.fit.theta[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_singleton_and_direction() {
        let base = ExperimentConfig {
            n_paths: 50,
            reps: 4,
            ..ExperimentConfig::default()
        };
        let one = calibrate_c_cal(&base, &[0.7], 3, 5).unwrap();
        assert_eq!(one.best, 0.7);
        let two = calibrate_c_cal(&base, &[1.0, 1e6], 4, 5).unwrap();
        assert_eq!(two.table[1].mean_m_hat, 1.0);
        let best = two.table.iter().map(|r| r.mean_mise).fold(f64::INFINITY, f64::min);
        assert!(two.table[1].mean_mise >= best);
        assert!(calibrate_c_cal(&base, &[], 3, 5).is_err());
    }
}
