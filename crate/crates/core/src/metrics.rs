//! Error measures and the repetition harness.

use std::io::Write;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::estimator::{empirical_inner, empirical_moments, DriftFit, GateMode};
use crate::linalg::{Cholesky, SymMatrix};
use crate::quadrature::{trapezoid, uniform_nodes};
use crate::rng::repetition_seed;
use crate::selection::{CandidateFits, DtMode, SelectionConfig};
use crate::sim::{builtin_model, simulate_bundle, JumpLaw, PathBundle, SdeModel, TimeGrid};

/// Penalty constant shipped as the default, from `calibrate_c_cal` on model 1
/// over `{0.25, 0.5, 1, 2, 4, 8}` with 50 repetitions and seed 2024.
pub const CALIBRATED_C_CAL: f64 = 8.0;

/// Seed used to produce [`CALIBRATED_C_CAL`].
pub const CALIBRATION_SEED: u64 = 2024;

pub const CALIBRATION_GRID: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// `∫_lo^hi (f - g)²` by the trapezoid rule on `grid_n + 1` nodes.
pub fn integrated_sq_error<F, G>(f: F, g: G, lo: f64, hi: f64, grid_n: usize) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    trapezoid(
        |x| {
            let d = f(x) - g(x);
            d * d
        },
        lo,
        hi,
        grid_n,
    )
}

/// Integrated squared error of a fit on `[lo, hi]`.
pub fn mise<B: Fn(f64) -> f64>(fit: &DriftFit, true_b: B, lo: f64, hi: f64, grid_n: usize) -> f64 {
    integrated_sq_error(|x| fit.evaluate(x), true_b, lo, hi, grid_n)
}

/// `‖b̂ - b 1_I‖²_N` on the bundle the fit came from.
pub fn empirical_risk<B>(fit: &DriftFit, bundle: &PathBundle, true_b: B, lo: f64, hi: f64) -> Result<f64>
where
    B: Fn(f64) -> f64 + Sync,
{
    let diff = |x: f64| {
        let b = if (lo..=hi).contains(&x) { true_b(x) } else { 0.0 };
        fit.evaluate(x) - b
    };
    empirical_inner(bundle, diff, diff)
}

/// Sample mean and unbiased standard deviation; the latter is `None` below two samples.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model_id: u8,
    pub n_paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub lambda: f64,
    pub basis: BasisSpec,
    pub dims: Vec<usize>,
    pub c_cal: f64,
    pub dt_mode: DtMode,
    pub gate: GateMode,
    /// Replaces the histogram estimate of `‖f_T‖_∞` in plug-in mode.
    pub f_sup_hat: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub mise_grid: usize,
    pub mise_interval: (f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model_id: 1,
            n_paths: 400,
            steps: 200,
            horizon: 5.0,
            lambda: 0.5,
            basis: BasisSpec::trigonometric(-3.0, 3.0).unwrap(),
            dims: (1..=6).collect(),
            c_cal: CALIBRATED_C_CAL,
            dt_mode: DtMode::Unrestricted,
            gate: GateMode::Off,
            f_sup_hat: None,
            reps: 100,
            seed: 0,
            mise_grid: 1000,
            mise_interval: (-3.0, 3.0),
        }
    }
}

impl ExperimentConfig {
    pub fn for_model(model_id: u8) -> Self {
        Self {
            model_id,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        builtin_model(self.model_id)?;
        if self.n_paths == 0 {
            return Err(Error::param("n_paths must be >= 1"));
        }
        if self.reps == 0 {
            return Err(Error::param("reps must be >= 1"));
        }
        if self.mise_grid < 2 {
            return Err(Error::param("mise_grid must be >= 2"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let (lo, hi) = self.mise_interval;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param(format!("MISE interval [{lo}, {hi}] is empty")));
        }
        self.time_grid()?;
        self.basis.validate()?;
        if self.n_paths as f64 * self.horizon <= 1.0 {
            return Err(Error::param("need N·T > 1"));
        }
        self.selection_config().validate(&self.basis)
    }

    /// Built-in model with the configured jump intensity.
    pub fn model(&self) -> Result<SdeModel> {
        Ok(builtin_model(self.model_id)?.with_jumps(self.lambda, JumpLaw::STANDARD_NORMAL))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            candidates: self.dims.clone(),
            c_cal: self.c_cal,
            dt_mode: self.dt_mode,
            f_sup_hat: self.f_sup_hat,
            gate: self.gate,
            density_interval: self.mise_interval,
        }
    }
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub m_hat: Option<usize>,
    pub mise: Option<f64>,
    /// `‖b̂ - b 1_I‖²_N`, reported alongside the Lebesgue MISE.
    pub empirical_risk: Option<f64>,
    pub theta: Vec<f64>,
    pub truncated: bool,
    pub fallback: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub model: String,
    pub completed: usize,
    pub failures: usize,
    pub mise_mean: Option<f64>,
    pub mise_std: Option<f64>,
    pub m_hat_mean: Option<f64>,
    pub m_hat_std: Option<f64>,
    pub empirical_risk_mean: Option<f64>,
    /// Fewer than two successful repetitions, so no standard deviations.
    pub single_sample: bool,
    pub fallback_reps: usize,
    pub reps: Vec<RepOutcome>,
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    /// Serialized report with the timing field zeroed.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_time_secs = 0.0;
        Ok(serde_json::to_string_pretty(&copy)?)
    }

    /// Fitted curve of repetition `rep`, when it succeeded.
    pub fn rep_curve(&self, rep: usize) -> Option<impl Fn(f64) -> f64 + '_> {
        let r = self.reps.get(rep)?;
        r.m_hat?;
        let basis = self.config.basis;
        Some(move |x| if r.truncated { 0.0 } else { basis.combination(&r.theta, x) })
    }
}

fn run_rep(config: &ExperimentConfig, model: &SdeModel, grid: &TimeGrid, rep: usize) -> RepOutcome {
    let seed = repetition_seed(config.seed, rep as u64);
    let mut out = RepOutcome {
        rep,
        seed,
        m_hat: None,
        mise: None,
        empirical_risk: None,
        theta: Vec::new(),
        truncated: false,
        fallback: false,
        error: None,
    };
    let (lo, hi) = config.mise_interval;
    let mut attempt = || -> Result<()> {
        let bundle = simulate_bundle(model, grid, config.n_paths, seed)?;
        let sel = CandidateFits::compute(&bundle, &config.basis, &config.selection_config())?
            .select(config.c_cal, config.dt_mode);
        let b = |x| model.drift(x);
        out.mise = Some(mise(&sel.fit, b, lo, hi, config.mise_grid));
        out.empirical_risk = Some(empirical_risk(&sel.fit, &bundle, b, lo, hi)?);
        out.m_hat = Some(sel.m_hat);
        out.truncated = sel.fit.truncated;
        out.fallback = sel.fallback;
        out.theta = sel.fit.theta;
        Ok(())
    };
    if let Err(e) = attempt() {
        warn!("repetition {rep} failed: {e}");
        out.error = Some(e.to_string());
    }
    out
}

/// Runs `config.reps` independent repetitions of simulate → select → MISE.
///
/// Repetition `r` simulates from `repetition_seed(config.seed, r)`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let model = config.model()?;
    let grid = config.time_grid()?;
    let reps: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_rep(config, &model, &grid, r))
        .collect();

    let ok: Vec<&RepOutcome> = reps.iter().filter(|r| r.error.is_none()).collect();
    let stat = |f: fn(&RepOutcome) -> f64| {
        if ok.is_empty() {
            return (None, None);
        }
        let xs: Vec<f64> = ok.iter().map(|r| f(r)).collect();
        let (m, s) = mean_std(&xs);
        (Some(m), s)
    };
    let (mise_mean, mise_std) = stat(|r| r.mise.unwrap());
    let (m_hat_mean, m_hat_std) = stat(|r| r.m_hat.unwrap() as f64);
    let (empirical_risk_mean, _) = stat(|r| r.empirical_risk.unwrap());
    Ok(ExperimentReport {
        config: config.clone(),
        model: model.name.clone(),
        completed: ok.len(),
        failures: reps.len() - ok.len(),
        mise_mean,
        mise_std,
        m_hat_mean,
        m_hat_std,
        empirical_risk_mean,
        single_sample: ok.len() < 2,
        fallback_reps: ok.iter().filter(|r| r.fallback).count(),
        reps,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Summary table with one column per report: mean and StD of MISE and `m̂`.
pub fn write_summary_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(reports.iter().map(|r| format!("Model {}", r.config.model_id)));
    type Getter = fn(&ExperimentReport) -> Option<f64>;
    let rows: [(&str, Getter); 4] = [
        ("Mean MISE", |r| r.mise_mean),
        ("StD MISE", |r| r.mise_std),
        ("Mean m_hat", |r| r.m_hat_mean),
        ("StD m_hat", |r| r.m_hat_std),
    ];
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(&header).map_err(io)?;
    for (label, get) in rows {
        let mut rec = vec![label.to_string()];
        rec.extend(reports.iter().map(|r| fmt_opt(get(r))));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of plot data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x: f64,
    pub b: f64,
    pub bhat: f64,
}

/// `(x, b(x), b̂(x))` on `grid_n + 1` uniform nodes of `[lo, hi]`.
pub fn plot_data<B: Fn(f64) -> f64>(fit: &DriftFit, true_b: B, lo: f64, hi: f64, grid_n: usize) -> Vec<PlotRow> {
    plot_curve(|x| fit.evaluate(x), true_b, lo, hi, grid_n)
}

pub fn plot_curve<F, B>(bhat: F, true_b: B, lo: f64, hi: f64, grid_n: usize) -> Vec<PlotRow>
where
    F: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    uniform_nodes(lo, hi, grid_n)
        .into_iter()
        .map(|x| PlotRow {
            x,
            b: true_b(x),
            bhat: bhat(x),
        })
        .collect()
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["x", "b", "bhat"]).map_err(io)?;
    for r in rows {
        w.write_record([r.x, r.b, r.bhat].map(crate::io::format_value)).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo check of `trace(Ψ_m⁻¹ Ψ_{m,σ}) ≤ (‖σ‖²_∞ + λ𝔠_{ζ²}‖γ‖²_∞) m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheck {
    pub m: usize,
    pub reps: usize,
    /// `None` when the averaged Gram matrix is singular.
    pub estimate: Option<f64>,
    pub bound: f64,
    pub inconclusive: bool,
}

impl TraceCheck {
    pub fn passes(&self, slack: f64) -> bool {
        self.estimate.is_some_and(|e| e <= self.bound * slack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckConfig {
    pub n_paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for TraceCheckConfig {
    fn default() -> Self {
        Self {
            n_paths: 20,
            steps: 200,
            horizon: 5.0,
            reps: 500,
            seed: 0,
        }
    }
}

/// `(⟨b, φ_j⟩_N)_j`
pub fn drift_projection<B>(bundle: &PathBundle, spec: &BasisSpec, m: usize, b: B) -> Result<Vec<f64>>
where
    B: Fn(f64) -> f64 + Sync,
{
    (1..=m)
        .map(|j| empirical_inner(bundle, &b, |x| spec.eval_basis(j, x).unwrap_or(0.0)))
        .collect()
}

/// Runs the trace check for each dimension in `dims`, sharing the simulated bundles.
///
/// `Ψ_m` is the average of `Ψ̂_m` and `Ψ_{m,σ}` is `NT` times the average of
/// `Ê_m Ê_mᵀ`, with `Ê_m = X̂_m - (⟨b, φ_j⟩_N)_j`.
pub fn trace_bound_checks(model: &SdeModel, spec: &BasisSpec, dims: &[usize], cfg: &TraceCheckConfig) -> Result<Vec<TraceCheck>> {
    let noise = model
        .noise_bound()
        .ok_or_else(|| Error::param("trace check needs known sup norms of σ and γ"))?;
    if cfg.reps == 0 || dims.is_empty() || dims.contains(&0) {
        return Err(Error::param("trace check needs reps >= 1 and dimensions >= 1"));
    }
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let big = *dims.iter().max().unwrap();
    let nt = cfg.n_paths as f64 * cfg.horizon;

    let per_rep: Vec<Result<(SymMatrix, Vec<f64>)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let bundle = simulate_bundle(model, &grid, cfg.n_paths, repetition_seed(cfg.seed, r as u64))?;
            let mom = empirical_moments(&bundle, spec, big)?;
            let drift = drift_projection(&bundle, spec, big, |x| model.drift(x))?;
            let e: Vec<f64> = mom.vector.iter().zip(&drift).map(|(x, d)| x - d).collect();
            Ok((mom.gram, e))
        })
        .collect();

    let mut psi = vec![0.0; big * big];
    let mut psi_sigma = vec![0.0; big * big];
    for r in per_rep {
        let (g, e) = r?;
        for i in 0..big {
            for j in 0..big {
                psi[i * big + j] += g.get(i, j);
                psi_sigma[i * big + j] += e[i] * e[j];
            }
        }
    }
    let reps = cfg.reps as f64;
    psi.iter_mut().for_each(|v| *v /= reps);
    psi_sigma.iter_mut().for_each(|v| *v *= nt / reps);
    let psi = SymMatrix::from_row_major(big, &psi)?;
    let psi_sigma = SymMatrix::from_row_major(big, &psi_sigma)?;

    Ok(dims
        .iter()
        .map(|&m| {
            let bound = noise * m as f64;
            let estimate = Cholesky::factor(&psi.leading_block(m)).ok().map(|ch| {
                let s = psi_sigma.leading_block(m);
                (0..m)
                    .map(|k| {
                        let col: Vec<f64> = (0..m).map(|i| s.get(i, k)).collect();
                        ch.solve(&col)[k]
                    })
                    .sum()
            });
            TraceCheck {
                m,
                reps: cfg.reps,
                inconclusive: estimate.is_none(),
                estimate,
                bound,
            }
        })
        .collect())
}

pub fn trace_bound_check(model: &SdeModel, spec: &BasisSpec, m: usize, cfg: &TraceCheckConfig) -> Result<TraceCheck> {
    Ok(trace_bound_checks(model, spec, &[m], cfg)?.remove(0))
}
