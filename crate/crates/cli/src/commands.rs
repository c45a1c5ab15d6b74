use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use jumpdrift::estimator::{empirical_moments, fit_projection_with};
use jumpdrift::io::{load_bundle, save_bundle, BundleMeta};
use jumpdrift::linalg::sym_eigen_min;
use jumpdrift::metrics::{
    plot_curve, plot_data, trace_bound_checks, write_plot_csv, write_summary_csv, ExperimentReport,
    CALIBRATION_GRID, CALIBRATION_SEED,
};
use jumpdrift::rng::splitmix64;
use jumpdrift::selection::calibrate_c_cal;
use jumpdrift::{
    builtin_model, select_model, simulate_bundle, BasisKind, BasisSpec, DtMode, ExperimentConfig, GateMode,
    JumpLaw, PathBundle, SelectionConfig, TimeGrid, TraceCheckConfig,
};
use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{BasisArg, CheckArgs, EstimateArgs, ExperimentArgs, SimulateArgs};
use crate::Failure;

type CmdResult = Result<(), Failure>;

/// Below this many bundles a trace check is reported but never fails.
const MIN_CONCLUSIVE_REPS: usize = 30;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

macro_rules! override_with {
    ($cfg:expr, $args:expr, $($field:ident => $target:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$target = v.into(); })*
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub model_id: u8,
    pub n_paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub lambda: f64,
    pub x0: Option<f64>,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            model_id: e.model_id,
            n_paths: e.n_paths,
            steps: e.steps,
            horizon: e.horizon,
            lambda: e.lambda,
            x0: None,
            seed: 0,
        }
    }
}

pub fn simulate(a: SimulateArgs) -> CmdResult {
    let mut cfg: SimulateConfig = load_config(a.config.as_deref())?;
    override_with!(cfg, a, model => model_id, n_paths => n_paths, steps => steps, horizon => horizon, lambda => lambda, seed => seed);
    if a.x0.is_some() {
        cfg.x0 = a.x0;
    }
    let mut model = builtin_model(cfg.model_id)?.with_jumps(cfg.lambda, JumpLaw::STANDARD_NORMAL);
    if let Some(x0) = cfg.x0 {
        model = model.with_x0(x0);
    }
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let bundle = simulate_bundle(&model, &grid, cfg.n_paths, cfg.seed)?;
    save_bundle(&bundle, &BundleMeta::describe(&model, &bundle), &a.output)?;

    let jumps = bundle.jump_counts().unwrap_or_default();
    let total: usize = jumps.iter().sum();
    println!(
        "wrote {}: {} paths of {} steps, T = {}, model {}, seed {}",
        a.output.display(),
        bundle.n_paths(),
        grid.steps,
        grid.horizon,
        cfg.model_id,
        cfg.seed
    );
    println!(
        "jumps: total {total}, mean per path {:.3}, max {}",
        total as f64 / bundle.n_paths() as f64,
        jumps.iter().max().copied().unwrap_or(0)
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub basis: BasisSpec,
    pub m: Option<usize>,
    pub adaptive: bool,
    pub c_cal: f64,
    pub dims: Vec<usize>,
    pub dt_mode: DtMode,
    pub gate: GateMode,
    pub f_sup_hat: Option<f64>,
    pub plot_grid: Option<usize>,
    pub plot_interval: (f64, f64),
    pub model_id: Option<u8>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            basis: e.basis,
            m: None,
            adaptive: false,
            c_cal: e.c_cal,
            dims: e.dims,
            dt_mode: e.dt_mode,
            gate: e.gate,
            f_sup_hat: None,
            plot_grid: None,
            plot_interval: e.mise_interval,
            model_id: None,
        }
    }
}

fn resolve_basis(current: BasisSpec, a: &EstimateArgs) -> jumpdrift::Result<BasisSpec> {
    let (lo0, hi0) = current.support().unwrap_or((-3.0, 3.0));
    let spec = match (a.basis, current.kind) {
        (Some(BasisArg::Hermite), _) => BasisSpec::hermite(),
        (Some(BasisArg::Trig), _) | (None, BasisKind::Trigonometric { .. }) => {
            BasisSpec::trigonometric(a.lo.unwrap_or(lo0), a.hi.unwrap_or(hi0))?
        }
        (None, BasisKind::Hermite) => BasisSpec::hermite(),
    };
    Ok(spec.with_max_dim(current.max_dim))
}

pub fn estimate(a: EstimateArgs) -> CmdResult {
    let mut cfg: EstimateConfig = load_config(a.config.as_deref())?;
    override_with!(cfg, a, c_cal => c_cal, dims => dims, dt_mode => dt_mode, gate => gate);
    if a.m.is_some() {
        cfg.m = a.m;
        cfg.adaptive = false;
    }
    if a.adaptive {
        cfg.adaptive = true;
    }
    if a.f_sup.is_some() {
        cfg.f_sup_hat = a.f_sup;
    }
    if a.plot_grid.is_some() {
        cfg.plot_grid = a.plot_grid;
    }
    if a.model.is_some() {
        cfg.model_id = a.model;
    }
    cfg.basis = resolve_basis(cfg.basis, &a)?;
    let spec = cfg.basis;

    let (bundle, meta) = load_bundle(&a.input)?;
    let fit = if cfg.adaptive {
        let sel_cfg = SelectionConfig {
            candidates: cfg.dims.clone(),
            c_cal: cfg.c_cal,
            dt_mode: cfg.dt_mode,
            f_sup_hat: cfg.f_sup_hat,
            gate: cfg.gate,
            density_interval: cfg.plot_interval,
        };
        let res = select_model(&bundle, &spec, &sel_cfg)?;
        if res.fallback {
            warn!("admissible set was empty; fell back to m = {}", res.m_hat);
        }
        write_json(&res, a.output.as_deref())?;
        res.fit
    } else {
        let m = cfg.m.ok_or_else(|| usage("pass --m <dim> or --adaptive"))?;
        let fit = fit_projection_with(&bundle, &spec, m, cfg.gate)?;
        if fit.truncated {
            warn!("fit at m = {m} is truncated to zero");
        }
        write_json(&fit, a.output.as_deref())?;
        fit
    };

    if let Some(grid_n) = cfg.plot_grid {
        let id = cfg
            .model_id
            .or(meta.and_then(|m| m.model_id))
            .ok_or_else(|| usage("plot data needs the true drift: pass --model"))?;
        let truth = builtin_model(id)?;
        let path = match (&a.plot_out, &a.output) {
            (Some(p), _) => p.clone(),
            (None, Some(o)) => o.with_extension("plot.csv"),
            (None, None) => return Err(usage("--plot-out is required when JSON goes to stdout")),
        };
        let (lo, hi) = cfg.plot_interval;
        let rows = plot_data(&fit, |x| truth.drift(x), lo, hi, grid_n);
        write_plot_csv(&rows, BufWriter::new(File::create(&path).map_err(anyhow::Error::from)?))?;
        eprintln!("plot data: {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExperimentOutput<'a> {
    reports: &'a [ExperimentReport],
}

fn print_summary(reports: &[ExperimentReport], to_stdout: bool) {
    let mut buf = Vec::new();
    if write_summary_csv(reports, &mut buf).is_ok() {
        let text = String::from_utf8_lossy(&buf);
        if to_stdout {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
    }
}

pub fn experiment(a: ExperimentArgs) -> CmdResult {
    let mut cfg: ExperimentConfig = load_config(a.config.as_deref())?;
    override_with!(
        cfg, a,
        n_paths => n_paths, steps => steps, horizon => horizon, lambda => lambda, c_cal => c_cal,
        dims => dims, dt_mode => dt_mode, gate => gate, mise_grid => mise_grid,
    );
    let models: Vec<u8> = a.model.clone().map_or_else(|| vec![cfg.model_id], Into::into);

    if a.calibrate {
        cfg.model_id = models[0];
        let grid: Vec<f64> = a.grid.clone().map_or_else(|| CALIBRATION_GRID.to_vec(), Into::into);
        let reps = a.reps.unwrap_or(50);
        let seed = a.seed.unwrap_or(CALIBRATION_SEED);
        let report = calibrate_c_cal(&cfg, &grid, reps, seed)?;
        let mut out: Box<dyn Write> = if a.output.is_some() {
            Box::new(std::io::stdout())
        } else {
            Box::new(std::io::stderr())
        };
        let _ = writeln!(out, "c_cal,mean_mise,std_mise,mean_m_hat");
        for r in &report.table {
            let _ = writeln!(
                out,
                "{},{:.6},{},{:.3}",
                r.c_cal,
                r.mean_mise,
                r.std_mise.map(|s| format!("{s:.6}")).unwrap_or_default(),
                r.mean_m_hat
            );
        }
        let _ = writeln!(out, "chosen c_cal: {}", report.best);
        write_json(&report, a.output.as_deref())?;
        return Ok(());
    }

    override_with!(cfg, a, reps => reps, seed => seed);
    let reports = models
        .iter()
        .map(|&id| jumpdrift::run_experiment(&ExperimentConfig { model_id: id, ..cfg.clone() }))
        .collect::<jumpdrift::Result<Vec<_>>>()?;

    write_json(&ExperimentOutput { reports: &reports }, a.output.as_deref())?;
    let csv_path = a.csv.clone().or_else(|| a.output.as_ref().map(|o| o.with_extension("csv")));
    if let Some(p) = &csv_path {
        write_summary_csv(&reports, BufWriter::new(File::create(p).map_err(anyhow::Error::from)?))?;
    }
    print_summary(&reports, a.output.is_some());
    for r in &reports {
        if r.single_sample {
            warn!("model {}: fewer than two successful repetitions, no StD reported", r.config.model_id);
        }
        if r.failures > 0 {
            warn!("model {}: {} of {} repetitions failed", r.config.model_id, r.failures, r.reps.len());
        }
    }

    if let Some(dir) = &a.plot_dir {
        fs::create_dir_all(dir).map_err(anyhow::Error::from)?;
        for r in &reports {
            let truth = builtin_model(r.config.model_id)?;
            let (lo, hi) = r.config.mise_interval;
            for rep in 0..r.reps.len().min(10) {
                if let Some(curve) = r.rep_curve(rep) {
                    let rows = plot_curve(curve, |x| truth.drift(x), lo, hi, r.config.mise_grid);
                    let path = dir.join(format!("model{}_rep{rep}.csv", r.config.model_id));
                    write_plot_csv(&rows, BufWriter::new(File::create(&path).map_err(anyhow::Error::from)?))?;
                }
            }
        }
    }

    if reports.iter().all(|r| r.completed == 0) {
        return Err(Failure::Check("every repetition failed".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub models: Vec<u8>,
    pub dims: Vec<usize>,
    pub reps: usize,
    pub n_paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub slack: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        let t = TraceCheckConfig::default();
        Self {
            models: vec![1],
            dims: vec![2, 4, 6],
            reps: t.reps,
            n_paths: t.n_paths,
            steps: t.steps,
            horizon: t.horizon,
            slack: 1.2,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Serialize)]
struct PropertyResult {
    property: String,
    value: f64,
    bound: f64,
    status: Status,
}

impl PropertyResult {
    fn new(property: String, value: f64, bound: f64, ok: bool) -> Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        Self {
            property,
            value,
            bound,
            status,
        }
    }
}

/// Symmetry, PSD, nested blocks and the minimizer property on one bundle.
fn invariants(label: &str, bundle: &PathBundle, m: usize, seed: u64) -> anyhow::Result<Vec<PropertyResult>> {
    let spec = BasisSpec::trigonometric(-3.0, 3.0)?;
    let mom = empirical_moments(bundle, &spec, m)?;
    let g = &mom.gram;
    let asym = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| (g.get(i, j) - g.get(j, i)).abs())
        .fold(0.0, f64::max);
    let min_eig = sym_eigen_min(g);
    let nested = (1..m).all(|k| mom.truncate(k).gram == g.leading_block(k))
        && (1..m).all(|k| empirical_moments(bundle, &spec, k).map(|s| s.gram == g.leading_block(k)).unwrap_or(false));

    let mut out = vec![
        PropertyResult::new(format!("{label}: gram asymmetry"), asym, 0.0, asym == 0.0),
        PropertyResult::new(format!("{label}: gram min eigenvalue"), min_eig, -1e-12, min_eig >= -1e-12),
        PropertyResult::new(format!("{label}: nested blocks"), f64::from(u8::from(nested)), 1.0, nested),
    ];

    let fit = fit_projection_with(bundle, &spec, m, GateMode::Off)?;
    if fit.truncated {
        out.push(PropertyResult {
            property: format!("{label}: minimizer (gram singular)"),
            value: f64::NAN,
            bound: -1e-12,
            status: Status::Inconclusive,
        });
        return Ok(out);
    }
    let base = mom.objective(&fit.theta);
    let mut state = seed;
    let mut worst = f64::INFINITY;
    for k in 0..100 {
        let scale = 10f64.powi(k % 8 - 6);
        let theta: Vec<f64> = fit
            .theta
            .iter()
            .map(|t| {
                state = splitmix64(state);
                t + scale * ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            })
            .collect();
        worst = worst.min(mom.objective(&theta) - base);
    }
    out.push(PropertyResult::new(format!("{label}: minimizer gap"), worst, -1e-12, worst >= -1e-12));
    Ok(out)
}

pub fn check(a: CheckArgs) -> CmdResult {
    let mut cfg: CheckConfig = load_config(a.config.as_deref())?;
    override_with!(cfg, a, model => models, dims => dims, reps => reps, n_paths => n_paths, slack => slack, seed => seed);
    if cfg.models.is_empty() || cfg.dims.is_empty() {
        return Err(usage("models and dims must be nonempty"));
    }

    let bundle_file: Option<(PathBuf, PathBundle)> = match &a.bundle {
        Some(p) => Some((p.clone(), load_bundle(p)?.0)),
        None => None,
    };

    let spec = BasisSpec::trigonometric(-3.0, 3.0)?;
    let tcfg = TraceCheckConfig {
        n_paths: cfg.n_paths,
        steps: cfg.steps,
        horizon: cfg.horizon,
        reps: cfg.reps,
        seed: cfg.seed,
    };
    let mut results = Vec::new();
    for &id in &cfg.models {
        let model = builtin_model(id)?;
        for c in trace_bound_checks(&model, &spec, &cfg.dims, &tcfg)? {
            let status = match c.estimate {
                _ if c.inconclusive || cfg.reps < MIN_CONCLUSIVE_REPS => Status::Inconclusive,
                Some(_) if c.passes(cfg.slack) => Status::Pass,
                _ => Status::Fail,
            };
            results.push(PropertyResult {
                property: format!("model {id}: trace bound m = {}", c.m),
                value: c.estimate.unwrap_or(f64::NAN),
                bound: c.bound * cfg.slack,
                status,
            });
        }
        let m = *cfg.dims.iter().max().unwrap();
        let sim = simulate_bundle(&model, &TimeGrid::new(cfg.horizon, cfg.steps)?, 100, cfg.seed)?;
        results.extend(invariants(&format!("model {id}"), &sim, m, cfg.seed)?);
    }
    if let Some((path, bundle)) = &bundle_file {
        let m = *cfg.dims.iter().max().unwrap();
        results.extend(invariants(&path.display().to_string(), bundle, m, cfg.seed)?);
    }

    for r in &results {
        let tag = match r.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        println!("{tag} {}: {:.6e} (bound {:.6e})", r.property, r.value, r.bound);
    }
    if a.output.is_some() {
        write_json(&results, a.output.as_deref())?;
    }
    let inconclusive = results.iter().filter(|r| r.status == Status::Inconclusive).count();
    if inconclusive > 0 {
        warn!("{inconclusive} properties inconclusive (need >= {MIN_CONCLUSIVE_REPS} reps and a nonsingular Gram)");
    }
    let failed = results.iter().filter(|r| r.status == Status::Fail).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} properties failed", results.len())));
    }
    Ok(())
}
