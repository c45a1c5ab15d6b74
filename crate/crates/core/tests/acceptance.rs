//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use jumpdrift::estimator::{empirical_moments, fit_projection_with, objective_gamma};
use jumpdrift::linalg::{jacobi_eigen, sym_eigen_min};
use jumpdrift::metrics::{mean_std, mise, run_experiment, trace_bound_checks, ExperimentConfig, TraceCheckConfig};
use jumpdrift::{builtin_model, simulate_bundle, BasisSpec, GateMode, PathBundle, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn trig6() -> BasisSpec {
    BasisSpec::trigonometric(-3.0, 3.0).unwrap()
}

fn reference_grid() -> TimeGrid {
    TimeGrid::new(5.0, 200).unwrap()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    h / 3.0 * (f(a) + f(b) + inner)
}

fn default_reports() -> Vec<jumpdrift::ExperimentReport> {
    (1..=3)
        .map(|id| {
            let cfg = ExperimentConfig {
                model_id: id,
                seed: 7,
                ..ExperimentConfig::default()
            };
            run_experiment(&cfg).unwrap()
        })
        .collect()
}

fn table_reproduction(reports: &[jumpdrift::ExperimentReport]) -> Outcome {
    let bands = [(0.06, 0.25, 0.1251), (0.07, 0.30, 0.1469), (0.09, 0.37, 0.1825)];
    let means: Vec<f64> = reports.iter().map(|r| r.mise_mean.unwrap()).collect();
    let in_band: Vec<bool> = means.iter().zip(&bands).map(|(m, (lo, hi, _))| (lo..=hi).contains(&m)).collect();
    let ordered = means[0] < means[1] && means[1] < means[2];
    let detail = reports
        .iter()
        .zip(&bands)
        .map(|(r, (lo, hi, reference))| {
            format!(
                "model {} mean {:.4} sd {:.4} band [{lo}, {hi}] reference {reference}",
                r.config.model_id,
                r.mise_mean.unwrap(),
                r.mise_std.unwrap()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(
        in_band.iter().all(|&b| b) && ordered,
        format!("c_cal {}; {detail}; ordering 1<2<3 {ordered}", reports[0].config.c_cal),
    )
}

fn dimension_statistics(reports: &[jumpdrift::ExperimentReport]) -> Outcome {
    let mean: Vec<f64> = reports.iter().map(|r| r.m_hat_mean.unwrap()).collect();
    let sd: Vec<f64> = reports.iter().map(|r| r.m_hat_std.unwrap()).collect();
    let m1 = (4.3..=6.0).contains(&mean[0]);
    let m23 = mean[1..].iter().all(|m| (3.0..=5.5).contains(m));
    let stable = sd[0] < sd[1] && sd[0] < sd[2];
    outcome(
        m1 && m23 && stable,
        format!(
            "mean m_hat {:.2}/{:.2}/{:.2} (bands [4.3, 6] / [3, 5.5] / [3, 5.5]); sd {:.3}/{:.3}/{:.3}, model 1 smallest {stable}",
            mean[0], mean[1], mean[2], sd[0], sd[1], sd[2]
        ),
    )
}

/// Paths of `dx = b(x) dt` by hand-written Euler, started across `[-2.9, -0.5]`.
fn noise_free_bundle(b: impl Fn(f64) -> f64, grid: TimeGrid, n_paths: usize) -> PathBundle {
    let dt = grid.dt();
    let paths = (0..n_paths)
        .map(|i| {
            let mut x = -2.9 + 2.4 * i as f64 / (n_paths - 1) as f64;
            let mut p = vec![x];
            for _ in 0..grid.steps {
                x += b(x) * dt;
                p.push(x);
            }
            p
        })
        .collect();
    PathBundle::from_paths(grid, 0, paths).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let spec = trig6();
    let phi = |j: usize, x: f64| spec.eval_basis(j, x).unwrap();
    let b = |x: f64| 2.0 * phi(1, x) + phi(3, x);
    let grid = TimeGrid::new(2.0, 400).unwrap();
    let bundle = noise_free_bundle(b, grid, 60);
    let inside = bundle.paths().flatten().all(|x| (-3.0..=3.0).contains(x));
    let fit = fit_projection_with(&bundle, &spec, 3, GateMode::Off).unwrap();
    let oracle: Vec<f64> = (1..=3).map(|j| simpson(|x| b(x) * phi(j, x), -3.0, 3.0, 20_000)).collect();
    let tol = 1e-8f64.max(grid.dt());
    let coef_err = fit.theta.iter().zip(&oracle).map(|(a, o)| (a - o).abs()).fold(0.0, f64::max);

    // Standard error of θ̂ under noise, N = 50 vs N = 400.
    let model = builtin_model(1).unwrap();
    let reps = 200;
    let sd = |n_paths: usize, salt: u64| -> Vec<f64> {
        let thetas: Vec<Vec<f64>> = (0..reps)
            .map(|r| {
                let bundle = simulate_bundle(&model, &reference_grid(), n_paths, salt + r).unwrap();
                fit_projection_with(&bundle, &spec, 3, GateMode::Off).unwrap().theta
            })
            .collect();
        (0..3)
            .map(|j| mean_std(&thetas.iter().map(|t| t[j]).collect::<Vec<_>>()).1.unwrap())
            .collect()
    };
    let (small, large) = (sd(50, 10_000), sd(400, 20_000));
    let ratios: Vec<f64> = small.iter().zip(&large).map(|(s, l)| s / l).collect();
    let ratio_ok = ratios.iter().all(|r| (2.0..=3.6).contains(r));
    outcome(
        inside && coef_err <= tol && ratio_ok,
        format!(
            "noise-free max |theta - oracle| {coef_err:.2e} (tol {tol:.1e}, paths inside I {inside}); sd ratio N=50/N=400 per coefficient {:.2}/{:.2}/{:.2} (band [2.0, 3.6])",
            ratios[0], ratios[1], ratios[2]
        ),
    )
}

fn instance_bundles(count: usize) -> Vec<(PathBundle, BasisSpec, usize)> {
    (0..count)
        .map(|k| {
            let model = builtin_model(1 + (k % 3) as u8).unwrap();
            let n_paths = [50, 100, 200, 400][k % 4];
            let bundle = simulate_bundle(&model, &reference_grid(), n_paths, 500 + k as u64).unwrap();
            let spec = if k % 5 == 4 { BasisSpec::hermite() } else { trig6() };
            (bundle, spec, 1 + k % 8)
        })
        .collect()
}

fn minimizer_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    for (bundle, spec, m) in instance_bundles(20) {
        let fit = fit_projection_with(&bundle, &spec, m, GateMode::Off).unwrap();
        assert!(!fit.truncated);
        let base = objective_gamma(&bundle, &spec, &fit.theta).unwrap();
        for _ in 0..100 {
            let scale = 10f64.powi(rng.random_range(-6..=1));
            let theta: Vec<f64> = fit.theta.iter().map(|t| t + scale * rng.random_range(-1.0..1.0)).collect();
            let gap = objective_gamma(&bundle, &spec, &theta).unwrap() - base;
            worst = worst.min(gap);
            checked += 1;
        }
    }
    outcome(worst >= -1e-12, format!("{checked} perturbations over 20 fits; min gamma gap {worst:.3e}"))
}

fn gram_properties() -> Outcome {
    let mut sym = true;
    let mut nested = true;
    let mut min_eig = f64::INFINITY;
    let instances = instance_bundles(24);
    for (bundle, spec, m) in &instances {
        let big = m + 4;
        let g = empirical_moments(bundle, spec, big).unwrap().gram;
        sym &= (0..big).all(|i| (0..big).all(|j| g.get(i, j) == g.get(j, i)));
        min_eig = min_eig.min(sym_eigen_min(&g)).min(jacobi_eigen(&g).values[0]);
        for k in 1..big {
            nested &= empirical_moments(bundle, spec, k).unwrap().gram == g.leading_block(k);
        }
    }
    outcome(
        sym && nested && min_eig >= -1e-12,
        format!("{} instances; symmetric {sym}; nested prefix exact {nested}; min eigenvalue {min_eig:.3e}", instances.len()),
    )
}

fn trace_check() -> Outcome {
    let spec = trig6();
    let cfg = TraceCheckConfig {
        n_paths: 20,
        reps: 500,
        seed: 31,
        ..TraceCheckConfig::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for id in 1..=3 {
        let model = builtin_model(id).unwrap();
        for c in trace_bound_checks(&model, &spec, &[2, 4, 6], &cfg).unwrap() {
            pass &= c.passes(1.2);
            parts.push(format!("m{id} dim {}: {:.3} <= {:.3}", c.m, c.estimate.unwrap_or(f64::NAN), 1.2 * c.bound));
        }
    }
    outcome(pass, parts.join("; "))
}

fn risk_decay() -> Outcome {
    let spec = trig6();
    let model = builtin_model(1).unwrap();
    let risks = |n_paths: usize, salt: u64| -> Vec<f64> {
        (0..50)
            .map(|r| {
                let bundle = simulate_bundle(&model, &reference_grid(), n_paths, salt + r).unwrap();
                let fit = fit_projection_with(&bundle, &spec, 5, GateMode::Off).unwrap();
                mise(&fit, |x| -x, -3.0, 3.0, 1000)
            })
            .collect()
    };
    let (m50, s50) = mean_std(&risks(50, 40_000));
    let (m400, s400) = mean_std(&risks(400, 50_000));
    let se = ((s50.unwrap().powi(2) + s400.unwrap().powi(2)) / 50.0).sqrt();
    outcome(
        m400 < m50 - se,
        format!("mean MISE N=50 {m50:.4}, N=400 {m400:.4}, pooled se {se:.4}"),
    )
}

fn basis_suites() -> Outcome {
    let trig = trig6();
    let herm = BasisSpec::hermite();
    let gram_err = |spec: &BasisSpec, m: usize, a: f64, b: f64, n: usize| {
        let mut err: f64 = 0.0;
        for j in 1..=m {
            for k in j..=m {
                let ip = simpson(|x| spec.eval_basis(j, x).unwrap() * spec.eval_basis(k, x).unwrap(), a, b, n);
                err = err.max((ip - if j == k { 1.0 } else { 0.0 }).abs());
            }
        }
        err
    };
    let trig_err = gram_err(&trig, 21, -3.0, 3.0, 40_000);
    let herm_err = gram_err(&herm, 20, -25.0, 25.0, 40_000);

    let bound = PI.powf(-0.25) + 1e-9;
    let mut herm_sup: f64 = 0.0;
    for j in 1..=20 {
        for i in 0..=100_000 {
            let x = -20.0 + 40.0 * i as f64 / 100_000.0;
            herm_sup = herm_sup.max(herm.eval_basis(j, x).unwrap().abs());
        }
    }

    let mut l_ok = true;
    for spec in [trig, herm, BasisSpec::trigonometric(0.0, 0.5).unwrap()] {
        for m in 1..=20 {
            l_ok &= spec.compute_l(m).unwrap().value <= spec.c_phi_sq() * m as f64 * (1.0 + 1e-12);
        }
    }
    outcome(
        trig_err <= 1e-8 && herm_err <= 1e-6 && herm_sup <= bound && l_ok,
        format!(
            "trig orthonormality err {trig_err:.2e} (m <= 21); hermite err {herm_err:.2e} (m <= 20); hermite sup {herm_sup:.12} vs {bound:.12}; L(m) <= c_phi^2 m {l_ok}"
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        model_id: 3,
        n_paths: 100,
        reps: 12,
        seed: 99,
        ..ExperimentConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&cfg).unwrap().to_canonical_json().unwrap())
    };
    let reference = run(1);
    let same = [1, 2, 4, 7].iter().all(|&t| run(t) == reference);
    outcome(same, format!("{} byte report identical across runs with 1/2/4/7 threads: {same}", reference.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let reports = default_reports();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("mean MISE table", Box::new(|| table_reproduction(&reports))),
        ("selected dimension statistics", Box::new(|| dimension_statistics(&reports))),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("minimizer property", Box::new(minimizer_property)),
        ("gram properties", Box::new(gram_properties)),
        ("trace check", Box::new(trace_check)),
        ("risk decay", Box::new(risk_decay)),
        ("basis suites", Box::new(basis_suites)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
