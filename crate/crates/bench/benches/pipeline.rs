use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jumpdrift::estimator::empirical_moments;
use jumpdrift::linalg::jacobi_eigen;
use jumpdrift::{builtin_model, select_model, simulate_bundle, BasisSpec, DtMode, GateMode, SelectionConfig, TimeGrid};

fn simulation(c: &mut Criterion) {
    let model = builtin_model(3).unwrap();
    let grid = TimeGrid::new(5.0, 200).unwrap();
    let mut g = c.benchmark_group("simulate_bundle");
    for n in [50, 400] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| simulate_bundle(&model, &grid, n, black_box(1)).unwrap())
        });
    }
    g.finish();
}

fn estimation(c: &mut Criterion) {
    let bundle = simulate_bundle(&builtin_model(1).unwrap(), &TimeGrid::new(5.0, 200).unwrap(), 400, 3).unwrap();
    let trig = BasisSpec::trigonometric(-3.0, 3.0).unwrap();
    let herm = BasisSpec::hermite();
    let mut g = c.benchmark_group("empirical_moments");
    for m in [6, 20] {
        g.bench_with_input(BenchmarkId::new("trig", m), &m, |b, &m| {
            b.iter(|| empirical_moments(&bundle, &trig, m).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("hermite", m), &m, |b, &m| {
            b.iter(|| empirical_moments(&bundle, &herm, m).unwrap())
        });
    }
    g.finish();

    let gram = empirical_moments(&bundle, &trig, 20).unwrap().gram;
    c.bench_function("jacobi_eigen_20", |b| b.iter(|| jacobi_eigen(black_box(&gram))));

    let cfg = SelectionConfig {
        c_cal: 1.0,
        dt_mode: DtMode::Unrestricted,
        gate: GateMode::Off,
        ..SelectionConfig::default()
    };
    c.bench_function("select_model_1_6", |b| b.iter(|| select_model(&bundle, &trig, &cfg).unwrap()));
}

criterion_group!(benches, simulation, estimation);
criterion_main!(benches);
