use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use switchmfg::{
    initial_state, jacobian, residual, CouplingLaw, HamiltonianSpec, ModelSpec, PenaltyFamily,
    PeriodicGrid, StepParams, SwitchingCosts,
};

fn wells(dim: usize, n: usize) -> ModelSpec {
    let grid = PeriodicGrid::new(dim, n).unwrap();
    let v1 = grid.from_fn(|x| 0.15 * (1.0 + (2.0 * PI * x[0]).cos()));
    let v2 = grid.from_fn(|x| 0.15 * (1.0 + (2.0 * PI * x[0]).sin()));
    let h = HamiltonianSpec::quadratic(vec![v1, v2]).unwrap();
    let c = SwitchingCosts::uniform(&grid, 2, 0.1).unwrap();
    ModelSpec::new(h, CouplingLaw::Log, c, PenaltyFamily::Cubic, 1.0).unwrap()
}

fn bench_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for (dim, n) in [(1, 64), (1, 256), (2, 32)] {
        let model = wells(dim, n);
        let mut state = initial_state(&model).unwrap();
        for (k, v) in state.u[0].values_mut().iter_mut().enumerate() {
            *v = 0.01 * (k as f64).sin();
        }
        let params = StepParams::new(1.0, 0.01, 0.0);
        let label = format!("{dim}d-n{n}");
        group.bench_with_input(BenchmarkId::new("residual", &label), &state, |b, s| {
            b.iter(|| residual(&model, s, params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("jacobian", &label), &state, |b, s| {
            b.iter(|| jacobian(&model, s, params).unwrap())
        });
    }
    group.finish();
}

fn bench_linear_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear-solve");
    group.sample_size(20);
    for (dim, n) in [(1, 64), (2, 32)] {
        let model = wells(dim, n);
        let state = initial_state(&model).unwrap();
        let params = StepParams::new(1.0, 0.01, 1.0 / n as f64);
        let j = jacobian(&model, &state, params).unwrap();
        let rhs = residual(&model, &state, params).unwrap().to_vec();
        group.bench_function(format!("{dim}d-n{n}"), |b| {
            b.iter(|| switchmfg::solver::solve_sparse(&j, &rhs).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_assembly, bench_linear_solve);
criterion_main!(benches);
