use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use definetti::empirical::{self, EmpiricalVariable};
use definetti::solvers::{
    solve_constrained_cvar, solve_constrained_var, solve_constrained_variance, solve_penalized_cvar, solve_sigma,
};
use definetti::{build_portfolio, DistributionSpec, PortfolioSpec, RiskSource, SampleMatrix, Tolerances};

const LOADINGS: [f64; 2] = [0.1, 0.25];

fn portfolio(m: usize) -> SampleMatrix {
    build_portfolio(&PortfolioSpec {
        loadings: LOADINGS.to_vec(),
        alpha: None,
        seed: 1,
        sample_count: m,
        risks: RiskSource::Parametric(vec![
            DistributionSpec::Gamma { shape: 0.5, rate: 0.5 },
            DistributionSpec::ShiftedPareto { threshold: 3.0, tail_exponent: 4.0 },
        ]),
    })
    .unwrap()
}

fn simulation(c: &mut Criterion) {
    c.bench_function("simulate 100k x 2", |b| b.iter(|| portfolio(black_box(100_000))));
}

fn inner_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("inner");
    for m in [10_000, 100_000] {
        let x = portfolio(m);
        group.bench_with_input(BenchmarkId::new("sigma", m), &x, |b, x| {
            b.iter(|| solve_sigma(x, &LOADINGS, black_box(0.0222), Tolerances::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("cvar_penalized", m), &x, |b, x| {
            b.iter(|| solve_penalized_cvar(x, &LOADINGS, black_box(0.0106), 0.9, Tolerances::default()).unwrap())
        });
    }
    group.finish();
}

fn constrained(c: &mut Criterion) {
    let x = portfolio(100_000);
    let mut group = c.benchmark_group("constrained 100k");
    group.sample_size(10);
    group.bench_function("variance c=2", |b| {
        b.iter(|| solve_constrained_variance(&x, &LOADINGS, black_box(2.0), Tolerances::default()).unwrap())
    });
    group.bench_function("cvar c=5", |b| {
        b.iter(|| solve_constrained_cvar(&x, &LOADINGS, black_box(5.0), 0.9, Tolerances::default()).unwrap())
    });
    group.bench_function("var c=4", |b| b.iter(|| solve_constrained_var(&x, &LOADINGS, black_box(4.0), 0.9).unwrap()));
    group.finish();
}

fn functionals(c: &mut Criterion) {
    let x = portfolio(100_000);
    let s = EmpiricalVariable::uniform(x.totals()).unwrap();
    c.bench_function("var_cvar 100k", |b| b.iter(|| empirical::var_cvar(black_box(&s), 0.9)));
}

criterion_group!(benches, simulation, inner_solves, constrained, functionals);
criterion_main!(benches);
