//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed even
//! when all criteria pass.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use definetti::contracts::{cvar_contract, penalized_objective, retained, var_contract, variance_contract};
use definetti::empirical::{self, EmpiricalVariable};
use definetti::oracle::{oracle_penalized_cvar, oracle_penalized_variance, oracle_var_enumerate};
use definetti::solvers::{
    solve_constrained_cvar, solve_constrained_var, solve_constrained_variance, solve_penalized_cvar,
    solve_penalized_variance, CvarProblem, VarianceProblem,
};
use definetti::{
    build_portfolio, Contract, DistributionSpec, InnerParam, PortfolioSpec, RiskMeasure, RiskSource, SampleMatrix,
    Tolerances,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_501;
const LOADINGS: [f64; 2] = [0.1, 0.25];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn example_portfolio(m: usize) -> SampleMatrix {
    let spec = PortfolioSpec {
        loadings: LOADINGS.to_vec(),
        alpha: None,
        seed: SEED,
        sample_count: m,
        risks: RiskSource::Parametric(vec![
            DistributionSpec::Gamma { shape: 0.5, rate: 0.5 },
            DistributionSpec::ShiftedPareto { threshold: 3.0, tail_exponent: 4.0 },
        ]),
    };
    build_portfolio(&spec).expect("example spec is valid")
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

/// Small random portfolio: `m` samples of `n` risks, scaled exponential and
/// two-point mixtures so that atoms and ties in the total occur.
fn random_instance(rng: &mut ChaCha8Rng, m: usize, n: usize, weighted: bool) -> SampleMatrix {
    let scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..2.0)).collect();
    let data = Array2::from_shape_fn((m, n), |(_, i)| {
        if rng.random_bool(0.15) {
            0.0
        } else {
            -scales[i] * rng.random::<f64>().ln()
        }
    });
    if weighted {
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
        SampleMatrix::with_relative_weights(data, w).expect("positive weights")
    } else {
        SampleMatrix::uniform(data).expect("valid samples")
    }
}

fn random_loadings(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..0.5)).collect()
}

fn criterion_1() -> Outcome {
    let (sol, elapsed) = single_threaded(|| {
        let start = Instant::now();
        let x = example_portfolio(1_000_000);
        let sol = solve_constrained_variance(&x, &LOADINGS, 2.0, Tolerances::default());
        (sol, start.elapsed())
    });
    let sol = match sol {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, format!("solver error: {e}")),
    };
    let r = &sol.report;
    let sigma = r.inner.scalar();
    let pass = within(r.lambda, 0.020, 0.025)
        && within(sigma, 1.78, 1.83)
        && (r.risk_value - 2.0).abs() <= 0.005 * 2.0
        && elapsed < Duration::from_secs(60);
    Outcome::new(
        pass,
        format!("lambda={:.5} sigma={:.4} Var(Z)={:.5} time={:.1}s (1 thread)", r.lambda, sigma, r.risk_value, elapsed.as_secs_f64()),
    )
}

fn criterion_2(x: &SampleMatrix) -> Outcome {
    let start = Instant::now();
    let sol = match solve_constrained_cvar(x, &LOADINGS, 5.0, 0.9, Tolerances::default()) {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, format!("solver error: {e}")),
    };
    let elapsed = start.elapsed();
    let total = EmpiricalVariable::new(x.totals(), x.weights().to_vec()).expect("weights");
    let (var_s, cvar_s) = empirical::var_cvar(&total, 0.9);
    let r = &sol.report;
    let q = r.inner.scalar();
    let pass = within(r.lambda, 0.0095, 0.0115)
        && within(q, 4.25, 4.37)
        && (r.risk_value - 5.0).abs() <= 0.005 * 5.0
        && (var_s - 4.3867).abs() <= 0.03
        && (cvar_s - 6.5315).abs() <= 0.05
        && elapsed < Duration::from_secs(120);
    Outcome::new(
        pass,
        format!(
            "lambda={:.5} q={:.4} CVaR(Z)={:.5} VaR(S)={var_s:.4} CVaR(S)={cvar_s:.4} time={:.1}s",
            r.lambda,
            q,
            r.risk_value,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3(x: &SampleMatrix) -> Outcome {
    let sol = match solve_constrained_cvar(x, &LOADINGS, 6.0, 0.9, Tolerances::default()) {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, format!("solver error: {e}")),
    };
    let total = EmpiricalVariable::new(x.totals(), x.weights().to_vec()).expect("weights");
    let var_s = empirical::var_alpha(&total, 0.9);
    let r = &sol.report;
    let (q, theta) = match &r.inner {
        InnerParam::Quantile { q, theta, .. } => (*q, *theta),
        other => return Outcome::new(false, format!("unexpected inner parameter {other:?}")),
    };
    let pass = (r.lambda - 0.01).abs() <= 1e-9
        && (q - var_s).abs() <= 0.03
        && theta.is_some()
        && (r.risk_value - 6.0).abs() <= 0.005 * 6.0;
    Outcome::new(
        pass,
        format!("lambda={:.12} q={q:.4} VaR(S)={var_s:.4} theta={theta:?} CVaR(Z)={:.5}", r.lambda, r.risk_value),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let (mut worst_obj, mut worst_z) = (0.0_f64, 0.0_f64);
    let mut failures = Vec::new();
    for case in 0..50 {
        let m = rng.random_range(5..=100);
        let n = rng.random_range(1..=3);
        let x = random_instance(&mut rng, m, n, case % 2 == 1);
        let b = random_loadings(&mut rng, n);
        let lambda = 10f64.powf(rng.random_range(-1.5..0.3));
        let sol = solve_penalized_variance(&x, &b, lambda, Tolerances::default()).expect("solver");
        let orc = oracle_penalized_variance(&x, &b, lambda, 400_000, 1e-11).expect("oracle");
        let obj_gap = (orc.objective - sol.report.objective).abs() / (1.0 + sol.report.objective.abs());
        let z_sol = retained(&x, &sol.contract).expect("feasible");
        let totals = x.totals();
        let z_gap = totals
            .iter()
            .zip(orc.contract.rows())
            .zip(z_sol.values())
            .map(|((s, r), z)| (s - r.sum() - z).abs())
            .fold(0.0, f64::max);
        worst_obj = worst_obj.max(obj_gap);
        worst_z = worst_z.max(z_gap);
        if obj_gap > 1e-4 || z_gap > 1e-3 {
            failures.push(case);
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        failures.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "worst objective gap {worst_obj:.2e} (<= 1e-4), worst Z gap {worst_z:.2e} (<= 1e-3), failing cases {failures:?}, time={:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    let start = Instant::now();
    for case in 0..50 {
        let m = rng.random_range(5..=100);
        let n = rng.random_range(1..=3);
        let x = random_instance(&mut rng, m, n, case % 2 == 1);
        let b = random_loadings(&mut rng, n);
        let alpha = rng.random_range(0.7..0.95);
        let max_b = b.iter().copied().fold(0.0, f64::max);
        let lambda = rng.random_range(0.1..1.2) * max_b * (1.0 - alpha);
        let sol = solve_penalized_cvar(&x, &b, lambda, alpha, Tolerances::default()).expect("solver");
        let orc = oracle_penalized_cvar(&x, &b, lambda, alpha, 400_000, 1e-10).expect("oracle");
        let gap = (orc.objective - sol.report.objective).abs() / sol.report.objective.abs().max(1e-12);
        worst = worst.max(gap);
        if gap > 1e-3 {
            failures.push(case);
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "worst relative objective gap {worst:.2e} (<= 1e-3), failing cases {failures:?}, time={:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for case in 0..20 {
        let m = rng.random_range(3..=12);
        let n = rng.random_range(1..=3);
        let x = random_instance(&mut rng, m, n, case % 2 == 1);
        let b = random_loadings(&mut rng, n);
        let alpha = rng.random_range(0.5..0.95);
        let max_s = x.totals().into_iter().fold(0.0, f64::max);
        let c = rng.random_range(0.0..max_s);
        let sol = solve_constrained_var(&x, &b, c, alpha).expect("solver");
        let orc = oracle_var_enumerate(&x, &b, c, alpha).expect("oracle");
        let gap = (sol.report.premium - orc.objective).abs();
        worst = worst.max(gap);
        if gap > 1e-12 || sol.report.risk_value > c + 1e-12 {
            failures.push(case);
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!("worst premium gap {worst:.2e} (<= 1e-12), VaR(Z) <= c checked, failing cases {failures:?}"),
    )
}

fn criterion_7() -> Outcome {
    let m = 100_000;
    let beta = 0.1;
    let data = Array2::from_shape_fn((m, 1), |(s, _)| (s as f64 + 0.5) / m as f64);
    let x = SampleMatrix::uniform(data).expect("valid samples");
    let sol = match solve_constrained_cvar(&x, &[beta], 0.92, 0.9, Tolerances::default()) {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, format!("solver error: {e}")),
    };
    let target = beta * 0.003;
    let mean_r = sol.contract.column_means()[0];
    let pass = (sol.report.premium - target).abs() <= 0.01 * target && (sol.report.risk_value - 0.92).abs() <= 0.92e-6;
    Outcome::new(
        pass,
        format!("premium={:.6e} target={target:.6e} E[R]={mean_r:.6} CVaR(Z)={:.6}", sol.report.premium, sol.report.risk_value),
    )
}

fn feasible(c: &Contract, x: &SampleMatrix) -> bool {
    c.check_feasible(x).is_ok()
}

/// For loadings sorted ascending, a dearer risk is ceded only where every
/// cheaper risk is ceded in full.
fn priority_ordered(c: &Contract, x: &SampleMatrix, loadings: &[f64]) -> bool {
    let mut order: Vec<usize> = (0..loadings.len()).collect();
    order.sort_by(|&a, &b| loadings[a].total_cmp(&loadings[b]));
    let r = c.payout();
    x.data().rows().into_iter().zip(r.rows()).all(|(xs, rs)| {
        order.windows(2).all(|w| {
            let (i, j) = (w[0], w[1]);
            loadings[i] == loadings[j] || !(rs[i] < xs[i] - 1e-9 && rs[j] > 1e-9)
        })
    })
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let mut broken: Vec<&str> = Vec::new();

    // feasibility and priority ordering over random parameterizations
    let mut feas_ok = true;
    let mut prio_ok = true;
    for _ in 0..1000 {
        let m = rng.random_range(1..=30);
        let n = rng.random_range(1..=3);
        let weighted = rng.random_bool(0.5);
        let x = random_instance(&mut rng, m, n, weighted);
        let b = random_loadings(&mut rng, n);
        let lambda = rng.random_range(0.0..2.0);
        let sigma = rng.random_range(0.0..3.0);
        let alpha = rng.random_range(0.05..0.99);
        let q = rng.random_range(0.0..4.0);
        let c = rng.random_range(0.0..4.0);
        let v = variance_contract(&x, &b, lambda, sigma).expect("valid");
        let cv = cvar_contract(&x, &b, lambda, alpha, q, &[]).expect("valid");
        let coverage: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 }).collect();
        let vr = var_contract(&x, &b, c, coverage).expect("valid");
        feas_ok &= feasible(&v, &x) && feasible(&cv, &x) && feasible(&vr, &x);
        prio_ok &= priority_ordered(&v, &x, &b) && priority_ordered(&cv, &x, &b);
    }
    if !feas_ok {
        broken.push("feasibility");
    }
    if !prio_ok {
        broken.push("priority ordering");
    }

    // h monotone and E[Z_eta] 1-Lipschitz in eta
    let x = example_portfolio(100_000);
    let p = VarianceProblem::new(&x, &LOADINGS, Tolerances::default()).expect("valid");
    let etas: Vec<f64> = (0..=400).map(|k| k as f64 * 0.01).collect();
    let means: Vec<f64> = etas.iter().map(|&e| p.mean_retained(0.0222, e)).collect();
    let h_ok = etas.windows(2).zip(means.windows(2)).all(|(e, z)| {
        let (h0, h1) = (e[0] - z[0], e[1] - z[1]);
        h0 <= h1 + 1e-12 && z[1] - z[0] <= e[1] - e[0] + 1e-12 && z[1] >= z[0] - 1e-12
    });
    if !h_ok {
        broken.push("h monotone/Lipschitz");
    }

    // J'- <= J'+ and the sandwich at q*
    let mut sandwich_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(1..=3);
        let (m, weighted) = (rng.random_range(5..=60), rng.random_bool(0.5));
        let x = random_instance(&mut rng, m, n, weighted);
        let b = random_loadings(&mut rng, n);
        let alpha = rng.random_range(0.5..0.99);
        let p = CvarProblem::new(&x, &b, alpha, Tolerances::default()).expect("valid");
        for _ in 0..5 {
            let level = p.level(rng.random_range(0.001..0.6) * (1.0 - alpha));
            let (q, _) = p.q_star(&level);
            let (minus, plus) = p.j_derivatives_at(&level, q);
            sandwich_ok &= minus <= plus + 1e-15;
            sandwich_ok &= q == 0.0 || minus <= 1e-12;
            sandwich_ok &= q == p.var_total() || plus >= -1e-12;
        }
    }
    if !sandwich_ok {
        broken.push("J sandwich");
    }

    // CVaR is 1-Lipschitz in W1 after scaling by 1 - alpha
    let mut lip_ok = true;
    for _ in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(1..=40);
            let values: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            EmpiricalVariable::new(values, w.iter().map(|v| v / total).collect::<Vec<_>>()).expect("valid")
        };
        let (u, v) = (draw(&mut rng), draw(&mut rng));
        let alpha = rng.random_range(0.01..0.99);
        let lhs = (1.0 - alpha) * (empirical::cvar_alpha(&u, alpha) - empirical::cvar_alpha(&v, alpha)).abs();
        lip_ok &= lhs <= empirical::wasserstein1(&u, &v) + 1e-9;
    }
    if !lip_ok {
        broken.push("CVaR W1-Lipschitz");
    }

    // weak duality: no random feasible contract beats a penalized solve
    let mut duality_ok = true;
    for case in 0..6 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(10..=60);
        let x = random_instance(&mut rng, m, n, case % 2 == 1);
        let b = random_loadings(&mut rng, n);
        let alpha = rng.random_range(0.6..0.95);
        let lv = rng.random_range(0.05..1.0);
        let lc = rng.random_range(0.2..1.0) * 0.5 * (1.0 - alpha);
        let sv = solve_penalized_variance(&x, &b, lv, Tolerances::default()).expect("solver");
        let sc = solve_penalized_cvar(&x, &b, lc, alpha, Tolerances::default()).expect("solver");
        for _ in 0..200 {
            let r = x.data().mapv(|v| v * rng.random::<f64>());
            let c = Contract::from_payout(&x, r).expect("feasible");
            let ov = penalized_objective(&x, &c, &b, lv, RiskMeasure::Variance).expect("objective");
            let oc = penalized_objective(&x, &c, &b, lc, RiskMeasure::Cvar { alpha }).expect("objective");
            duality_ok &= ov >= sv.report.objective - 1e-9 && oc >= sc.report.objective - 1e-9;
        }
    }
    if !duality_ok {
        broken.push("weak duality");
    }

    Outcome::new(
        broken.is_empty(),
        if broken.is_empty() {
            "feasibility, priority ordering, h grid, J sandwich, W1-Lipschitz, weak duality".to_string()
        } else {
            format!("violated: {}", broken.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{tag}] {name}: {}", outcome.detail);
        if !outcome.pass {
            failed += 1;
        }
    };
    report(1, "variance constrained, c = 2", criterion_1());
    let x = example_portfolio(1_000_000);
    report(2, "CVaR constrained, c = 5", criterion_2(&x));
    report(3, "CVaR constrained jump, c = 6", criterion_3(&x));
    report(4, "variance oracle equivalence", criterion_4());
    report(5, "CVaR oracle equivalence", criterion_5());
    report(6, "VaR enumeration", criterion_6());
    report(7, "single-risk CVaR lower bound", criterion_7());
    report(8, "property suites", criterion_8());
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
