use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use definetti::contracts::{retained, RiskMeasure};
use definetti::empirical::{self, EmpiricalVariable};
use definetti::numeric::format_sig17;
use definetti::oracle::{oracle_penalized_cvar, oracle_penalized_variance, oracle_var_enumerate, OracleResult};
use definetti::solvers::{self, eta_sweep, lambda_curve, Measure, Solution};
use definetti::{build_portfolio, Error, Result, RiskSource, SampleMatrix};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Problem, RunConfig};

/// Largest `samples x risks` size handed to the iterative oracles.
const ORACLE_MAX_ENTRIES: usize = 100_000;
const ORACLE_ITERS: usize = 400_000;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("cannot create {}: {e}", path.display())))
    })?))
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    match path {
        Some(p) => {
            let mut out = create(p)?;
            writeln!(out, "{text}")?;
            out.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types always serialize")
}

pub fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    if matches!(cfg.portfolio.risks, RiskSource::File { .. }) {
        return Err(Error::validation("simulate needs parametric risks, the config points at a sample file"));
    }
    let x = build_portfolio(&cfg.portfolio)?;
    let summary: Vec<Value> = (0..x.n_risks())
        .map(|i| {
            let col = EmpiricalVariable::new(x.column(i).to_vec(), x.weights().to_vec()).expect("validated samples");
            json!({ "risk": i + 1, "mean": empirical::mean(&col), "variance": empirical::variance(&col) })
        })
        .collect();
    let summary = json!({ "samples": x.n_samples(), "risks": summary });
    match out.or(cfg.outputs.samples.as_deref()) {
        Some(path) => {
            let mut w = create(path)?;
            x.write_csv(&mut w)?;
            w.flush()?;
            write_json(None, &summary)
        }
        None => {
            x.write_csv(io::stdout().lock())?;
            eprintln!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
    }
}

fn solve_problem(x: &SampleMatrix, cfg: &RunConfig, problem: Problem) -> Result<Solution> {
    let b = &cfg.portfolio.loadings;
    let tol = cfg.tolerances;
    match problem {
        Problem::Penalized { measure: Measure::Variance, lambda, .. } => solvers::solve_penalized_variance(x, b, lambda, tol),
        Problem::Penalized { measure: Measure::Cvar, lambda, alpha } => {
            solvers::solve_penalized_cvar(x, b, lambda, alpha.expect("checked"), tol)
        }
        Problem::Constrained { measure: Measure::Variance, c, .. } => solvers::solve_constrained_variance(x, b, c, tol),
        Problem::Constrained { measure: Measure::Cvar, c, alpha } => {
            solvers::solve_constrained_cvar(x, b, c, alpha.expect("checked"), tol)
        }
        Problem::Constrained { measure: Measure::Var, c, alpha } => {
            solvers::solve_constrained_var(x, b, c, alpha.expect("checked"))
        }
        Problem::Penalized { measure: Measure::Var, .. } => unreachable!("rejected by RunConfig::problem"),
    }
}

pub fn solve(cfg: &RunConfig, out: Option<&Path>, contract_out: Option<&Path>) -> Result<()> {
    let problem = cfg.problem()?;
    let x = build_portfolio(&cfg.portfolio)?;
    let start = Instant::now();
    let sol = solve_problem(&x, cfg, problem)?;
    let wall = start.elapsed().as_secs_f64();
    let mut report = to_value(&sol.report);
    let obj = report.as_object_mut().expect("reports serialize as objects");
    obj.insert("config".into(), to_value(cfg));
    obj.insert("wall_time_s".into(), json!(wall));
    if let Some(path) = contract_out.or(cfg.outputs.contract.as_deref()) {
        let mut w = create(path)?;
        sol.contract.write_csv(&mut w)?;
        w.flush()?;
    }
    write_json(out.or(cfg.outputs.report.as_deref()), &report)
}

/// Inclusive evenly spaced grid; a single step gives just `min`.
pub fn grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !(min.is_finite() && max.is_finite()) || max < min {
        return Err(Error::validation(format!("bad grid: min={min} max={max} steps={steps}")));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    let h = (max - min) / (steps - 1) as f64;
    Ok((0..steps).map(|k| if k + 1 == steps { max } else { min + h * k as f64 }).collect())
}

pub fn curve(cfg: &RunConfig, points: &[f64], eta: bool, out: Option<&Path>) -> Result<()> {
    let x = build_portfolio(&cfg.portfolio)?;
    let b = &cfg.portfolio.loadings;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let header: &[&str] = if eta {
        let lambda = cfg.lambda.ok_or_else(|| Error::validation("an eta sweep needs lambda"))?;
        for p in eta_sweep(&x, b, lambda, points)? {
            rows.push(vec![p.eta, p.h]);
        }
        &["eta", "h"]
    } else {
        let measure = match cfg.measure {
            Some(Measure::Variance) => RiskMeasure::Variance,
            Some(Measure::Cvar) => RiskMeasure::Cvar {
                alpha: cfg.alpha().ok_or_else(|| Error::validation("alpha is required for measure Cvar"))?,
            },
            other => return Err(Error::validation(format!("lambda curves need measure variance or cvar, got {other:?}"))),
        };
        for p in lambda_curve(&x, b, measure, points)? {
            rows.push(vec![p.lambda, p.inner_param, p.risk_value, p.premium, p.objective]);
        }
        &["lambda", "inner_param", "risk_value", "premium", "objective"]
    };
    let write = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in &rows {
            writeln!(w, "{}", row.iter().map(|v| format_sig17(*v)).collect::<Vec<_>>().join(","))?;
        }
        w.flush()
    };
    match out.or(cfg.outputs.curve.as_deref()) {
        Some(path) => write(&mut create(path)?)?,
        None => write(&mut io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct Verification {
    measure: Measure,
    lambda: f64,
    solver_objective: f64,
    oracle_objective: f64,
    objective_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_gap: Option<f64>,
    tolerance: f64,
    pass: bool,
    oracle: OracleResult,
}

/// Compares the solver against the brute-force oracle. Constrained variance
/// and CVaR problems are checked through the penalized problem at the
/// multiplier the solver found.
pub fn verify(cfg: &RunConfig, out: Option<&Path>) -> Result<bool> {
    let problem = cfg.problem()?;
    let x = build_portfolio(&cfg.portfolio)?;
    let b = &cfg.portfolio.loadings;
    let (measure, alpha) = match problem {
        Problem::Penalized { measure, alpha, .. } | Problem::Constrained { measure, alpha, .. } => (measure, alpha),
    };
    let entries = x.n_samples() * x.n_risks();
    if measure != Measure::Var && entries > ORACLE_MAX_ENTRIES {
        return Err(Error::Refused(format!(
            "oracle verification is limited to {ORACLE_MAX_ENTRIES} sample entries, got {entries}"
        )));
    }
    let sol = solve_problem(&x, cfg, problem)?;
    let lambda = sol.report.lambda;
    let (oracle, tolerance, z_gap) = match measure {
        Measure::Variance => {
            let o = oracle_penalized_variance(&x, b, lambda, ORACLE_ITERS, 1e-11)?;
            let z = retained(&x, &sol.contract)?;
            let gap = x
                .totals()
                .iter()
                .zip(o.contract.rows())
                .zip(z.values())
                .map(|((s, r), z)| (s - r.sum() - z).abs())
                .fold(0.0, f64::max);
            (o, 1e-6, Some(gap))
        }
        Measure::Cvar => (oracle_penalized_cvar(&x, b, lambda, alpha.expect("checked"), ORACLE_ITERS, 1e-10)?, 1e-4, None),
        Measure::Var => {
            let Problem::Constrained { c, .. } = problem else { unreachable!("VaR is constrained only") };
            (oracle_var_enumerate(&x, b, c, alpha.expect("checked"))?, 1e-9, None)
        }
    };
    let gap = (oracle.objective - sol.report.objective).abs() / (1.0 + sol.report.objective.abs());
    let pass = gap <= tolerance && z_gap.is_none_or(|g| g <= 1e-3);
    let v = Verification {
        measure,
        lambda,
        solver_objective: sol.report.objective,
        oracle_objective: oracle.objective,
        objective_gap: gap,
        z_gap,
        tolerance,
        pass,
        oracle,
    };
    let mut value = to_value(&v);
    value.as_object_mut().expect("object").insert("config".into(), to_value(cfg));
    write_json(out, &value)?;
    Ok(pass)
}
