use serde::Serialize;

use super::{CvarProblem, Tolerances, VarianceProblem};
use crate::contracts::RiskMeasure;
use crate::error::{Error, Result};
use crate::portfolio::SampleMatrix;

/// One penalized solve along a lambda grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub lambda: f64,
    /// `sigma` for variance, `q*` for CVaR.
    pub inner_param: f64,
    pub risk_value: f64,
    pub premium: f64,
    pub objective: f64,
}

/// `h(eta) = eta - E[Z_eta]` at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaPoint {
    pub eta: f64,
    pub mean_retained: f64,
    pub h: f64,
}

fn check_sorted(grid: &[f64]) -> Result<()> {
    if let Some(v) = grid.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::validation(format!("grid value {v} is not a nonnegative number")));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::validation("grid must be sorted ascending"));
    }
    Ok(())
}

/// Solves the penalized problem at every grid point.
pub fn lambda_curve(x: &SampleMatrix, loadings: &[f64], measure: RiskMeasure, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    check_sorted(grid)?;
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    let tol = Tolerances::default();
    let solve: Box<dyn Fn(f64) -> Result<super::Solution>> = match measure {
        RiskMeasure::Variance => {
            let p = VarianceProblem::new(x, loadings, tol)?;
            Box::new(move |l| p.solve_penalized(l))
        }
        RiskMeasure::Cvar { alpha } => {
            let p = CvarProblem::new(x, loadings, alpha, tol)?;
            Box::new(move |l| p.solve_penalized(l))
        }
    };
    grid.iter()
        .map(|&lambda| {
            let r = solve(lambda)?.report;
            Ok(CurvePoint {
                lambda,
                inner_param: r.inner.scalar(),
                risk_value: r.risk_value,
                premium: r.premium,
                objective: r.objective,
            })
        })
        .collect()
}

/// Evaluates `h` on a grid of thresholds at fixed `lambda > 0`.
pub fn eta_sweep(x: &SampleMatrix, loadings: &[f64], lambda: f64, etas: &[f64]) -> Result<Vec<EtaPoint>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation(format!("lambda must be positive, got {lambda}")));
    }
    check_sorted(etas)?;
    let p = VarianceProblem::new(x, loadings, Tolerances::default())?;
    Ok(etas
        .iter()
        .map(|&eta| {
            let mean_retained = p.mean_retained(lambda, eta);
            EtaPoint { eta, mean_retained, h: eta - mean_retained }
        })
        .collect())
}
