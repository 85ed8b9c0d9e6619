//! Inner solvers for the penalized problems and outer lambda searches tying
//! them to the constrained problems.
//!
//! Every root finder here is a plain bisection with a fixed evaluation order,
//! so repeated solves on the same samples are bit-for-bit identical.

mod curve;
mod cvar;
mod index;
mod var;
mod variance;

use serde::{Deserialize, Serialize};

pub use crate::error::Probe;
pub use curve::{eta_sweep, lambda_curve, CurvePoint, EtaPoint};
pub use cvar::{j_derivatives, solve_constrained_cvar, solve_penalized_cvar, solve_q_star, CvarProblem};
pub use var::solve_constrained_var;
pub use variance::{solve_constrained_variance, solve_penalized_variance, solve_sigma, VarianceProblem};

use crate::contracts::{Block, Contract};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Variance,
    Cvar,
    Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Penalized,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    /// Bisection on `h(eta) = eta - E[Z_eta]`; always valid.
    #[default]
    Bisection,
    /// Fixed-point iteration `eta <- E[Z_eta]`, used only when a numeric
    /// contraction probe passes; otherwise falls back to bisection.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Bracket width for sigma, theta and quantile searches.
    pub inner_tol: f64,
    /// Relative tolerance on `|risk - c| / c` for constrained solves.
    pub outer_tol: f64,
    pub max_iter: usize,
    pub sigma_method: SigmaMethod,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { inner_tol: 1e-10, outer_tol: 1e-6, max_iter: 200, sigma_method: SigmaMethod::Bisection }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.inner_tol > 0.0 && self.outer_tol > 0.0 && self.max_iter > 0 {
            Ok(())
        } else {
            Err(Error::validation(format!("tolerances must be positive: {self:?}")))
        }
    }
}

/// The inner parameter of a solved contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerParam {
    /// Layer offset of the variance contract (equals `E[Z]`).
    Sigma { sigma: f64 },
    /// Retention quantile of the CVaR contract and, on a tied loading, the
    /// ceded share of the tied block.
    Quantile { q: f64, theta: Option<f64>, tied_risks: Vec<usize> },
    /// Cost threshold of the VaR contract and the probability mass covered.
    Coverage { q: f64, covered_mass: f64, split_fraction: Option<f64> },
}

impl InnerParam {
    /// The scalar plotted in lambda curves (`sigma` or `q`).
    pub fn scalar(&self) -> f64 {
        match self {
            InnerParam::Sigma { sigma } => *sigma,
            InnerParam::Quantile { q, .. } | InnerParam::Coverage { q, .. } => *q,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Iterations {
    pub inner: usize,
    pub outer: usize,
    pub theta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub measure: Measure,
    pub mode: Mode,
    pub lambda: f64,
    pub inner: InnerParam,
    pub premium: f64,
    /// Variance, CVaR or VaR of the retained total.
    pub risk_value: f64,
    /// `premium + lambda * risk_value` (for VaR, where no lambda exists, the premium).
    pub objective: f64,
    pub iterations: Iterations,
    /// Every `(lambda, risk)` pair evaluated by the outer search, in order.
    pub bracket: Vec<Probe>,
    /// Risk blocks by ascending loading; risks sharing a loading share a block.
    pub blocks: Vec<Block>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub report: SolveReport,
    pub contract: Contract,
}

/// Records outer probes and aborts when the risk value increases with lambda.
#[derive(Debug, Default)]
pub(crate) struct MonotoneAudit {
    probes: Vec<Probe>,
}

impl MonotoneAudit {
    pub(crate) fn record(&mut self, lambda: f64, risk: f64) -> Result<()> {
        self.probes.push(Probe { lambda, risk });
        let slack = 1e-8 * risk.abs().max(1.0);
        let violated = self.probes.iter().any(|p| {
            (p.lambda < lambda && p.risk < risk - slack) || (p.lambda > lambda && p.risk > risk + slack)
        });
        if violated {
            let mut curve = self.probes.clone();
            curve.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
            return Err(Error::NonMonotone { curve });
        }
        Ok(())
    }

    pub(crate) fn into_probes(self) -> Vec<Probe> {
        self.probes
    }
}
