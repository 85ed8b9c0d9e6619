//! Optimal reinsurance on empirical (Monte Carlo or data) loss distributions.
//!
//! A portfolio of `n` nonnegative risks is represented by a weighted sample
//! matrix. The insurer cedes `R_i <= X_i` to a reinsurer charging the
//! expected-value premium `(1 + beta_i) E[R_i]`, and trades the premium
//! loading against the variance, CVaR or VaR of the retained total.
//!
//! * [`portfolio`] builds sample matrices from parametric specs or CSV files.
//! * [`empirical`] holds the discrete distribution functionals.
//! * [`contracts`] evaluates the closed-form optimal contracts.
//! * [`solvers`] finds the inner parameters and the multipliers of the
//!   constrained problems.
//! * [`oracle`] solves small instances by brute force for cross-checking.

pub mod contracts;
pub mod empirical;
pub mod error;
pub mod numeric;
pub mod oracle;
pub mod portfolio;
pub mod solvers;

pub use contracts::{Block, Contract, ContractParams, Layering, RiskMeasure, TailSums};
pub use empirical::EmpiricalVariable;
pub use error::{Error, Probe, Result};
pub use oracle::OracleResult;
pub use portfolio::{build_portfolio, load_samples, DistributionSpec, PortfolioSpec, RiskSource, SampleMatrix};
pub use solvers::{
    CurvePoint, EtaPoint, InnerParam, Iterations, Measure, Mode, SigmaMethod, Solution, SolveReport, Tolerances,
};
