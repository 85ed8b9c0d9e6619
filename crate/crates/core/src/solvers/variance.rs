use super::index::TailIndex;
use super::{InnerParam, Iterations, Measure, Mode, MonotoneAudit, SigmaMethod, Solution, SolveReport, Tolerances};
use crate::contracts::{premium, retained, Layering};
use crate::empirical::{self, EmpiricalVariable};
use crate::error::{Error, Result};
use crate::portfolio::SampleMatrix;

const CONTRACTION_BOUND: f64 = 0.95;

/// Variance-penalized reinsurance on a fixed sample matrix.
#[derive(Debug, Clone)]
pub struct VarianceProblem<'a> {
    layers: Layering<'a>,
    index: TailIndex,
    loadings: Vec<f64>,
    tol: Tolerances,
}

struct SigmaSolve {
    sigma: f64,
    iterations: usize,
    note: Option<String>,
}

impl<'a> VarianceProblem<'a> {
    pub fn new(x: &'a SampleMatrix, loadings: &[f64], tol: Tolerances) -> Result<Self> {
        tol.validate()?;
        let layers = Layering::new(x, loadings)?;
        let index = TailIndex::new(&layers);
        Ok(Self { layers, index, loadings: loadings.to_vec(), tol })
    }

    pub fn layers(&self) -> &Layering<'a> {
        &self.layers
    }

    /// `E[S]`, the upper end of the sigma bracket.
    pub fn mean_total(&self) -> f64 {
        self.index.level(0).mean()
    }

    /// `E[Z_eta]` from stop-loss transforms of the tail sums:
    /// `E[(T - eta)_+ ^ X_k] = E[(S_k - a)_+] - E[(S_{k+1} - a)_+]` with
    /// `a = beta_k / (2 lambda) + eta`.
    pub fn mean_retained(&self, lambda: f64, eta: f64) -> f64 {
        let ceded: f64 = self
            .layers
            .blocks()
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let a = b.loading / (2.0 * lambda) + eta;
                self.index.stop_loss(k, a) - self.index.stop_loss(k + 1, a)
            })
            .sum();
        (self.mean_total() - ceded).max(0.0)
    }

    /// `h(eta) = eta - E[Z_eta]`, nondecreasing with a zero at sigma.
    pub fn h(&self, lambda: f64, eta: f64) -> f64 {
        eta - self.mean_retained(lambda, eta)
    }

    fn sigma(&self, lambda: f64) -> Result<SigmaSolve> {
        if self.tol.sigma_method == SigmaMethod::FixedPoint {
            if let Some(solve) = self.sigma_fixed_point(lambda) {
                return Ok(solve);
            }
            let mut solve = self.sigma_bisection(lambda)?;
            solve.note = Some("contraction probe failed; sigma found by bisection".into());
            return Ok(solve);
        }
        self.sigma_bisection(lambda)
    }

    fn sigma_bisection(&self, lambda: f64) -> Result<SigmaSolve> {
        let (mut lo, mut hi) = (0.0, self.mean_total());
        let h0 = self.h(lambda, lo);
        if h0 > self.tol.inner_tol {
            return Err(Error::Bracket(format!("h(0) = {h0:e} > 0 at lambda = {lambda}")));
        }
        let mut iterations = 0;
        while hi - lo > self.tol.inner_tol {
            if iterations >= self.tol.max_iter {
                return Err(Error::NonConvergence {
                    context: format!("sigma bisection at lambda = {lambda}"),
                    iterations,
                    residual: hi - lo,
                });
            }
            let mid = 0.5 * (lo + hi);
            if self.h(lambda, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        Ok(SigmaSolve { sigma: 0.5 * (lo + hi), iterations, note: None })
    }

    /// Largest sampled slope of `eta -> E[Z_eta]` over the sigma bracket.
    pub fn contraction_probe(&self, lambda: f64) -> f64 {
        let upper = self.mean_total();
        let delta = 1e-6 * upper.max(1.0);
        (1..=5)
            .map(|j| {
                let eta = upper * j as f64 / 6.0;
                (self.mean_retained(lambda, eta + delta) - self.mean_retained(lambda, eta)).abs() / delta
            })
            .fold(0.0, f64::max)
    }

    fn sigma_fixed_point(&self, lambda: f64) -> Option<SigmaSolve> {
        let slope = self.contraction_probe(lambda);
        if slope > CONTRACTION_BOUND {
            return None;
        }
        let stop = self.tol.inner_tol * (1.0 - CONTRACTION_BOUND) / CONTRACTION_BOUND;
        let mut eta = 0.0;
        for iterations in 1..=self.tol.max_iter {
            let next = self.mean_retained(lambda, eta);
            let step = (next - eta).abs();
            eta = next;
            if step <= stop {
                if self.h(lambda, eta).abs() <= self.tol.inner_tol {
                    let note = Some(format!("sigma by fixed-point iteration (probed slope {slope:.3})"));
                    return Some(SigmaSolve { sigma: eta, iterations, note });
                }
                return None;
            }
        }
        None
    }

    fn build(&self, mode: Mode, lambda: f64, sigma: f64, iterations: Iterations) -> Result<Solution> {
        let x = self.layers.samples();
        let contract = self.layers.variance_contract(lambda, sigma)?;
        let z = retained(x, &contract)?;
        let premium = premium(&contract, &self.loadings);
        let risk_value = empirical::variance(&z);
        let report = SolveReport {
            measure: Measure::Variance,
            mode,
            lambda,
            inner: InnerParam::Sigma { sigma },
            premium,
            risk_value,
            objective: premium + lambda * risk_value,
            iterations,
            bracket: Vec::new(),
            blocks: self.layers.blocks().to_vec(),
            notes: Vec::new(),
        };
        Ok(Solution { report, contract })
    }

    pub fn solve_penalized(&self, lambda: f64) -> Result<Solution> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::validation(format!("lambda must be nonnegative, got {lambda}")));
        }
        if lambda == 0.0 {
            let mut sol = self.build(Mode::Penalized, 0.0, self.mean_total(), Iterations::default())?;
            sol.report.notes.push("lambda = 0: the zero contract is the unique minimizer".into());
            return Ok(sol);
        }
        let s = self.sigma(lambda)?;
        let mut sol = self.build(Mode::Penalized, lambda, s.sigma, Iterations { inner: s.iterations, ..Default::default() })?;
        sol.report.notes.extend(s.note);
        Ok(sol)
    }

    /// `Var(Z*(lambda))` and the sigma solve behind it.
    fn risk_at(&self, lambda: f64) -> Result<(f64, SigmaSolve)> {
        let s = self.sigma(lambda)?;
        let z: EmpiricalVariable = self.layers.z_eta(lambda, s.sigma);
        Ok((empirical::variance(&z), s))
    }

    pub fn solve_constrained(&self, c: f64) -> Result<Solution> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::validation(format!("variance bound c must be positive, got {c}")));
        }
        let totals = EmpiricalVariable::from_parts(self.layers.tails().total().to_vec(), self.layers.samples().shared_weights());
        let var_s = empirical::variance(&totals);
        if c >= var_s {
            let mut sol = self.build(Mode::Constrained, 0.0, self.mean_total(), Iterations::default())?;
            sol.report.notes.push(format!("constraint slack: Var(S) = {var_s} <= c"));
            return Ok(sol);
        }

        let tol = self.tol.outer_tol * c;
        let mut audit = MonotoneAudit::default();
        audit.record(0.0, var_s)?;
        let mut inner = 0;
        let mut outer = 0;

        let (lo_s, hi_s) = totals.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let max_loading = self.loadings.iter().copied().fold(0.0, f64::max);
        let mut lo = 0.0;
        let mut hi = max_loading * (hi_s - lo_s) / (2.0 * c);
        let mut hit = None;
        loop {
            let (risk, s) = self.risk_at(hi)?;
            audit.record(hi, risk)?;
            inner += s.iterations;
            outer += 1;
            if (risk - c).abs() <= tol {
                hit = Some((hi, s.sigma));
                break;
            }
            if risk < c {
                break;
            }
            if outer >= self.tol.max_iter {
                return Err(Error::Bracket(format!("variance still {risk} > {c} at lambda = {hi}")));
            }
            lo = hi;
            hi *= 2.0;
        }

        let (lambda, sigma) = match hit {
            Some(h) => h,
            None => loop {
                if outer >= self.tol.max_iter {
                    return Err(Error::NonConvergence {
                        context: format!("lambda bisection for variance bound {c}"),
                        iterations: outer,
                        residual: hi - lo,
                    });
                }
                let mid = 0.5 * (lo + hi);
                let (risk, s) = self.risk_at(mid)?;
                audit.record(mid, risk)?;
                inner += s.iterations;
                outer += 1;
                if (risk - c).abs() <= tol {
                    break (mid, s.sigma);
                }
                if risk > c {
                    lo = mid;
                } else {
                    hi = mid;
                }
            },
        };

        // A flat stretch of the curve at level c makes lambda non-unique;
        // return its left end.
        let mut notes = Vec::new();
        let (mut lambda, mut sigma) = (lambda, sigma);
        let probe = lambda * (1.0 - 1e-3);
        let (risk_probe, _) = self.risk_at(probe)?;
        audit.record(probe, risk_probe)?;
        if (risk_probe - c).abs() <= tol {
            let (mut a, mut b) = (lo.min(probe), probe);
            while b - a > 1e-12 * b && outer < self.tol.max_iter {
                let mid = 0.5 * (a + b);
                let (risk, _) = self.risk_at(mid)?;
                audit.record(mid, risk)?;
                outer += 1;
                if risk <= c + tol {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            let s = self.sigma(b)?;
            lambda = b;
            sigma = s.sigma;
            notes.push("risk curve is flat at c; returning the smallest lambda".into());
        }

        let mut sol = self.build(Mode::Constrained, lambda, sigma, Iterations { inner, outer, theta: 0 })?;
        sol.report.bracket = audit.into_probes();
        sol.report.notes.extend(notes);
        Ok(sol)
    }
}

/// The layer offset sigma at penalty `lambda > 0`.
pub fn solve_sigma(x: &SampleMatrix, loadings: &[f64], lambda: f64, tol: Tolerances) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation(format!("lambda must be positive, got {lambda}")));
    }
    Ok(VarianceProblem::new(x, loadings, tol)?.sigma(lambda)?.sigma)
}

pub fn solve_penalized_variance(x: &SampleMatrix, loadings: &[f64], lambda: f64, tol: Tolerances) -> Result<Solution> {
    VarianceProblem::new(x, loadings, tol)?.solve_penalized(lambda)
}

pub fn solve_constrained_variance(x: &SampleMatrix, loadings: &[f64], c: f64, tol: Tolerances) -> Result<Solution> {
    VarianceProblem::new(x, loadings, tol)?.solve_constrained(c)
}
