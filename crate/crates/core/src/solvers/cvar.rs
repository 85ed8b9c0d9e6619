use super::index::TailIndex;
use super::{InnerParam, Iterations, Measure, Mode, MonotoneAudit, Solution, SolveReport, Tolerances};
use crate::contracts::{premium, retained, CvarLevel, Layering};
use crate::empirical::{self, EmpiricalVariable};
use crate::error::{Error, Result};
use crate::portfolio::{validate_alpha, SampleMatrix};

/// Outer-bracket width below which a missed target is treated as a jump.
const GAP_WIDTH: f64 = 1e-12;
/// Distance within which a jump is attributed to a loading level.
const SNAP_TOL: f64 = 1e-9;

/// CVaR-penalized reinsurance at a fixed confidence level.
#[derive(Debug, Clone)]
pub struct CvarProblem<'a> {
    layers: Layering<'a>,
    index: TailIndex,
    loadings: Vec<f64>,
    alpha: f64,
    tol: Tolerances,
    var_total: f64,
    cvar_total: f64,
}

struct Evaluated {
    level: CvarLevel,
    q: f64,
    risk: f64,
    searches: usize,
}

impl<'a> CvarProblem<'a> {
    pub fn new(x: &'a SampleMatrix, loadings: &[f64], alpha: f64, tol: Tolerances) -> Result<Self> {
        validate_alpha(alpha)?;
        tol.validate()?;
        let layers = Layering::new(x, loadings)?;
        let index = TailIndex::new(&layers);
        let totals = EmpiricalVariable::from_parts(layers.tails().total().to_vec(), x.shared_weights());
        let (var_total, cvar_total) = empirical::var_cvar(&totals, alpha);
        Ok(Self { layers, index, loadings: loadings.to_vec(), alpha, tol, var_total, cvar_total })
    }

    pub fn layers(&self) -> &Layering<'a> {
        &self.layers
    }

    /// `VaR_alpha(S)`, the upper end of the admissible quantile range.
    pub fn var_total(&self) -> f64 {
        self.var_total
    }

    pub fn cvar_total(&self) -> f64 {
        self.cvar_total
    }

    pub fn level(&self, lambda: f64) -> CvarLevel {
        self.layers.cvar_level(lambda, self.alpha)
    }

    /// `(K - beta_k)_+ - (K - beta_{k-1})_+` with `beta_0 = 0`.
    fn coefficients(&self, level: &CvarLevel) -> Vec<f64> {
        let mut prev = level.k.max(0.0);
        self.layers
            .blocks()
            .iter()
            .map(|b| {
                let cur = (level.k - b.loading).max(0.0);
                let coef = cur - prev;
                prev = cur;
                coef
            })
            .collect()
    }

    fn j_plus_with(&self, coef: &[f64], lambda: f64, q: f64) -> f64 {
        lambda + coef.iter().enumerate().map(|(k, c)| c * self.index.level(k).prob_gt(q)).sum::<f64>()
    }

    /// One-sided derivatives `(J'_-(q), J'_+(q))` of the partially minimized
    /// Rockafellar-Uryasev objective.
    pub fn j_derivatives_at(&self, level: &CvarLevel, q: f64) -> (f64, f64) {
        let coef = self.coefficients(level);
        let minus = level.lambda + coef.iter().enumerate().map(|(k, c)| c * self.index.level(k).prob_ge(q)).sum::<f64>();
        (minus, self.j_plus_with(&coef, level.lambda, q))
    }

    /// The smallest `q` in `[0, VaR_alpha(S)]` with `J'_+(q) >= 0`. `J'_+` is a
    /// nondecreasing step function jumping only at tail-sum atoms, so each
    /// level's sorted atoms are bisected and the smallest hit wins; the
    /// sandwich `J'_-(q) <= 0 <= J'_+(q)` then holds exactly.
    pub fn q_star(&self, level: &CvarLevel) -> (f64, usize) {
        if level.lambda == 0.0 {
            // every q gives the zero contract
            return (self.var_total, 0);
        }
        let coef = self.coefficients(level);
        let j_plus = |q: f64| self.j_plus_with(&coef, level.lambda, q);
        let mut evals = 1;
        if j_plus(0.0) >= 0.0 {
            return (0.0, evals);
        }
        let mut best = self.var_total;
        for k in 0..self.index.n_levels() {
            let values = self.index.level(k).values();
            let (mut lo, mut hi) = (0, values.partition_point(|&v| v <= best));
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                evals += 1;
                if j_plus(values[mid]) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            if lo < values.len() && values[lo] < best {
                best = values[lo];
            }
        }
        (best, evals)
    }

    fn retained_at(&self, level: &CvarLevel, q: f64, theta: &[f64]) -> EmpiricalVariable {
        self.layers.retained_from_blocks(&self.layers.cvar_blocks(level, q, theta))
    }

    fn risk(&self, level: &CvarLevel, q: f64, theta: &[f64]) -> f64 {
        empirical::cvar_alpha(&self.retained_at(level, q, theta), self.alpha)
    }

    fn evaluate(&self, lambda: f64) -> Evaluated {
        let level = self.level(lambda);
        let (q, searches) = self.q_star(&level);
        let theta = vec![0.0; self.layers.n_blocks()];
        Evaluated { level, q, risk: self.risk(&level, q, &theta), searches }
    }

    fn build(&self, mode: Mode, level: &CvarLevel, q: f64, theta: &[f64], iterations: Iterations) -> Result<Solution> {
        let x = self.layers.samples();
        let contract = self.layers.cvar_contract_at(level, q, theta)?;
        let z = retained(x, &contract)?;
        let premium = premium(&contract, &self.loadings);
        let risk_value = empirical::cvar_alpha(&z, self.alpha);
        let tied = self.layers.tied_block(level);
        let report = SolveReport {
            measure: Measure::Cvar,
            mode,
            lambda: level.lambda,
            inner: InnerParam::Quantile {
                q,
                theta: tied.map(|b| theta[b]),
                tied_risks: tied.map(|b| self.layers.blocks()[b].members.clone()).unwrap_or_default(),
            },
            premium,
            risk_value,
            objective: premium + level.lambda * risk_value,
            iterations,
            bracket: Vec::new(),
            blocks: self.layers.blocks().to_vec(),
            notes: Vec::new(),
        };
        Ok(Solution { report, contract })
    }

    /// Minimizer of `premium + lambda * CVaR(Z)`. A block whose loading equals
    /// `lambda / (1 - alpha)` is indifferent and cedes nothing.
    pub fn solve_penalized(&self, lambda: f64) -> Result<Solution> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::validation(format!("lambda must be nonnegative, got {lambda}")));
        }
        let level = self.level(lambda);
        let (q, searches) = self.q_star(&level);
        let theta = vec![0.0; self.layers.n_blocks()];
        let mut sol = self.build(Mode::Penalized, &level, q, &theta, Iterations { inner: searches, ..Default::default() })?;
        if let Some(b) = self.layers.tied_block(&level) {
            sol.report.notes.push(format!(
                "loading {} equals the CVaR level; any share in [0, 1] of its layer is optimal, ceding none",
                self.layers.blocks()[b].loading
            ));
        }
        Ok(sol)
    }

    pub fn solve_constrained(&self, c: f64) -> Result<Solution> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::validation(format!("CVaR bound c must be positive, got {c}")));
        }
        let zero_theta = vec![0.0; self.layers.n_blocks()];
        if c >= self.cvar_total {
            let level = self.level(0.0);
            let mut sol = self.build(Mode::Constrained, &level, self.var_total, &zero_theta, Iterations::default())?;
            sol.report.notes.push(format!("constraint slack: CVaR(S) = {} <= c", self.cvar_total));
            return Ok(sol);
        }

        let tol = self.tol.outer_tol * c;
        let mut audit = MonotoneAudit::default();
        audit.record(0.0, self.cvar_total)?;
        let mut it = Iterations::default();
        let record = |e: &Evaluated, audit: &mut MonotoneAudit, it: &mut Iterations| -> Result<()> {
            audit.record(e.level.lambda, e.risk)?;
            it.outer += 1;
            it.inner += e.searches;
            Ok(())
        };

        // lambda above every loading cedes everything above q = 0
        let max_loading = self.loadings.iter().copied().fold(0.0, f64::max);
        let mut lo = 0.0;
        let mut lo_eval: Option<Evaluated> = None;
        let mut hi = 2.0 * max_loading;
        let mut hi_eval = loop {
            let e = self.evaluate(hi);
            record(&e, &mut audit, &mut it)?;
            if e.risk <= c + tol {
                break e;
            }
            if it.outer >= self.tol.max_iter {
                return Err(Error::Bracket(format!("CVaR still {} > {c} at lambda = {hi}", e.risk)));
            }
            lo = hi;
            lo_eval = Some(e);
            hi *= 2.0;
        };

        loop {
            if (hi_eval.risk - c).abs() <= tol {
                let mut sol = self.build(Mode::Constrained, &hi_eval.level, hi_eval.q, &zero_theta, it)?;
                sol.report.bracket = audit.into_probes();
                return Ok(sol);
            }
            if hi - lo < GAP_WIDTH {
                let lo_eval = match lo_eval {
                    Some(e) => e,
                    None => self.evaluate(lo),
                };
                return self.resolve_gap(c, lo_eval, hi_eval, audit, it);
            }
            if it.outer >= self.tol.max_iter {
                return Err(Error::NonConvergence {
                    context: format!("lambda bisection for CVaR bound {c}"),
                    iterations: it.outer,
                    residual: hi_eval.risk - c,
                });
            }
            let mid = 0.5 * (lo + hi);
            let e = self.evaluate(mid);
            record(&e, &mut audit, &mut it)?;
            if e.risk > c {
                lo = mid;
                lo_eval = Some(e);
            } else {
                hi = mid;
                hi_eval = e;
            }
        }
    }

    /// The lambda bracket collapsed onto a jump of `lambda -> CVaR(Z*)`.
    /// At a loading level the tied block's share theta is bisected; at a jump
    /// caused by a single atom (q* moving between neighbouring atoms) the
    /// quantile itself is bisected between its two one-sided values.
    fn resolve_gap(
        &self,
        c: f64,
        lo: Evaluated,
        hi: Evaluated,
        audit: MonotoneAudit,
        mut it: Iterations,
    ) -> Result<Solution> {
        let tol = self.tol.outer_tol * c;
        let n_blocks = self.layers.n_blocks();
        let tied = self.layers.blocks().iter().position(|b| (hi.level.lambda - b.loading * (1.0 - self.alpha)).abs() <= SNAP_TOL);

        let solution = if let Some(b) = tied {
            let level = self.layers.cvar_level_at_block(b, self.alpha);
            let (q, searches) = self.q_star(&level);
            it.inner += searches;
            let mut theta = vec![0.0; n_blocks];
            let at = |t: f64, theta: &mut Vec<f64>| {
                theta[b] = t;
                self.risk(&level, q, theta)
            };
            let (r0, r1) = (at(0.0, &mut theta), at(1.0, &mut theta));
            if !(r1 <= c + tol && r0 >= c - tol) {
                return Err(Error::Infeasible(format!(
                    "jump at lambda = {} spans CVaR [{r1}, {r0}], which misses c = {c}",
                    level.lambda
                )));
            }
            let t = bisect_decreasing(0.0, 1.0, c, tol, self.tol, &mut it.theta, |t| at(t, &mut theta))?;
            theta[b] = t;
            let mut sol = self.build(Mode::Constrained, &level, q, &theta, it)?;
            sol.report.notes.push(format!(
                "CVaR(Z*) jumps at lambda = {} (loading {} reached); tied block cedes share {t}",
                level.lambda,
                self.layers.blocks()[b].loading
            ));
            sol
        } else {
            let level = hi.level;
            let (q_low, q_high) = (hi.q, lo.q.max(hi.q));
            let zero = vec![0.0; n_blocks];
            let r_high = self.risk(&level, q_high, &zero);
            if !(hi.risk <= c + tol && r_high >= c - tol) {
                return Err(Error::Infeasible(format!(
                    "jump at lambda = {} spans CVaR [{}, {r_high}], which misses c = {c}",
                    level.lambda, hi.risk
                )));
            }
            // risk increases with q, so its negation is bisected
            let q = bisect_decreasing(q_low, q_high, -c, tol, self.tol, &mut it.theta, |q| -self.risk(&level, q, &zero))?;
            let mut sol = self.build(Mode::Constrained, &level, q, &zero, it)?;
            sol.report.notes.push(format!(
                "q* jumps between atoms {q_low} and {q_high} at lambda = {}; interpolated q = {q}",
                level.lambda
            ));
            sol
        };
        let mut solution = solution;
        solution.report.bracket = audit.into_probes();
        Ok(solution)
    }
}

/// Bisection for `f(t) = target` with `f` continuous and nonincreasing on `[a, b]`.
fn bisect_decreasing(
    mut a: f64,
    mut b: f64,
    target: f64,
    tol: f64,
    limits: Tolerances,
    count: &mut usize,
    mut f: impl FnMut(f64) -> f64,
) -> Result<f64> {
    for _ in 0..limits.max_iter {
        let mid = 0.5 * (a + b);
        let v = f(mid);
        *count += 1;
        if (v - target).abs() <= tol {
            return Ok(mid);
        }
        if v > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(Error::NonConvergence { context: "bisection inside a CVaR jump".into(), iterations: limits.max_iter, residual: b - a })
}

pub fn j_derivatives(x: &SampleMatrix, loadings: &[f64], lambda: f64, alpha: f64, q: f64) -> Result<(f64, f64)> {
    let p = CvarProblem::new(x, loadings, alpha, Tolerances::default())?;
    Ok(p.j_derivatives_at(&p.level(lambda), q))
}

pub fn solve_q_star(x: &SampleMatrix, loadings: &[f64], lambda: f64, alpha: f64, tol: Tolerances) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation(format!("lambda must be positive, got {lambda}")));
    }
    let p = CvarProblem::new(x, loadings, alpha, tol)?;
    Ok(p.q_star(&p.level(lambda)).0)
}

pub fn solve_penalized_cvar(x: &SampleMatrix, loadings: &[f64], lambda: f64, alpha: f64, tol: Tolerances) -> Result<Solution> {
    CvarProblem::new(x, loadings, alpha, tol)?.solve_penalized(lambda)
}

pub fn solve_constrained_cvar(x: &SampleMatrix, loadings: &[f64], c: f64, alpha: f64, tol: Tolerances) -> Result<Solution> {
    CvarProblem::new(x, loadings, alpha, tol)?.solve_constrained(c)
}
