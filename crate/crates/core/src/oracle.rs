//! Brute-force reference solvers working directly on the `m x n` decision
//! matrix, with no use of the closed-form contract structure. They are slow
//! and meant for cross-checking the solvers on small instances.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::Serialize;

use crate::empirical::{self, EmpiricalVariable};
use crate::error::{Error, Result};
use crate::portfolio::{validate_alpha, validate_loadings, SampleMatrix};

/// Largest sample count accepted by [`oracle_var_enumerate`].
pub const MAX_ENUMERATION_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub objective: f64,
    #[serde(skip)]
    pub contract: Array2<f64>,
    pub iterations: usize,
    /// Final step size (for the CVaR oracle, at the last smoothing stage).
    pub step: f64,
    /// Norm of the gradient mapping at the returned point, zero for enumeration.
    pub kkt_residual: f64,
    pub converged: bool,
}

fn check_inputs(x: &SampleMatrix, loadings: &[f64], lambda: f64) -> Result<()> {
    validate_loadings(loadings)?;
    if loadings.len() != x.n_risks() {
        return Err(Error::validation(format!("{} loadings for {} risks", loadings.len(), x.n_risks())));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

fn premium_of(r: &Array2<f64>, w: &Array1<f64>, loadings: &[f64]) -> f64 {
    r.outer_iter().zip(w).map(|(row, ws)| ws * row.iter().zip(loadings).map(|(v, b)| v * b).sum::<f64>()).sum()
}

fn retained_of(x: &Array2<f64>, r: &Array2<f64>) -> Array1<f64> {
    (x - r).sum_axis(Axis(1))
}

/// Weighted norm `sqrt(sum_s w_s sum_i d_si^2)`.
fn weighted_norm(d: &Array2<f64>, w: &Array1<f64>) -> f64 {
    d.outer_iter().zip(w).map(|(row, ws)| ws * row.dot(&row)).sum::<f64>().sqrt()
}

/// Largest eigenvalue of `d -> 2 lambda (u - E[u]) 1^T` with `u = d 1`, the
/// Hessian of the variance term in the sample-weighted metric.
fn variance_lipschitz(w: &Array1<f64>, n: usize, lambda: f64) -> f64 {
    let mut u = Array1::from_iter((0..w.len()).map(|s| ((s * 7919) % 104_729) as f64 + 1.0));
    let mut est = 0.0;
    for _ in 0..100 {
        let mean = u.dot(w);
        let v = u.mapv(|x| 2.0 * lambda * n as f64 * (x - mean));
        let norm = v.mapv(|x| x * x).dot(w).sqrt();
        if norm == 0.0 {
            return 2.0 * lambda * n as f64;
        }
        est = norm / u.mapv(|x| x * x).dot(w).sqrt();
        u = v / norm;
    }
    // the power iterate approaches from below; keep a small margin but never
    // exceed the analytic bound
    (1.01 * est).min(2.0 * lambda * n as f64)
}

/// Projected accelerated gradient on `premium(R) + lambda Var(Z)` over the box
/// `0 <= R <= X`, in the metric weighting each sample by its probability.
pub fn oracle_penalized_variance(x: &SampleMatrix, loadings: &[f64], lambda: f64, iters: usize, tol: f64) -> Result<OracleResult> {
    check_inputs(x, loadings, lambda)?;
    let xs = x.data();
    let w = Array1::from(x.weights().to_vec());
    let n = x.n_risks();
    let beta = Array1::from(loadings.to_vec());
    let lip = variance_lipschitz(&w, n, lambda).max(1e-12);
    let step = 1.0 / lip;

    let objective = |r: &Array2<f64>| {
        let z = retained_of(xs, r);
        let mean = z.dot(&w);
        premium_of(r, &w, loadings) + lambda * z.mapv(|v| (v - mean).powi(2)).dot(&w)
    };
    let gradient = |r: &Array2<f64>| {
        let z = retained_of(xs, r);
        let mean = z.dot(&w);
        let mut g = Array2::zeros(r.dim());
        for (mut row, zs) in g.outer_iter_mut().zip(&z) {
            row.assign(&beta);
            row -= 2.0 * lambda * (zs - mean);
        }
        g
    };
    let project = |mut r: Array2<f64>| {
        Zip::from(&mut r).and(xs).for_each(|v, &cap| *v = v.clamp(0.0, cap));
        r
    };

    let mut r = Array2::zeros(xs.dim());
    let mut y = r.clone();
    let mut t = 1.0_f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < iters {
        iterations += 1;
        let next = project(&y - &(gradient(&y) * step));
        residual = weighted_norm(&(&y - &next), &w) * lip;
        if residual <= tol {
            r = next;
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // gradient restart: drop momentum when it points uphill
        let uphill = ((&y - &next) * (&next - &r)).sum() > 0.0;
        if uphill {
            t = 1.0;
            y = next.clone();
        } else {
            y = &next + &((&next - &r) * ((t - 1.0) / t_next));
            t = t_next;
        }
        r = next;
    }
    Ok(OracleResult { objective: objective(&r), contract: r, iterations, step, kkt_residual: residual, converged: residual <= tol })
}

/// Huber smoothing of `t -> t_+` and its derivative.
fn smooth_plus(t: f64, mu: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t < mu {
        (t * t / (2.0 * mu), t / mu)
    } else {
        (t - 0.5 * mu, 1.0)
    }
}

/// Joint minimization of `premium(R) + lambda (q + E[(Z - q)_+] / (1 - alpha))`
/// over `0 <= R <= X`, `0 <= q <= max S`.
///
/// The kink of `(.)_+` is Huber-smoothed with width `mu`, and an accelerated
/// projected gradient runs on a sequence of shrinking widths, each warm
/// started from the last. The returned contract is the iterate with the
/// smallest true objective `premium + lambda CVaR(Z)`.
pub fn oracle_penalized_cvar(
    x: &SampleMatrix,
    loadings: &[f64],
    lambda: f64,
    alpha: f64,
    iters: usize,
    tol: f64,
) -> Result<OracleResult> {
    check_inputs(x, loadings, lambda)?;
    validate_alpha(alpha)?;
    let xs = x.data();
    let w = Array1::from(x.weights().to_vec());
    let n = x.n_risks();
    let totals = x.totals();
    let scale = totals.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tail = lambda / (1.0 - alpha);

    let true_objective = |r: &Array2<f64>| {
        let z = EmpiricalVariable::new(retained_of(xs, r).to_vec(), x.weights().to_vec()).expect("weights already validated");
        premium_of(r, &w, loadings) + lambda * empirical::cvar_alpha(&z, alpha)
    };
    if lambda == 0.0 {
        let r = Array2::zeros(xs.dim());
        return Ok(OracleResult { objective: true_objective(&r), contract: r, iterations: 0, step: 0.0, kkt_residual: 0.0, converged: true });
    }
    // gradient of the smoothed objective, in the weighted metric for R
    let gradient = |r: &Array2<f64>, q: f64, mu: f64| {
        let z = retained_of(xs, r);
        let mut g = Array2::zeros(r.dim());
        let mut gq = lambda;
        for ((mut row, zs), ws) in g.outer_iter_mut().zip(&z).zip(&w) {
            let d = smooth_plus(zs - q, mu).1;
            gq -= tail * ws * d;
            for (gi, b) in row.iter_mut().zip(loadings) {
                *gi = b - tail * d;
            }
        }
        (g, gq)
    };
    let project = |mut r: Array2<f64>, q: f64| {
        Zip::from(&mut r).and(xs).for_each(|v, &cap| *v = v.clamp(0.0, cap));
        (r, q.clamp(0.0, scale))
    };

    let stages = 8;
    let per_stage = (iters / stages).max(1);
    let mut r = Array2::zeros(xs.dim());
    let mut q = empirical::var_alpha(&EmpiricalVariable::new(totals.to_vec(), x.weights().to_vec())?, alpha);
    let mut best = (true_objective(&r), r.clone());
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut step = 0.0;
    for stage in 0..stages {
        let mu = scale * 10f64.powi(-(stage as i32) - 1);
        let lip = tail * (n + 1) as f64 / mu;
        step = 1.0 / lip;
        let (mut yr, mut yq) = (r.clone(), q);
        let mut t = 1.0_f64;
        for _ in 0..per_stage {
            iterations += 1;
            let (g, gq) = gradient(&yr, yq, mu);
            let (nr, nq) = project(&yr - &(g * step), yq - gq * step);
            let dr = &yr - &nr;
            let dq = yq - nq;
            residual = (weighted_norm(&dr, &w).powi(2) + dq * dq).sqrt() * lip;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let uphill = (&dr * &(&nr - &r)).sum() + dq * (nq - q) > 0.0;
            if uphill {
                t = 1.0;
                yr = nr.clone();
                yq = nq;
            } else {
                let m = (t - 1.0) / t_next;
                yr = &nr + &((&nr - &r) * m);
                yq = nq + (nq - q) * m;
                t = t_next;
            }
            r = nr;
            q = nq;
            if iterations % 16 == 0 || residual <= tol {
                let obj = true_objective(&r);
                if obj < best.0 {
                    best = (obj, r.clone());
                }
            }
            if residual <= tol {
                break;
            }
        }
    }
    let obj = true_objective(&r);
    if obj < best.0 {
        best = (obj, r);
    }
    Ok(OracleResult { objective: best.0, contract: best.1, iterations, step, kkt_residual: residual, converged: residual <= tol })
}

/// Cheapest coverage set with `VaR_alpha(Z) <= c`, by exhaustive search over
/// sample subsets of mass at least `alpha` and over subsets completed by a
/// fractional share of one more sample. Covered samples cede the layer that
/// brings their total down to `c`, filled from the cheapest loading up.
pub fn oracle_var_enumerate(x: &SampleMatrix, loadings: &[f64], c: f64, alpha: f64) -> Result<OracleResult> {
    check_inputs(x, loadings, 0.0)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::validation(format!("c must be nonnegative, got {c}")));
    }
    let m = x.n_samples();
    if m > MAX_ENUMERATION_SAMPLES {
        return Err(Error::Refused(format!("enumeration needs at most {MAX_ENUMERATION_SAMPLES} samples, got {m}")));
    }
    let w = x.weights();
    let mut order: Vec<usize> = (0..loadings.len()).collect();
    order.sort_by(|&a, &b| loadings[a].total_cmp(&loadings[b]));
    let mut phi = Array2::zeros(x.data().dim());
    for (mut p, row) in phi.outer_iter_mut().zip(x.data().outer_iter()) {
        let mut excess = (row.sum() - c).max(0.0);
        for &i in &order {
            let take = excess.min(row[i]);
            p[i] = take;
            excess -= take;
        }
    }
    let cost: Vec<f64> = phi.outer_iter().zip(w).map(|(p, ws)| ws * p.iter().zip(loadings).map(|(v, b)| v * b).sum::<f64>()).collect();

    let full = 1usize << m;
    let mut mass = vec![0.0; full];
    let mut premium = vec![0.0; full];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |p: f64, coverage: &dyn Fn() -> Vec<f64>| {
        if best.as_ref().is_none_or(|b| p < b.0) {
            best = Some((p, coverage()));
        }
    };
    for mask in 1..full {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        mass[mask] = mass[rest] + w[low];
        premium[mask] = premium[rest] + cost[low];
    }
    for mask in 0..full {
        let covered = |extra: Option<(usize, f64)>| {
            move || {
                (0..m)
                    .map(|s| match extra {
                        Some((e, f)) if e == s => f,
                        _ if mask >> s & 1 == 1 => 1.0,
                        _ => 0.0,
                    })
                    .collect::<Vec<f64>>()
            }
        };
        if mass[mask] >= alpha - 1e-12 {
            consider(premium[mask], &covered(None));
        } else {
            for s in (0..m).filter(|s| mask >> s & 1 == 0) {
                let short = alpha - mass[mask];
                if short < w[s] - 1e-12 {
                    let f = short / w[s];
                    consider(premium[mask] + f * cost[s], &covered(Some((s, f))));
                }
            }
        }
    }
    let (objective, coverage) = best.expect("the full set always qualifies");
    for (mut p, f) in phi.outer_iter_mut().zip(&coverage) {
        p *= *f;
    }
    Ok(OracleResult { objective, contract: phi, iterations: full, step: 0.0, kkt_residual: 0.0, converged: true })
}
