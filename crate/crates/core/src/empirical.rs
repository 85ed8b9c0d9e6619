//! Exact risk measures of weighted discrete distributions.
//!
//! Quantiles use the left-continuous generalized inverse
//! `inf { x : F(x) >= alpha }` with no interpolation between atoms. CVaR is the
//! normalized upper-tail average `(1 / (1 - alpha)) * int_alpha^1 F^-1(t) dt`;
//! the atom straddling `alpha` contributes only its share of the tail mass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum, PROB_EPS};

/// A random variable on finitely many weighted atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariable {
    values: Vec<f64>,
    weights: Arc<[f64]>,
}

impl EmpiricalVariable {
    pub fn new(values: Vec<f64>, weights: impl Into<Arc<[f64]>>) -> Result<Self> {
        let weights = weights.into();
        if values.is_empty() {
            return Err(Error::data("empirical variable needs at least one atom"));
        }
        if values.len() != weights.len() {
            return Err(Error::data(format!("{} values for {} weights", values.len(), weights.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("empirical variable has a non-finite value"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::data("weights must be finite and nonnegative"));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > PROB_EPS {
            return Err(Error::data(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { values, weights })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let m = values.len().max(1);
        Self::new(values, vec![1.0 / m as f64; m])
    }

    /// Caller guarantees the invariants (weights already validated elsewhere).
    pub(crate) fn from_parts(values: Vec<f64>, weights: Arc<[f64]>) -> Self {
        debug_assert_eq!(values.len(), weights.len());
        Self { values, weights }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same atoms, values shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self::from_parts(self.values.iter().map(|v| v + c).collect(), Arc::clone(&self.weights))
    }

    /// Atoms sorted by value (ascending).
    fn sorted_atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self.values.iter().copied().zip(self.weights.iter().copied()).collect();
        atoms.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    }

    /// `P(V <= x)`.
    pub fn prob_le(&self, x: f64) -> f64 {
        compensated_sum(self.values.iter().zip(self.weights.iter()).filter(|(v, _)| **v <= x).map(|(_, w)| *w))
    }

    /// `P(V < x)`.
    pub fn prob_lt(&self, x: f64) -> f64 {
        compensated_sum(self.values.iter().zip(self.weights.iter()).filter(|(v, _)| **v < x).map(|(_, w)| *w))
    }
}

pub fn mean(v: &EmpiricalVariable) -> f64 {
    compensated_sum(v.values.iter().zip(v.weights.iter()).map(|(x, w)| x * w))
}

/// Population variance, computed around the mean of the values shifted by the
/// first atom (so a constant has variance exactly zero) and clamped at zero.
pub fn variance(v: &EmpiricalVariable) -> f64 {
    let Some(&shift) = v.values.first() else { return 0.0 };
    let mu = compensated_sum(v.values.iter().zip(v.weights.iter()).map(|(x, w)| (x - shift) * w));
    let var = compensated_sum(v.values.iter().zip(v.weights.iter()).map(|(x, w)| w * (x - shift - mu).powi(2)));
    var.max(0.0)
}

/// Value at risk: the smallest atom `x` with `P(V <= x) >= alpha`.
pub fn var_alpha(v: &EmpiricalVariable, alpha: f64) -> f64 {
    quantile_sorted(&v.sorted_atoms(), alpha)
}

fn quantile_sorted(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let mut cum = CompensatedSum::new();
    for &(x, w) in atoms {
        cum.add(w);
        if cum.value() >= alpha - PROB_EPS {
            return x;
        }
    }
    atoms.last().map_or(f64::NAN, |a| a.0)
}

/// Conditional value at risk, normalized: the mean of the upper `1 - alpha`
/// tail, splitting the straddling atom fractionally.
pub fn cvar_alpha(v: &EmpiricalVariable, alpha: f64) -> f64 {
    cvar_integral(v, alpha) / (1.0 - alpha)
}

/// The unnormalized tail integral `int_alpha^1 F^-1(t) dt`.
pub fn cvar_integral(v: &EmpiricalVariable, alpha: f64) -> f64 {
    tail_integral_sorted(&v.sorted_atoms(), alpha)
}

fn tail_integral_sorted(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let mut remaining = 1.0 - alpha;
    let mut acc = CompensatedSum::new();
    for &(x, w) in atoms.iter().rev() {
        if remaining <= 0.0 {
            break;
        }
        let take = w.min(remaining);
        acc.add(take * x);
        remaining -= take;
    }
    acc.value()
}

/// Value at risk and CVaR from a single sort.
pub fn var_cvar(v: &EmpiricalVariable, alpha: f64) -> (f64, f64) {
    let atoms = v.sorted_atoms();
    (quantile_sorted(&atoms, alpha), tail_integral_sorted(&atoms, alpha) / (1.0 - alpha))
}

/// Wasserstein-1 distance `int_0^1 |F_U^-1(t) - F_V^-1(t)| dt`, exact for
/// discrete laws.
pub fn wasserstein1(u: &EmpiricalVariable, v: &EmpiricalVariable) -> f64 {
    let a = u.sorted_atoms();
    let b = v.sorted_atoms();
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (a[0].1, b[0].1);
    let mut acc = CompensatedSum::new();
    while i < a.len() && j < b.len() {
        let step = left_a.min(left_b);
        acc.add(step * (a[i].0 - b[j].0).abs());
        left_a -= step;
        left_b -= step;
        if left_a <= 0.0 {
            i += 1;
            if i < a.len() {
                left_a = a[i].1;
            }
        }
        if left_b <= 0.0 {
            j += 1;
            if j < b.len() {
                left_b = b[j].1;
            }
        }
    }
    acc.value()
}
