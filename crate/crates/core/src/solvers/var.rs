use super::{InnerParam, Iterations, Measure, Mode, Solution, SolveReport};
use crate::contracts::{premium, retained, Layering};
use crate::empirical::{self, EmpiricalVariable};
use crate::error::{Error, Result};
use crate::numeric::{CompensatedSum, PROB_EPS};
use crate::portfolio::{validate_alpha, SampleMatrix};

/// Cheapest contract with `VaR_alpha(Z) <= c`.
///
/// Each sample is either left alone or brought down to `c` by the layer
/// `phi`, at cost `beta . phi`. Samples are covered in order of cost until
/// mass `alpha` is reached; the atom straddling `alpha` is split so that the
/// covered mass is exactly `alpha`. Zero-cost samples are always covered.
pub fn solve_constrained_var(x: &SampleMatrix, loadings: &[f64], c: f64, alpha: f64) -> Result<Solution> {
    validate_alpha(alpha)?;
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::validation(format!("VaR bound c must be nonnegative, got {c}")));
    }
    let layers = Layering::new(x, loadings)?;
    let phi = layers.phi_blocks(c);
    let cost = layers.phi_cost(&phi);
    let weights = x.shared_weights();
    let q = empirical::var_alpha(&EmpiricalVariable::from_parts(cost.clone(), weights.clone()), alpha);

    let mut below = CompensatedSum::new();
    let mut at = CompensatedSum::new();
    for (&k, &w) in cost.iter().zip(weights.iter()) {
        if k < q {
            below.add(w);
        } else if k == q {
            at.add(w);
        }
    }
    let (below, at) = (below.value(), at.value());
    let split = if q > 0.0 && below < alpha - PROB_EPS {
        // a shortfall within rounding of the whole atom covers it fully
        Some(if alpha - below >= at - PROB_EPS { 1.0 } else { (alpha - below) / at })
    } else {
        None
    };
    let coverage: Vec<f64> = cost
        .iter()
        .map(|&k| match split {
            _ if k == 0.0 || k < q => 1.0,
            Some(f) if k == q => f,
            _ => 0.0,
        })
        .collect();
    let covered_mass = coverage.iter().zip(weights.iter()).map(|(f, w)| f * w).collect::<CompensatedSum>().value();

    let contract = layers.var_contract_with_q(c, q, coverage)?;
    let z = retained(x, &contract)?;
    let risk_value = empirical::var_alpha(&z, alpha);
    let premium = premium(&contract, loadings);
    let mut notes = Vec::new();
    if contract.is_zero() {
        notes.push("no cover needed: VaR of the total is already within c".to_string());
    }
    if let Some(f) = split.filter(|&f| f < 1.0) {
        notes.push(format!("samples with cost {q} are covered with probability {f}"));
    }
    let report = SolveReport {
        measure: Measure::Var,
        mode: Mode::Constrained,
        lambda: f64::NAN,
        inner: InnerParam::Coverage { q, covered_mass, split_fraction: split },
        premium,
        risk_value,
        objective: premium,
        iterations: Iterations::default(),
        bracket: Vec::new(),
        blocks: layers.blocks().to_vec(),
        notes,
    };
    Ok(Solution { report, contract })
}
