//! Closed-form reinsurance contracts and the functionals that price them.
//!
//! All constructors work on a canonical layering of the portfolio: risks are
//! sorted by ascending loading and risks sharing a loading are merged into one
//! block. A block's payout is split back onto its members in proportion to
//! their losses, so output columns are always in the caller's risk order.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::empirical::{self, EmpiricalVariable};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, BOX_EPS};
use crate::portfolio::{validate_alpha, validate_loadings, SampleMatrix};

/// Per-sample suffix sums: column `k` holds `X_k + ... + X_n`, and the extra
/// last column is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TailSums(Array2<f64>);

impl TailSums {
    pub fn n_levels(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn column(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        self.0.column(k)
    }

    /// Total loss `S` per sample.
    pub fn total(&self) -> ndarray::ArrayView1<'_, f64> {
        self.0.column(0)
    }
}

pub fn tail_sums(x: &SampleMatrix) -> TailSums {
    tail_sums_of(x.data())
}

fn tail_sums_of(data: &Array2<f64>) -> TailSums {
    let (m, n) = data.dim();
    let mut out = Array2::zeros((m, n + 1));
    for (row, mut tail) in data.rows().into_iter().zip(out.rows_mut()) {
        for k in (0..n).rev() {
            tail[k] = tail[k + 1] + row[k];
        }
    }
    TailSums(out)
}

/// Which risk measure a penalized objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "measure", rename_all = "snake_case")]
pub enum RiskMeasure {
    Variance,
    Cvar { alpha: f64 },
}

impl RiskMeasure {
    pub fn evaluate(&self, z: &EmpiricalVariable) -> f64 {
        match *self {
            RiskMeasure::Variance => empirical::variance(z),
            RiskMeasure::Cvar { alpha } => empirical::cvar_alpha(z, alpha),
        }
    }
}

/// Risks sharing one loading, merged for the closed forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub loading: f64,
    /// Original risk indices, ascending.
    pub members: Vec<usize>,
}

/// The share `theta` ceded on a block whose loading equals the CVaR level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieShare {
    pub risks: Vec<usize>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractParams {
    Variance { lambda: f64, sigma: f64 },
    Cvar { lambda: f64, alpha: f64, q: f64, ties: Vec<TieShare> },
    /// `coverage[s]` is the covered fraction of sample `s`; fractional values
    /// split that atom's probability into a covered and an uncovered copy.
    Var { c: f64, q: f64, coverage: Vec<f64> },
    /// A contract not produced by a closed form (oracle output, user input).
    Free,
}

/// A reinsurance contract evaluated on a sample matrix: `R[s][i]` is the
/// amount of risk `i` ceded in scenario `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contract {
    retained_payout: Array2<f64>,
    weights: Arc<[f64]>,
    params: ContractParams,
}

impl Contract {
    /// Wraps an arbitrary payout matrix after checking `0 <= R <= X`.
    pub fn from_payout(x: &SampleMatrix, payout: Array2<f64>) -> Result<Self> {
        let c = Contract { retained_payout: payout, weights: x.shared_weights(), params: ContractParams::Free };
        c.check_feasible(x)?;
        Ok(c)
    }

    pub fn zero(x: &SampleMatrix, params: ContractParams) -> Self {
        Contract { retained_payout: Array2::zeros(x.data().dim()), weights: x.shared_weights(), params }
    }

    pub fn payout(&self) -> &Array2<f64> {
        &self.retained_payout
    }

    pub fn params(&self) -> &ContractParams {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_zero(&self) -> bool {
        self.retained_payout.iter().all(|&r| r == 0.0)
    }

    /// Expected payout per risk.
    pub fn column_means(&self) -> Vec<f64> {
        self.retained_payout
            .columns()
            .into_iter()
            .map(|col| compensated_sum(col.iter().zip(self.weights.iter()).map(|(r, w)| r * w)))
            .collect()
    }

    pub fn check_feasible(&self, x: &SampleMatrix) -> Result<()> {
        if self.retained_payout.dim() != x.data().dim() {
            return Err(Error::Contract(format!(
                "payout is {:?}, samples are {:?}",
                self.retained_payout.dim(),
                x.data().dim()
            )));
        }
        for ((s, i), &r) in self.retained_payout.indexed_iter() {
            let xi = x.data()[(s, i)];
            if !(r >= -BOX_EPS && r <= xi + BOX_EPS) {
                return Err(Error::Contract(format!("R[{s}][{i}] = {r} outside [0, {xi}]")));
            }
        }
        Ok(())
    }

    /// Writes the per-sample payout columns `R1,...,Rn` (plus `coverage` for
    /// VaR contracts).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        use crate::numeric::format_sig17;
        let mut wtr = csv::Writer::from_writer(out);
        let coverage = match &self.params {
            ContractParams::Var { coverage, .. } => Some(coverage),
            _ => None,
        };
        let mut header: Vec<String> = (1..=self.retained_payout.ncols()).map(|i| format!("R{i}")).collect();
        if coverage.is_some() {
            header.push("coverage".into());
        }
        let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wtr.write_record(&header).map_err(to_io)?;
        let mut record = Vec::with_capacity(header.len());
        for (s, row) in self.retained_payout.rows().into_iter().enumerate() {
            record.clear();
            record.extend(row.iter().map(|&r| format_sig17(r)));
            if let Some(cov) = coverage {
                record.push(format_sig17(cov[s]));
            }
            wtr.write_record(&record).map_err(to_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The canonical view of a portfolio used by every closed form.
#[derive(Debug, Clone)]
pub struct Layering<'a> {
    x: &'a SampleMatrix,
    blocks: Vec<Block>,
    block_x: Array2<f64>,
    tails: TailSums,
}

impl<'a> Layering<'a> {
    pub fn new(x: &'a SampleMatrix, loadings: &[f64]) -> Result<Self> {
        validate_loadings(loadings)?;
        if loadings.len() != x.n_risks() {
            return Err(Error::validation(format!("{} loadings for {} risks", loadings.len(), x.n_risks())));
        }
        let mut order: Vec<usize> = (0..loadings.len()).collect();
        order.sort_by(|&a, &b| loadings[a].total_cmp(&loadings[b]).then(a.cmp(&b)));
        let mut blocks: Vec<Block> = Vec::new();
        for i in order {
            match blocks.last_mut() {
                Some(b) if b.loading == loadings[i] => b.members.push(i),
                _ => blocks.push(Block { loading: loadings[i], members: vec![i] }),
            }
        }
        let block_x = Array2::from_shape_fn((x.n_samples(), blocks.len()), |(s, k)| {
            blocks[k].members.iter().map(|&i| x.data()[(s, i)]).sum()
        });
        let tails = tail_sums_of(&block_x);
        Ok(Self { x, blocks, block_x, tails })
    }

    pub fn samples(&self) -> &'a SampleMatrix {
        self.x
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_loadings(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.loading).collect()
    }

    pub fn block_samples(&self) -> &Array2<f64> {
        &self.block_x
    }

    pub fn tails(&self) -> &TailSums {
        &self.tails
    }

    pub fn n_samples(&self) -> usize {
        self.block_x.nrows()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn weights(&self) -> &[f64] {
        self.x.weights()
    }

    /// Splits block payouts back onto the original risks.
    pub fn expand(&self, block_r: &Array2<f64>, params: ContractParams) -> Contract {
        let x = self.x.data();
        let mut out = Array2::zeros(x.dim());
        for (k, block) in self.blocks.iter().enumerate() {
            if let [i] = block.members[..] {
                for s in 0..x.nrows() {
                    out[(s, i)] = block_r[(s, k)].clamp(0.0, x[(s, i)]);
                }
                continue;
            }
            for s in 0..x.nrows() {
                let (rb, xb) = (block_r[(s, k)], self.block_x[(s, k)]);
                if rb <= 0.0 || xb <= 0.0 {
                    continue;
                }
                let share = (rb / xb).min(1.0);
                for &i in &block.members {
                    out[(s, i)] = (share * x[(s, i)]).min(x[(s, i)]);
                }
            }
        }
        Contract { retained_payout: out, weights: self.x.shared_weights(), params }
    }

    /// Retained total for block payouts.
    pub(crate) fn retained_from_blocks(&self, block_r: &Array2<f64>) -> EmpiricalVariable {
        let z = self
            .tails
            .total()
            .iter()
            .zip(block_r.rows())
            .map(|(s, row)| (s - row.sum()).max(0.0))
            .collect();
        EmpiricalVariable::from_parts(z, self.x.shared_weights())
    }

    /// Block payouts of the layered variance contract
    /// `R_k = (X_k + ... + X_n - beta_k / (2 lambda) - sigma)_+ ^ X_k`.
    fn variance_blocks(&self, lambda: f64, sigma: f64) -> Array2<f64> {
        let mut r = Array2::zeros(self.block_x.dim());
        if lambda == 0.0 {
            return r;
        }
        let thresholds: Vec<f64> = self.blocks.iter().map(|b| b.loading / (2.0 * lambda) + sigma).collect();
        for ((mut r_row, x_row), tail) in r.rows_mut().into_iter().zip(self.block_x.rows()).zip(self.tails.0.rows()) {
            for k in 0..thresholds.len() {
                r_row[k] = (tail[k] - thresholds[k]).max(0.0).min(x_row[k]);
            }
        }
        r
    }

    pub fn variance_contract(&self, lambda: f64, sigma: f64) -> Result<Contract> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Contract(format!("lambda must be nonnegative, got {lambda}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Contract(format!("sigma must be nonnegative, got {sigma}")));
        }
        Ok(self.expand(&self.variance_blocks(lambda, sigma), ContractParams::Variance { lambda, sigma }))
    }

    /// Retained total `Z_eta` under the layered contract with threshold `eta`.
    pub fn z_eta(&self, lambda: f64, eta: f64) -> EmpiricalVariable {
        self.retained_from_blocks(&self.variance_blocks(lambda, eta))
    }

    /// Classifies the CVaR level `K = lambda / (1 - alpha)` against the block
    /// loadings. A level within `1e-12` (relative) of a loading is snapped onto it.
    pub fn cvar_level(&self, lambda: f64, alpha: f64) -> CvarLevel {
        let k = lambda / (1.0 - alpha);
        match self.blocks.iter().position(|b| (k - b.loading).abs() <= 1e-12 * b.loading) {
            Some(tie) => CvarLevel { lambda, k: self.blocks[tie].loading, alpha },
            None => CvarLevel { lambda, k, alpha },
        }
    }

    /// The level sitting exactly on block `b`'s loading.
    pub fn cvar_level_at_block(&self, b: usize, alpha: f64) -> CvarLevel {
        let k = self.blocks[b].loading;
        CvarLevel { lambda: k * (1.0 - alpha), k, alpha }
    }

    /// Index of the block whose loading equals the level, if any.
    pub fn tied_block(&self, level: &CvarLevel) -> Option<usize> {
        self.blocks.iter().position(|b| b.loading == level.k)
    }

    /// CVaR-optimal block payouts: blocks cheaper than the level cede the
    /// layer above `q`, a tied block cedes `theta` of it, dearer blocks nothing.
    pub(crate) fn cvar_blocks(&self, level: &CvarLevel, q: f64, theta: &[f64]) -> Array2<f64> {
        let mut r = Array2::zeros(self.block_x.dim());
        let share: Vec<f64> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                if b.loading < level.k {
                    1.0
                } else if b.loading == level.k {
                    theta[k]
                } else {
                    0.0
                }
            })
            .collect();
        if share.iter().all(|&s| s == 0.0) {
            return r;
        }
        for ((mut r_row, x_row), tail) in r.rows_mut().into_iter().zip(self.block_x.rows()).zip(self.tails.0.rows()) {
            for k in 0..share.len() {
                if share[k] > 0.0 {
                    r_row[k] = share[k] * (tail[k] - q).max(0.0).min(x_row[k]);
                }
            }
        }
        r
    }

    /// `theta` is indexed by block; entries of untied blocks are ignored.
    pub fn cvar_contract_at(&self, level: &CvarLevel, q: f64, theta: &[f64]) -> Result<Contract> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::Contract(format!("q must be nonnegative, got {q}")));
        }
        if theta.len() != self.n_blocks() {
            return Err(Error::Contract(format!("{} theta entries for {} blocks", theta.len(), self.n_blocks())));
        }
        if let Some(t) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Contract(format!("theta {t} outside [0, 1]")));
        }
        let ties = self
            .tied_block(level)
            .map(|b| vec![TieShare { risks: self.blocks[b].members.clone(), theta: theta[b] }])
            .unwrap_or_default();
        let params = ContractParams::Cvar { lambda: level.lambda, alpha: level.alpha, q, ties };
        Ok(self.expand(&self.cvar_blocks(level, q, theta), params))
    }

    /// Cheapest per-sample layer bringing the retained total down to `c`:
    /// `phi_k = (X_k + ... + X_n - c)_+ ^ X_k`, in block space.
    pub fn phi_blocks(&self, c: f64) -> Array2<f64> {
        let mut phi = Array2::zeros(self.block_x.dim());
        for ((mut p, x_row), tail) in phi.rows_mut().into_iter().zip(self.block_x.rows()).zip(self.tails.0.rows()) {
            for k in 0..x_row.len() {
                p[k] = (tail[k] - c).max(0.0).min(x_row[k]);
            }
        }
        phi
    }

    /// Per-sample premium cost `beta . phi` of full layer coverage.
    pub fn phi_cost(&self, phi_blocks: &Array2<f64>) -> Vec<f64> {
        let loadings = self.block_loadings();
        phi_blocks.rows().into_iter().map(|row| row.iter().zip(&loadings).map(|(p, b)| p * b).sum()).collect()
    }

    pub fn var_contract(&self, c: f64, coverage: Vec<f64>) -> Result<Contract> {
        self.var_contract_with_q(c, f64::NAN, coverage)
    }

    pub(crate) fn var_contract_with_q(&self, c: f64, q: f64, coverage: Vec<f64>) -> Result<Contract> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::Contract(format!("c must be nonnegative, got {c}")));
        }
        if coverage.len() != self.n_samples() {
            return Err(Error::Contract(format!("{} coverage entries for {} samples", coverage.len(), self.n_samples())));
        }
        if let Some(f) = coverage.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Contract(format!("coverage {f} outside [0, 1]")));
        }
        let mut phi = self.phi_blocks(c);
        let cost = self.phi_cost(&phi);
        let mut atom: Option<f64> = None;
        for (s, &f) in coverage.iter().enumerate() {
            if f > 0.0 && f < 1.0 {
                match atom {
                    None => atom = Some(cost[s]),
                    Some(a) if (a - cost[s]).abs() <= 1e-12 * a.abs().max(1.0) => {}
                    Some(a) => {
                        return Err(Error::Contract(format!(
                            "fractional coverage on sample {s} with cost {} off the split atom at cost {a}",
                            cost[s]
                        )))
                    }
                }
            }
        }
        for (mut row, &f) in phi.rows_mut().into_iter().zip(&coverage) {
            row.mapv_inplace(|p| p * f);
        }
        let q = if q.is_nan() { atom.unwrap_or(f64::NAN) } else { q };
        Ok(self.expand(&phi, ContractParams::Var { c, q, coverage }))
    }
}

/// The CVaR penalty level: `lambda` together with `K = lambda / (1 - alpha)`.
/// `K` equals a block loading exactly when the level is tied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvarLevel {
    pub lambda: f64,
    pub k: f64,
    pub alpha: f64,
}

pub fn variance_contract(x: &SampleMatrix, loadings: &[f64], lambda: f64, sigma: f64) -> Result<Contract> {
    Layering::new(x, loadings)?.variance_contract(lambda, sigma)
}

pub fn z_eta(x: &SampleMatrix, loadings: &[f64], lambda: f64, eta: f64) -> Result<EmpiricalVariable> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Contract(format!("lambda must be positive, got {lambda}")));
    }
    Ok(Layering::new(x, loadings)?.z_eta(lambda, eta))
}

/// CVaR contract at penalty `lambda`. `theta` gives the ceded share for risks
/// whose loading equals `lambda / (1 - alpha)`, keyed by risk index; unlisted
/// tied risks default to 0.
pub fn cvar_contract(
    x: &SampleMatrix,
    loadings: &[f64],
    lambda: f64,
    alpha: f64,
    q: f64,
    theta: &[(usize, f64)],
) -> Result<Contract> {
    validate_alpha(alpha)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be nonnegative, got {lambda}")));
    }
    let layers = Layering::new(x, loadings)?;
    let mut block_theta = vec![0.0; layers.n_blocks()];
    for &(risk, t) in theta {
        let b = layers
            .blocks()
            .iter()
            .position(|b| b.members.contains(&risk))
            .ok_or_else(|| Error::Contract(format!("theta for unknown risk {risk}")))?;
        block_theta[b] = t;
    }
    layers.cvar_contract_at(&layers.cvar_level(lambda, alpha), q, &block_theta)
}

/// The layer map `phi` in the caller's risk order.
pub fn phi_map(x: &SampleMatrix, loadings: &[f64], c: f64) -> Result<Array2<f64>> {
    let layers = Layering::new(x, loadings)?;
    let phi = layers.phi_blocks(c);
    Ok(layers.expand(&phi, ContractParams::Free).retained_payout)
}

pub fn var_contract(x: &SampleMatrix, loadings: &[f64], c: f64, coverage: Vec<f64>) -> Result<Contract> {
    Layering::new(x, loadings)?.var_contract(c, coverage)
}

/// Expected-value premium loading `sum_i beta_i E[R_i]`.
pub fn premium(r: &Contract, loadings: &[f64]) -> f64 {
    compensated_sum(r.column_means().into_iter().zip(loadings).map(|(m, b)| m * b))
}

/// Retained total `Z = S - sum_i R_i`. Split VaR atoms appear as two atoms.
pub fn retained(x: &SampleMatrix, r: &Contract) -> Result<EmpiricalVariable> {
    r.check_feasible(x)?;
    let totals = x.totals();
    let ceded = r.retained_payout.rows().into_iter().map(|row| row.sum());
    let z: Vec<f64> = totals.iter().zip(ceded).map(|(s, c)| (s - c).max(0.0)).collect();
    if let ContractParams::Var { c, coverage, .. } = &r.params {
        if coverage.iter().any(|&f| f > 0.0 && f < 1.0) {
            let mut values = Vec::with_capacity(z.len() + 1);
            let mut weights = Vec::with_capacity(z.len() + 1);
            for (s, &f) in coverage.iter().enumerate() {
                let w = x.weights()[s];
                if f > 0.0 && f < 1.0 {
                    // the covered copy is brought down to c, the other keeps S
                    values.push(totals[s].min(*c));
                    weights.push(f * w);
                    values.push(totals[s]);
                    weights.push((1.0 - f) * w);
                } else {
                    values.push(z[s]);
                    weights.push(w);
                }
            }
            return Ok(EmpiricalVariable::from_parts(values, weights.into()));
        }
    }
    Ok(EmpiricalVariable::from_parts(z, x.shared_weights()))
}

/// `premium + lambda * rho(Z)`.
pub fn penalized_objective(
    x: &SampleMatrix,
    r: &Contract,
    loadings: &[f64],
    lambda: f64,
    measure: RiskMeasure,
) -> Result<f64> {
    let z = retained(x, r)?;
    Ok(premium(r, loadings) + lambda * measure.evaluate(&z))
}
