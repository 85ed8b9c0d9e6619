//! Portfolios of loss samples: the weighted empirical law of the risk vector,
//! seeded Monte Carlo generation from parametric marginals, and CSV ingestion.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, format_sig17, PROB_EPS};

/// An `m x n` matrix of nonnegative losses (one row per scenario, one column
/// per risk) with scenario probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Array2<f64>,
    weights: Arc<[f64]>,
}

impl SampleMatrix {
    /// Builds a matrix with uniform weights `1/m`.
    pub fn uniform(data: Array2<f64>) -> Result<Self> {
        let m = data.nrows();
        if m == 0 {
            return Err(Error::data("sample matrix has no rows"));
        }
        Self::new(data, vec![1.0 / m as f64; m])
    }

    /// Builds a matrix with explicit weights; they must already sum to one.
    pub fn new(data: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let (m, n) = data.dim();
        if m == 0 || n == 0 {
            return Err(Error::data(format!("sample matrix must be nonempty, got {m}x{n}")));
        }
        if weights.len() != m {
            return Err(Error::data(format!("{} weights for {m} samples", weights.len())));
        }
        if let Some(((s, i), x)) = data.indexed_iter().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::data(format!("loss at sample {s}, risk {i} is {x}; losses must be finite and nonnegative")));
        }
        if let Some((s, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::data(format!("weight of sample {s} is {w}")));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > PROB_EPS {
            return Err(Error::data(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { data, weights: weights.into() })
    }

    /// Builds a matrix from unnormalized nonnegative weights.
    pub fn with_relative_weights(data: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let total = compensated_sum(weights.iter().copied());
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::data(format!("weights sum to {total}")));
        }
        Self::new(data, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_risks(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn shared_weights(&self) -> Arc<[f64]> {
        Arc::clone(&self.weights)
    }

    pub fn row(&self, s: usize) -> ArrayView1<'_, f64> {
        self.data.row(s)
    }

    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.column(i)
    }

    /// Total loss `S = sum_i X_i` per sample.
    pub fn totals(&self) -> Vec<f64> {
        self.data.rows().into_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }

    /// Writes the CSV format read by [`load_samples`]. A `weight` column is
    /// emitted only when weights are not uniform.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let weighted = !self.has_uniform_weights();
        let mut header: Vec<String> = (1..=self.n_risks()).map(|i| format!("X{i}")).collect();
        if weighted {
            header.push("weight".into());
        }
        wtr.write_record(&header).map_err(csv_io)?;
        let mut record = Vec::with_capacity(header.len());
        for (s, row) in self.data.rows().into_iter().enumerate() {
            record.clear();
            record.extend(row.iter().map(|&x| format_sig17(x)));
            if weighted {
                record.push(format_sig17(self.weights[s]));
            }
            wtr.write_record(&record).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// A parametric (or resampled) marginal law for one risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Gamma { shape: f64, rate: f64 },
    /// Density `h t^h (x + t)^-(h+1)` on `x >= 0`.
    ShiftedPareto { threshold: f64, tail_exponent: f64 },
    /// Bootstrap draws from the first column of a sample CSV.
    Empirical { path: PathBuf },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Gamma { shape, rate } => check_gamma(*shape, *rate),
            DistributionSpec::ShiftedPareto { threshold, tail_exponent } => check_pareto(*threshold, *tail_exponent),
            DistributionSpec::Empirical { .. } => Ok(()),
        }
    }

    /// `true` if the law has a finite second moment (needed by the variance measure).
    pub fn has_finite_variance(&self) -> bool {
        match self {
            DistributionSpec::ShiftedPareto { tail_exponent, .. } => *tail_exponent > 2.0,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskSource {
    /// Independent marginals, one per risk.
    Parametric(Vec<DistributionSpec>),
    /// A sample CSV; dependence between risks is whatever the file contains.
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub loadings: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    pub risks: RiskSource,
}

fn default_sample_count() -> usize {
    100_000
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<()> {
        validate_loadings(&self.loadings)?;
        if let Some(alpha) = self.alpha {
            validate_alpha(alpha)?;
        }
        match &self.risks {
            RiskSource::Parametric(dists) => {
                if self.sample_count == 0 {
                    return Err(Error::validation("sample_count must be positive"));
                }
                if dists.len() != self.loadings.len() {
                    return Err(Error::validation(format!(
                        "{} loadings for {} risks",
                        self.loadings.len(),
                        dists.len()
                    )));
                }
                dists.iter().try_for_each(DistributionSpec::validate)
            }
            RiskSource::File { .. } => Ok(()),
        }
    }
}

/// Loadings must be finite and strictly positive. A zero loading makes full
/// cession of that risk optimal, so it is rejected rather than special-cased.
pub fn validate_loadings(loadings: &[f64]) -> Result<()> {
    if loadings.is_empty() {
        return Err(Error::validation("at least one loading is required"));
    }
    for (i, &b) in loadings.iter().enumerate() {
        if b == 0.0 {
            return Err(Error::validation(format!(
                "loading of risk {} is 0; with a zero loading R = X is optimal for that risk, remove it from the portfolio",
                i + 1
            )));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::validation(format!("loading of risk {} is {b}; loadings must be positive", i + 1)));
        }
    }
    Ok(())
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_gamma(shape: f64, rate: f64) -> Result<()> {
    if shape.is_finite() && rate.is_finite() && shape > 0.0 && rate > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("gamma parameters must be positive, got shape={shape}, rate={rate}")))
    }
}

fn check_pareto(threshold: f64, tail_exponent: f64) -> Result<()> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::validation(format!("pareto threshold must be positive, got {threshold}")));
    }
    if !(tail_exponent.is_finite() && tail_exponent > 1.0) {
        return Err(Error::validation(format!("pareto tail exponent {tail_exponent} <= 1 gives an infinite mean")));
    }
    Ok(())
}

/// Generator for substream `stream` of master seed `seed`. Each risk column
/// draws from its own stream.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_gamma(shape: f64, rate: f64, m: usize, seed: u64) -> Result<Vec<f64>> {
    sample_gamma_with(shape, rate, m, &mut substream(seed, 0))
}

// rand_distr boosts shape < 1 from shape + 1 with a uniform power.
fn sample_gamma_with(shape: f64, rate: f64, m: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_gamma(shape, rate)?;
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::validation(e.to_string()))?;
    Ok((0..m).map(|_| dist.sample(rng)).collect())
}

/// Inverse CDF of the shifted Pareto law: `t ((1 - u)^(-1/h) - 1)`.
pub fn shifted_pareto_quantile(threshold: f64, tail_exponent: f64, u: f64) -> f64 {
    threshold * ((1.0 - u).powf(-1.0 / tail_exponent) - 1.0)
}

pub fn sample_shifted_pareto(threshold: f64, tail_exponent: f64, m: usize, seed: u64) -> Result<Vec<f64>> {
    sample_shifted_pareto_with(threshold, tail_exponent, m, &mut substream(seed, 0))
}

fn sample_shifted_pareto_with(threshold: f64, tail_exponent: f64, m: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_pareto(threshold, tail_exponent)?;
    Ok((0..m)
        .map(|_| shifted_pareto_quantile(threshold, tail_exponent, rng.random::<f64>()))
        .collect())
}

fn sample_empirical(path: &Path, m: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let source = load_samples(path)?;
    let column = source.column(0);
    let index = WeightedIndex::new(source.weights()).map_err(|e| Error::data(e.to_string()))?;
    Ok((0..m).map(|_| column[index.sample(rng)]).collect())
}

/// Reads a sample CSV: header `X1,...,Xn` plus an optional `weight` column.
pub fn load_samples(path: impl AsRef<Path>) -> Result<SampleMatrix> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display()))))?;
    read_samples(file, path)
}

pub fn read_samples<R: Read>(input: R, path: &Path) -> Result<SampleMatrix> {
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(Error::data(format!("{}: empty file", path.display())));
    }
    let weight_col = headers.iter().position(|h| h.eq_ignore_ascii_case("weight"));
    let n = headers.len() - usize::from(weight_col.is_some());
    if n == 0 {
        return Err(parse_err("no loss columns".into()));
    }

    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        for (col, field) in record.iter().enumerate() {
            let x: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("row {}: cannot parse {field:?}", line + 1)))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::data(format!(
                    "{}: row {}, column {}: value {x} is not a finite nonnegative number",
                    path.display(),
                    line + 1,
                    headers.get(col).unwrap_or("?")
                )));
            }
            if Some(col) == weight_col {
                weights.push(x);
            } else {
                values.push(x);
            }
        }
    }
    let m = values.len() / n;
    if m == 0 {
        return Err(Error::data(format!("{}: no samples", path.display())));
    }
    let data = Array2::from_shape_vec((m, n), values).map_err(|e| parse_err(e.to_string()))?;
    if weight_col.is_some() {
        SampleMatrix::with_relative_weights(data, weights)
    } else {
        SampleMatrix::uniform(data)
    }
}

/// Materializes the sample matrix described by `spec`. Parametric risks are
/// drawn independently, risk `i` from substream `i` of the master seed.
pub fn build_portfolio(spec: &PortfolioSpec) -> Result<SampleMatrix> {
    spec.validate()?;
    match &spec.risks {
        RiskSource::File { file } => {
            let x = load_samples(file)?;
            if x.n_risks() != spec.loadings.len() {
                return Err(Error::validation(format!(
                    "{} loadings for {} risks in {}",
                    spec.loadings.len(),
                    x.n_risks(),
                    file.display()
                )));
            }
            Ok(x)
        }
        RiskSource::Parametric(dists) => {
            let m = spec.sample_count;
            let columns: Vec<Vec<f64>> = dists
                .par_iter()
                .enumerate()
                .map(|(i, dist)| {
                    let mut rng = substream(spec.seed, i as u64);
                    match dist {
                        DistributionSpec::Gamma { shape, rate } => sample_gamma_with(*shape, *rate, m, &mut rng),
                        DistributionSpec::ShiftedPareto { threshold, tail_exponent } => {
                            sample_shifted_pareto_with(*threshold, *tail_exponent, m, &mut rng)
                        }
                        DistributionSpec::Empirical { path } => sample_empirical(path, m, &mut rng),
                    }
                })
                .collect::<Result<_>>()?;
            let data = Array2::from_shape_fn((m, columns.len()), |(s, i)| columns[i][s]);
            SampleMatrix::uniform(data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
        (mean, var)
    }

    fn parse(text: &str) -> Result<SampleMatrix> {
        read_samples(text.as_bytes(), Path::new("inline.csv"))
    }

    #[test]
    fn gamma_half_half_has_unit_mean_and_variance_two() {
        let xs = sample_gamma(0.5, 0.5, 1_000_000, 7).unwrap();
        let (mean, var) = moments(&xs);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn gamma_moments_match_closed_form() {
        let xs = sample_gamma(2.0, 4.0, 100_000, 11).unwrap();
        let (mean, var) = moments(&xs);
        assert!((mean - 0.5).abs() <= 5.0 * (0.125f64 / 1e5).sqrt());
        assert!((var - 0.125).abs() < 0.005, "var {var}");
    }

    #[test]
    fn gamma_single_draw_is_reproducible() {
        let a = sample_gamma(1.0, 1.0, 1, 99).unwrap();
        let b = sample_gamma(1.0, 1.0, 1, 99).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert!(a[0] > 0.0);
    }

    #[test]
    fn gamma_rejects_nonpositive_parameters() {
        assert!(matches!(sample_gamma(0.0, 1.0, 3, 1), Err(Error::Validation(_))));
        assert!(matches!(sample_gamma(1.0, -1.0, 3, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn pareto_quantile_edges() {
        assert_eq!(shifted_pareto_quantile(3.0, 4.0, 0.0), 0.0);
        let u = 1.0 - 0.75f64.powi(4);
        assert!((shifted_pareto_quantile(3.0, 4.0, u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pareto_example_moments() {
        let xs = sample_shifted_pareto(3.0, 4.0, 1_000_000, 3).unwrap();
        let (mean, var) = moments(&xs);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn pareto_ecdf_within_dkw_band() {
        let m = 200_000;
        let mut xs = sample_shifted_pareto(3.0, 4.0, m, 5).unwrap();
        xs.sort_by(f64::total_cmp);
        let band = ((2.0f64 / 1e-3).ln() / (2.0 * m as f64)).sqrt();
        for x in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let ecdf = xs.partition_point(|&v| v <= x) as f64 / m as f64;
            let cdf = 1.0 - (3.0 / (x + 3.0)).powi(4);
            assert!((ecdf - cdf).abs() <= band, "x={x}: {ecdf} vs {cdf}");
        }
    }

    #[test]
    fn pareto_rejects_infinite_mean() {
        assert!(matches!(sample_shifted_pareto(3.0, 1.0, 3, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_uniform_weights() {
        let x = parse("X1\n0\n2\n").unwrap();
        assert_eq!((x.n_samples(), x.n_risks()), (2, 1));
        assert_eq!(x.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn csv_explicit_weights() {
        let x = parse("X1,X2,weight\n1,2,0.25\n3,4,0.75\n").unwrap();
        assert_eq!(x.n_risks(), 2);
        assert_eq!(x.weights(), &[0.25, 0.75]);
        assert_eq!(x.row(1).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn csv_renormalizes_weights() {
        let x = parse("X1,weight\n1,1\n3,3\n").unwrap();
        assert_eq!(x.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn csv_rejects_negative_ragged_and_empty() {
        assert!(matches!(parse("X1\n0\n-1\n"), Err(Error::Data(_))));
        assert!(matches!(parse("X1,X2\n0,1\n2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse(""), Err(Error::Data(_))));
        assert!(matches!(parse("X1\n"), Err(Error::Data(_))));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let x = SampleMatrix::with_relative_weights(array![[0.1, 1.0 / 3.0], [2.0, 1e-17]], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        let back = read_samples(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn zero_loading_is_rejected_with_reason() {
        let err = validate_loadings(&[0.1, 0.0]).unwrap_err().to_string();
        assert!(err.contains("R = X"), "{err}");
        assert!(validate_loadings(&[0.1, 0.1]).is_ok());
    }

    fn example_spec(m: usize) -> PortfolioSpec {
        PortfolioSpec {
            loadings: vec![0.1, 0.25],
            alpha: Some(0.9),
            seed: 2024,
            sample_count: m,
            risks: RiskSource::Parametric(vec![
                DistributionSpec::Gamma { shape: 0.5, rate: 0.5 },
                DistributionSpec::ShiftedPareto { threshold: 3.0, tail_exponent: 4.0 },
            ]),
        }
    }

    #[test]
    fn build_is_bitwise_reproducible() {
        let a = build_portfolio(&example_spec(10_000)).unwrap();
        let b = build_portfolio(&example_spec(10_000)).unwrap();
        assert_eq!(a.data().shape(), &[10_000, 2]);
        assert!(a.data().iter().zip(b.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn columns_use_distinct_substreams() {
        let mut spec = example_spec(1000);
        spec.risks = RiskSource::Parametric(vec![DistributionSpec::Gamma { shape: 1.0, rate: 1.0 }; 2]);
        let x = build_portfolio(&spec).unwrap();
        assert_ne!(x.column(0), x.column(1));
    }

    #[test]
    fn file_source_matches_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "X1,X2\n1,2\n3,4\n").unwrap();
        let spec = PortfolioSpec { risks: RiskSource::File { file: path.clone() }, ..example_spec(1) };
        assert_eq!(build_portfolio(&spec).unwrap(), load_samples(&path).unwrap());
    }

    #[test]
    fn spec_json_shapes() {
        let spec: PortfolioSpec = serde_json::from_str(
            r#"{"loadings":[0.1,0.25],"alpha":0.9,"seed":1,"sample_count":10,
                "risks":[{"kind":"gamma","shape":0.5,"rate":0.5},
                         {"kind":"shifted_pareto","threshold":3,"tail_exponent":4}]}"#,
        )
        .unwrap();
        assert_eq!(spec, PortfolioSpec { seed: 1, sample_count: 10, ..example_spec(0) });
        let spec: PortfolioSpec = serde_json::from_str(r#"{"loadings":[0.1],"risks":{"file":"a.csv"}}"#).unwrap();
        assert_eq!(spec.risks, RiskSource::File { file: "a.csv".into() });
    }

    #[test]
    fn zero_sample_count_is_invalid() {
        assert!(matches!(build_portfolio(&example_spec(0)), Err(Error::Validation(_))));
    }
}
