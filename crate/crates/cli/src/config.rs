use std::fs;
use std::path::{Path, PathBuf};

use definetti::solvers::{Measure, Mode, Tolerances};
use definetti::{DistributionSpec, Error, PortfolioSpec, Result, RiskSource};
use serde::{Deserialize, Serialize};

/// Output locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contract: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<PathBuf>,
}

/// One run: a portfolio plus the problem to solve on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub portfolio: PortfolioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Overrides `portfolio.alpha` when both are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: Outputs,
}

/// A validated problem statement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Problem {
    Penalized { measure: Measure, lambda: f64, alpha: Option<f64> },
    Constrained { measure: Measure, c: f64, alpha: Option<f64> },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("invalid config {}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    /// Makes relative sample paths relative to the config file's directory.
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.portfolio.risks {
            RiskSource::File { file } => fix(file),
            RiskSource::Parametric(specs) => {
                for spec in specs {
                    if let DistributionSpec::Empirical { path } = spec {
                        fix(path);
                    }
                }
            }
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha.or(self.portfolio.alpha)
    }

    pub fn use_samples(&mut self, file: PathBuf) {
        self.portfolio.risks = RiskSource::File { file };
    }

    /// Checks that exactly the multiplier or the bound matching the mode is
    /// present and that `alpha` is given when the measure needs it.
    pub fn problem(&self) -> Result<Problem> {
        let measure = self.measure.ok_or_else(|| Error::validation("measure is required (variance, cvar or var)"))?;
        let mode = self.mode.unwrap_or(if measure == Measure::Var { Mode::Constrained } else { Mode::Penalized });
        let alpha = match measure {
            Measure::Variance => None,
            Measure::Cvar | Measure::Var => {
                Some(self.alpha().ok_or_else(|| Error::validation(format!("alpha is required for measure {measure:?}")))?)
            }
        };
        match (mode, self.lambda, self.c) {
            (Mode::Penalized, _, _) if measure == Measure::Var => {
                Err(Error::validation("the VaR problem is only available in constrained mode"))
            }
            (Mode::Penalized, Some(lambda), None) => Ok(Problem::Penalized { measure, lambda, alpha }),
            (Mode::Constrained, None, Some(c)) => Ok(Problem::Constrained { measure, c, alpha }),
            (Mode::Penalized, _, _) => Err(Error::validation("penalized mode needs lambda and no c")),
            (Mode::Constrained, _, _) => Err(Error::validation("constrained mode needs c and no lambda")),
        }
    }
}
