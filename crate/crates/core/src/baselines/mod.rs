//! Comparison estimators for the counterfactual cells: two-way fixed effects,
//! horizontal and vertical regressions (plain and elastic-net), synthetic
//! control with simplex weights, and a uniform [`impute`] entry point that
//! also dispatches to the nuclear-norm estimator.

mod did;
mod elastic_net;
mod regression;
mod synthetic_control;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use did::{fit_did, DidFit};
pub use elastic_net::{
    en_lambda_max, fit_elastic_net, fit_elastic_net_with, kkt_residual, select_lambda_cv, ElasticNetFit, EnConfig,
    EnOptions,
};
pub use regression::{
    fit_horizontal, fit_hr_en, fit_sc_adh, fit_vertical, fit_vt_en, ols_with_intercept, RegressionFit, RegressionGroup,
    MAX_CONDITION,
};
pub use synthetic_control::{fit_simplex_weights, project_simplex, SimplexFit};

use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};
use crate::soft_impute::{fit_mcnnm, fit_mcnnm_cv, lambda_max, CvConfig, CvOutcome, McnnmConfig};

/// Linear prediction rule `intercept + coefficients . x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// How the nuclear-norm penalty is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    /// K-fold cross-validation over the default grid.
    Auto,
    Fixed(f64),
    /// A multiple of the smallest penalty that zeroes the estimate.
    MaxScaled(f64),
}

impl FromStr for LambdaChoice {
    type Err = Error;

    /// Accepts `auto`, a number, or `max-scaled:<factor>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || {
            Error::InvalidArgument(format!(
                "invalid lambda `{s}`: expected auto, a number or max-scaled:<f>"
            ))
        };
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaChoice::Auto);
        }
        let (value, scaled) = match s.strip_prefix("max-scaled:") {
            Some(rest) => (rest, true),
            None => (s, false),
        };
        let v: f64 = value.parse().map_err(|_| bad())?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(bad());
        }
        Ok(if scaled {
            LambdaChoice::MaxScaled(v)
        } else {
            LambdaChoice::Fixed(v)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McnnmSpec {
    pub lambda: LambdaChoice,
    pub n_folds: usize,
    pub seed: u64,
    pub fit: McnnmConfig,
}

impl Default for McnnmSpec {
    fn default() -> Self {
        McnnmSpec {
            lambda: LambdaChoice::Auto,
            n_folds: 5,
            seed: 0,
            fit: McnnmConfig::default(),
        }
    }
}

/// An estimator together with its tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Did,
    Hr,
    Vt,
    HrEn(EnConfig),
    VtEn(EnConfig),
    ScAdh,
    McNnm(McnnmSpec),
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Did => "did",
            EstimatorSpec::Hr => "hr",
            EstimatorSpec::Vt => "vt",
            EstimatorSpec::HrEn(_) => "hr-en",
            EstimatorSpec::VtEn(_) => "vt-en",
            EstimatorSpec::ScAdh => "sc-adh",
            EstimatorSpec::McNnm(_) => "mc-nnm",
        }
    }

    /// Every estimator with default tuning, in reporting order.
    pub fn all_defaults() -> Vec<EstimatorSpec> {
        ["did", "hr", "vt", "hr-en", "vt-en", "sc-adh", "mc-nnm"]
            .iter()
            .map(|s| s.parse().expect("known estimator name"))
            .collect()
    }

    /// Sets the seed used by internal cross-validation, where there is one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            EstimatorSpec::HrEn(c) | EstimatorSpec::VtEn(c) => c.seed = seed,
            EstimatorSpec::McNnm(m) => m.seed = seed,
            _ => {}
        }
        self
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "did" => EstimatorSpec::Did,
            "hr" => EstimatorSpec::Hr,
            "vt" => EstimatorSpec::Vt,
            "hr-en" => EstimatorSpec::HrEn(EnConfig::default()),
            "vt-en" => EstimatorSpec::VtEn(EnConfig::default()),
            "sc-adh" | "sc" => EstimatorSpec::ScAdh,
            "mc-nnm" | "mcnnm" => EstimatorSpec::McNnm(McnnmSpec::default()),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown estimator `{s}` (expected did, hr, vt, hr-en, vt-en, sc-adh or mc-nnm)"
                )))
            }
        })
    }
}

/// Completed panel from one estimator. Observed cells equal the input.
#[derive(Clone, Debug)]
pub struct Imputation {
    pub estimator: &'static str,
    pub imputed: PanelMatrix,
    pub lambda: Option<f64>,
    pub effective_rank: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub cv: Option<CvOutcome>,
}

impl Imputation {
    fn plain(estimator: &'static str, imputed: PanelMatrix) -> Self {
        Imputation {
            estimator,
            imputed,
            lambda: None,
            effective_rank: None,
            iterations: None,
            converged: None,
            cv: None,
        }
    }
}

fn restore_observed(estimate: &PanelMatrix, y: &PanelMatrix, mask: &ObservationMask) -> Result<PanelMatrix> {
    let (n, t) = y.shape();
    PanelMatrix::from_fn(n, t, |i, p| {
        if mask.is_observed(i, p) {
            y.get(i, p)
        } else {
            estimate.get(i, p)
        }
    })
}

/// Imputes every missing cell of `y` with the given estimator.
pub fn impute(spec: &EstimatorSpec, y: &PanelMatrix, mask: &ObservationMask) -> Result<Imputation> {
    mask.check_shape(y.shape())?;
    let name = spec.name();
    match spec {
        EstimatorSpec::Did => Ok(Imputation::plain(name, fit_did(y, mask)?.imputed)),
        EstimatorSpec::Hr => Ok(Imputation::plain(name, fit_horizontal(y, mask)?.imputed)),
        EstimatorSpec::Vt => Ok(Imputation::plain(name, fit_vertical(y, mask)?.imputed)),
        EstimatorSpec::HrEn(c) => Ok(Imputation::plain(name, fit_hr_en(y, mask, c)?.imputed)),
        EstimatorSpec::VtEn(c) => Ok(Imputation::plain(name, fit_vt_en(y, mask, c)?.imputed)),
        EstimatorSpec::ScAdh => Ok(Imputation::plain(name, fit_sc_adh(y, mask)?.imputed)),
        EstimatorSpec::McNnm(m) => {
            let (fit, cv) = match m.lambda {
                LambdaChoice::Auto => {
                    let mut cfg = CvConfig::with_default_grid(y, mask, m.seed)?;
                    cfg.n_folds = m.n_folds;
                    let (fit, cv) = fit_mcnnm_cv(y, mask, &cfg, &m.fit)?;
                    (fit, Some(cv))
                }
                LambdaChoice::Fixed(l) => (fit_mcnnm(y, mask, &McnnmConfig { lambda: l, ..m.fit })?, None),
                LambdaChoice::MaxScaled(f) => {
                    let l = f * lambda_max(y, mask)?;
                    (fit_mcnnm(y, mask, &McnnmConfig { lambda: l, ..m.fit })?, None)
                }
            };
            Ok(Imputation {
                estimator: name,
                imputed: restore_observed(&fit.estimate, y, mask)?,
                lambda: Some(fit.lambda_used),
                effective_rank: Some(fit.effective_rank),
                iterations: Some(fit.iterations_used),
                converged: Some(fit.converged),
                cv,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_round_trip() {
        for spec in EstimatorSpec::all_defaults() {
            let parsed: EstimatorSpec = spec.name().parse().unwrap();
            assert_eq!(parsed, spec);
        }
        assert_eq!("HR_EN".parse::<EstimatorSpec>().unwrap().name(), "hr-en");
        assert!("lasso".parse::<EstimatorSpec>().is_err());
    }

    #[test]
    fn lambda_choice_parsing() {
        assert_eq!("auto".parse::<LambdaChoice>().unwrap(), LambdaChoice::Auto);
        assert_eq!("0.25".parse::<LambdaChoice>().unwrap(), LambdaChoice::Fixed(0.25));
        assert_eq!(
            "max-scaled:0.1".parse::<LambdaChoice>().unwrap(),
            LambdaChoice::MaxScaled(0.1)
        );
        assert!("-1".parse::<LambdaChoice>().is_err());
        assert!("max-scaled:x".parse::<LambdaChoice>().is_err());
    }

    #[test]
    fn every_estimator_keeps_observed_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let y = PanelMatrix::from_fn(12, 8, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let mask = ObservationMask::block(12, 8, 6, &[10, 11]).unwrap();
        for spec in EstimatorSpec::all_defaults() {
            let out = match impute(&spec, &y, &mask) {
                // plain vertical OLS needs more pre-periods than donors
                Err(Error::IllPosed(_)) if spec == EstimatorSpec::Vt => continue,
                other => other.unwrap(),
            };
            for &(i, t) in mask.observed_pairs() {
                assert_eq!(out.imputed.get(i, t), y.get(i, t), "{}", spec.name());
            }
        }
    }

    #[test]
    fn mcnnm_variants_report_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let y = PanelMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let mask = ObservationMask::block(10, 10, 7, &[8, 9]).unwrap();
        let top = lambda_max(&y, &mask).unwrap();
        let spec = EstimatorSpec::McNnm(McnnmSpec {
            lambda: LambdaChoice::MaxScaled(2.0),
            ..McnnmSpec::default()
        });
        let out = impute(&spec, &y, &mask).unwrap();
        assert!((out.lambda.unwrap() - 2.0 * top).abs() < 1e-12);
        assert_eq!(out.effective_rank, Some(0));
        let auto = impute(&EstimatorSpec::McNnm(McnnmSpec::default()), &y, &mask).unwrap();
        assert!(auto.cv.is_some());
    }
}
