//! Matrix completion with nuclear-norm regularization for causal panel data.
//!
//! An `N x T` panel of outcomes is partially observed: cells belonging to
//! treated (unit, period) pairs are missing and must be imputed with their
//! untreated counterfactual. This crate provides
//!
//! * the panel data model and observation masks ([`panel`]),
//! * the soft-impute estimator with cross-validated penalty ([`soft_impute`]),
//! * extensions with covariates, propensity weights and AR(1) errors ([`covariate`]),
//! * the comparison estimators: DID, horizontal/vertical regressions,
//!   elastic-net variants and simplex-constrained synthetic control ([`baselines`]),
//! * numeric evaluators for the error-bound theory ([`theory`]),
//! * synthetic data, pseudo-treatment masks, RMSE comparisons and CSV/JSON I/O ([`harness`]).
//!
//! Unit and period indices are 0-based throughout the library. File formats
//! use arbitrary string labels, mapped to indices by first appearance.

pub mod baselines;
pub mod covariate;
pub mod error;
pub mod harness;
pub mod panel;
pub mod soft_impute;
pub mod theory;

pub use baselines::{impute, EstimatorSpec, Imputation, LambdaChoice, McnnmSpec};
pub use error::{Error, Result};
pub use panel::{norm, project_missing, project_observed, MaskStructure, NormKind, ObservationMask, PanelMatrix};
pub use soft_impute::{
    cross_validate, descent_audit, factorize, fit_mcnnm, lambda_max, shrink, CvConfig, CvOutcome, FactorPair,
    FitResult, McnnmConfig, SvdTriple,
};
pub use theory::{bound_lattice, run_lemma_suite, LatticeDirection, LemmaSuiteConfig};
