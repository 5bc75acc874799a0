//! Nuclear-norm regularized matrix completion (MC-NNM).
//!
//! The estimator minimizes
//!
//! ```text
//! (1/|O|) * ||P_O(Y - L)||_F^2 + lambda * ||L||_*
//! ```
//!
//! by the soft-impute fixed-point iteration
//! `L_{k+1} = shrink_{lambda |O| / 2}(P_O(Y) + P_O^perp(L_k))`, started from
//! `L_1 = P_O(Y)`. Each step minimizes a majorizer of the objective, so the
//! objective trace never increases.

mod cv;
mod factor;
mod svd;

pub use cv::{cross_validate, default_lambda_grid, fit_mcnnm_cv, fit_mcnnm_path, CvConfig, CvOutcome, CvRow};
pub use factor::{factorize, FactorPair};
pub use svd::{shrink, SvdTriple};

pub(crate) use cv::cross_validate_with;
pub(crate) use svd::shrink_matrix;

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{masked, numerical_rank, singular_values, ObservationMask, PanelMatrix};

/// Absolute slack allowed when checking that an objective trace never increases.
pub const DESCENT_SLACK: f64 = 1e-10;

static FITS_AUDITED: AtomicUsize = AtomicUsize::new(0);
static DESCENT_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide count of iterative fits whose objective trace was checked
/// for monotone descent, and of those that failed the check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DescentAudit {
    pub fits: usize,
    pub violations: usize,
}

pub fn descent_audit() -> DescentAudit {
    DescentAudit {
        fits: FITS_AUDITED.load(Ordering::SeqCst),
        violations: DESCENT_VIOLATIONS.load(Ordering::SeqCst),
    }
}

/// Records one fit's trace in the audit; false if it ever rose by more than `slack`.
pub(crate) fn audit_trace(trace: &[f64], slack: f64) -> bool {
    FITS_AUDITED.fetch_add(1, Ordering::SeqCst);
    let ok = is_nonincreasing(trace, slack);
    if !ok {
        DESCENT_VIOLATIONS.fetch_add(1, Ordering::SeqCst);
        log::error!("objective increased along an iterative fit");
    }
    ok
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McnnmConfig {
    /// Nuclear-norm penalty `lambda`.
    pub lambda: f64,
    /// Stop once `||L_{k+1} - L_k||_F / max(1, ||L_k||_F)` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Optional bound `L_max`: final entries are clamped to `[-L_max, L_max]`.
    pub clip_max: Option<f64>,
}

impl Default for McnnmConfig {
    fn default() -> Self {
        McnnmConfig {
            lambda: 0.0,
            tolerance: 1e-6,
            max_iterations: 500,
            clip_max: None,
        }
    }
}

impl McnnmConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        McnnmConfig {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if let Some(c) = self.clip_max {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("clip_max must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub estimate: PanelMatrix,
    pub effective_rank: usize,
    /// Objective value at the starting point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub lambda_used: f64,
}

/// `(1/|O|) ||P_O(Y - L)||_F^2 + lambda * nuclear`.
pub(crate) fn objective(y: &DMatrix<f64>, l: &DMatrix<f64>, mask: &ObservationMask, lambda: f64, nuclear: f64) -> f64 {
    let fit: f64 = mask
        .observed_pairs()
        .iter()
        .map(|&(i, t)| (y[(i, t)] - l[(i, t)]).powi(2))
        .sum();
    fit / mask.n_observed() as f64 + lambda * nuclear
}

pub fn is_nonincreasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Smallest penalty whose solution is the zero matrix: `2 sigma_1(P_O(Y)) / |O|`.
///
/// Returns 0 (with a warning) when the observed data are all zero.
pub fn lambda_max(y: &PanelMatrix, mask: &ObservationMask) -> Result<f64> {
    mask.check_shape(y.shape())?;
    if mask.n_observed() == 0 {
        return Err(Error::EmptyMask);
    }
    let top = singular_values(&masked(y.as_matrix(), mask, true))[0];
    if top == 0.0 {
        log::warn!("observed outcomes are all zero; lambda_max is degenerate");
        return Ok(0.0);
    }
    Ok(2.0 * top / mask.n_observed() as f64)
}

/// Fits MC-NNM at a fixed penalty, starting from `P_O(Y)`.
pub fn fit_mcnnm(y: &PanelMatrix, mask: &ObservationMask, cfg: &McnnmConfig) -> Result<FitResult> {
    fit_mcnnm_from(y, mask, cfg, None)
}

/// Fits MC-NNM starting from `warm_start` when given (its observed entries
/// are irrelevant after the first step), otherwise from `P_O(Y)`.
pub fn fit_mcnnm_from(
    y: &PanelMatrix,
    mask: &ObservationMask,
    cfg: &McnnmConfig,
    warm_start: Option<&PanelMatrix>,
) -> Result<FitResult> {
    cfg.validate()?;
    mask.check_shape(y.shape())?;
    if mask.n_observed() == 0 {
        return Err(Error::EmptyMask);
    }
    let y = y.as_matrix();
    let observed_y = masked(y, mask, true);
    let mut current = match warm_start {
        Some(w) => {
            w.check_shape(mask.shape())?;
            w.as_matrix().clone()
        }
        None => observed_y.clone(),
    };
    let threshold = cfg.lambda * mask.n_observed() as f64 / 2.0;

    let start_nuclear: f64 = singular_values(&current).iter().sum();
    let mut trace = vec![objective(y, &current, mask, cfg.lambda, start_nuclear)];
    let mut spectrum = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut filled = current.clone();
        for &(i, t) in mask.observed_pairs() {
            filled[(i, t)] = y[(i, t)];
        }
        let next = shrink_matrix(&filled, threshold);
        trace.push(objective(
            y,
            &next.matrix,
            mask,
            cfg.lambda,
            next.singular_values.iter().sum(),
        ));
        let change = (&next.matrix - &current).norm() / current.norm().max(1.0);
        current = next.matrix;
        spectrum = next.singular_values;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let descended = audit_trace(&trace, DESCENT_SLACK);
    debug_assert!(descended, "soft-impute objective increased: {trace:?}");

    let mut effective_rank = numerical_rank(&spectrum);
    if let Some(bound) = cfg.clip_max {
        current.apply(|v| *v = v.clamp(-bound, bound));
        effective_rank = numerical_rank(&singular_values(&current));
    }

    Ok(FitResult {
        estimate: PanelMatrix::from_matrix_unchecked(current),
        effective_rank,
        objective_trace: trace,
        iterations_used: iterations,
        converged,
        lambda_used: cfg.lambda,
    })
}
