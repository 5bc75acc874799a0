use nalgebra::DMatrix;

use super::proximal::{proximal_descent, proximal_path, SmoothLoss};
use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};
use crate::soft_impute::{cross_validate_with, shrink_matrix, CvConfig, CvOutcome, FitResult, McnnmConfig};

pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);

/// Estimated treatment probabilities, clipped away from 0 and 1.
#[derive(Clone, Debug)]
pub struct PropensityModel {
    pub e_hat: PanelMatrix,
    pub clip_bounds: (f64, f64),
}

impl PropensityModel {
    pub fn new(e_hat: PanelMatrix, clip_bounds: (f64, f64)) -> Result<Self> {
        check_clip(clip_bounds)?;
        let (lo, hi) = clip_bounds;
        let clipped = e_hat.as_matrix().map(|v| v.clamp(lo, hi));
        Ok(PropensityModel {
            e_hat: PanelMatrix::from_matrix_unchecked(clipped),
            clip_bounds,
        })
    }

    /// Odds `e / (1 - e)` per cell.
    pub fn weights(&self) -> DMatrix<f64> {
        self.e_hat.as_matrix().map(|e| e / (1.0 - e))
    }
}

fn check_clip((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= 0.5 && (0.5..1.0).contains(&hi)) {
        return Err(Error::InvalidArgument(format!(
            "clip bounds must satisfy 0 < lo <= 0.5 <= hi < 1, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// Low-rank propensity estimate from the fully observed treatment indicator:
/// `clip(shrink_{lambda N T / 2}(W))`.
pub fn estimate_propensity(w: &PanelMatrix, lambda: f64) -> Result<PropensityModel> {
    estimate_propensity_with(w, lambda, DEFAULT_CLIP)
}

pub fn estimate_propensity_with(w: &PanelMatrix, lambda: f64, clip_bounds: (f64, f64)) -> Result<PropensityModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if w.as_matrix().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("treatment indicator must be 0/1".into()));
    }
    let (n, t) = w.shape();
    let fitted = shrink_matrix(w.as_matrix(), lambda * (n * t) as f64 / 2.0).matrix;
    PropensityModel::new(PanelMatrix::from_matrix_unchecked(fitted), clip_bounds)
}

struct WeightedLoss<'a> {
    mask: &'a ObservationMask,
    weights: &'a DMatrix<f64>,
    w_max: f64,
}

impl<'a> WeightedLoss<'a> {
    fn new(mask: &'a ObservationMask, weights: &'a DMatrix<f64>) -> Self {
        let w_max = mask
            .observed_pairs()
            .iter()
            .map(|&(i, t)| weights[(i, t)])
            .fold(0.0, f64::max);
        WeightedLoss { mask, weights, w_max }
    }
}

impl SmoothLoss for WeightedLoss<'_> {
    fn value(&self, r: &DMatrix<f64>) -> f64 {
        let s: f64 = self
            .mask
            .observed_pairs()
            .iter()
            .map(|&(i, t)| self.weights[(i, t)] * r[(i, t)] * r[(i, t)])
            .sum();
        s / self.mask.n_observed() as f64
    }

    fn descent_direction(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        for &(i, t) in self.mask.observed_pairs() {
            out[(i, t)] = self.weights[(i, t)] * r[(i, t)];
        }
        out
    }

    fn curvature(&self) -> f64 {
        self.w_max
    }
}

/// Minimizes `(1/|O|) sum_O w_it (Y_it - L_it)^2 + lambda ||L||_*` with odds
/// weights `w = e / (1 - e)`, by proximal gradient started from `P_O(Y)`.
pub fn fit_weighted(
    y: &PanelMatrix,
    mask: &ObservationMask,
    propensity: &PropensityModel,
    cfg: &McnnmConfig,
) -> Result<FitResult> {
    propensity.e_hat.check_shape(mask.shape())?;
    let weights = propensity.weights();
    proximal_descent(y, mask, cfg, &WeightedLoss::new(mask, &weights), None)
}

/// Penalty selection for [`fit_weighted`]: the same folds as the unweighted
/// estimator, scored by odds-weighted holdout error.
pub fn cross_validate_weighted(
    y: &PanelMatrix,
    mask: &ObservationMask,
    propensity: &PropensityModel,
    cv: &CvConfig,
    cfg: &McnnmConfig,
) -> Result<CvOutcome> {
    cfg.validate()?;
    propensity.e_hat.check_shape(mask.shape())?;
    let weights = propensity.weights();
    let fold_cfg = cv.fold_config(cfg);
    cross_validate_with(
        y,
        mask,
        cv,
        |fold_mask, visit| {
            let loss = WeightedLoss::new(fold_mask, &weights);
            proximal_path(y, fold_mask, &cv.lambda_grid, &fold_cfg, &loss, |k, f| {
                visit(k, &f.estimate)
            })
            .map(|_| ())
        },
        |i, t| weights[(i, t)],
    )
}

/// Cross-validates the penalty, then walks the grid down to it on all cells.
pub fn fit_weighted_cv(
    y: &PanelMatrix,
    mask: &ObservationMask,
    propensity: &PropensityModel,
    cv: &CvConfig,
    cfg: &McnnmConfig,
) -> Result<(FitResult, CvOutcome)> {
    let outcome = cross_validate_weighted(y, mask, propensity, cv, cfg)?;
    let stop = cv
        .lambda_grid
        .iter()
        .position(|&l| l == outcome.lambda_star)
        .expect("selected lambda comes from the grid");
    let weights = propensity.weights();
    let loss = WeightedLoss::new(mask, &weights);
    let fit = proximal_path(y, mask, &cv.lambda_grid[..=stop], cfg, &loss, |_, _| {})?.expect("non-empty grid");
    Ok((fit, outcome))
}
