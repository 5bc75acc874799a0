use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_mcnnm_from, lambda_max, FitResult, McnnmConfig};
use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};

const DEFAULT_GRID_POINTS: usize = 30;
const DEFAULT_GRID_RATIO: f64 = 1e-4;
const DEFAULT_FOLD_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_folds: usize,
    /// Strictly descending, nonnegative.
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    /// Stopping tolerance for the fold fits; they use the looser of this and
    /// the fit tolerance. Holdout errors only need a few digits.
    #[serde(default = "default_fold_tolerance")]
    pub fold_tolerance: f64,
}

fn default_fold_tolerance() -> f64 {
    DEFAULT_FOLD_TOLERANCE
}

impl CvConfig {
    pub fn new(n_folds: usize, lambda_grid: Vec<f64>, seed: u64) -> Result<Self> {
        let cfg = CvConfig {
            n_folds,
            lambda_grid,
            seed,
            fold_tolerance: DEFAULT_FOLD_TOLERANCE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Five folds over [`default_lambda_grid`] anchored at `lambda_max(Y, O)`.
    pub fn with_default_grid(y: &PanelMatrix, mask: &ObservationMask, seed: u64) -> Result<Self> {
        Self::new(5, default_lambda_grid(lambda_max(y, mask)?), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds == 0 {
            return Err(Error::InvalidArgument("n_folds must be positive".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "lambda grid entries must be finite and >= 0".into(),
            ));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("lambda grid must be strictly descending".into()));
        }
        if !(self.fold_tolerance > 0.0) {
            return Err(Error::InvalidArgument("fold tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Fit settings for the fold paths.
    pub fn fold_config(&self, cfg: &McnnmConfig) -> McnnmConfig {
        McnnmConfig {
            tolerance: cfg.tolerance.max(self.fold_tolerance),
            ..cfg.clone()
        }
    }
}

/// 30 geometrically spaced values from `lambda_max` down to `1e-4 * lambda_max`, then 0.
pub fn default_lambda_grid(lambda_max: f64) -> Vec<f64> {
    if !(lambda_max > 0.0) {
        return vec![0.0];
    }
    let step = DEFAULT_GRID_RATIO.ln() / (DEFAULT_GRID_POINTS - 1) as f64;
    let mut grid: Vec<f64> = (0..DEFAULT_GRID_POINTS)
        .map(|k| lambda_max * (step * k as f64).exp())
        .collect();
    grid.push(0.0);
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_mse: f64,
    pub fold_mse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda_star: f64,
    pub table: Vec<CvRow>,
    /// `floor(|O|^2 / NT)`: observed cells kept for fitting in each fold.
    pub fold_size: usize,
    pub holdout_size: usize,
}

/// Runs `visit` on every fit along a descending grid, warm-starting each
/// penalty from the previous solution.
fn walk_path(
    y: &PanelMatrix,
    mask: &ObservationMask,
    grid: &[f64],
    cfg: &McnnmConfig,
    mut visit: impl FnMut(usize, &FitResult),
) -> Result<Option<FitResult>> {
    let mut previous: Option<FitResult> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let step_cfg = McnnmConfig { lambda, ..cfg.clone() };
        let fit = fit_mcnnm_from(y, mask, &step_cfg, previous.as_ref().map(|f| &f.estimate))?;
        visit(k, &fit);
        previous = Some(fit);
    }
    Ok(previous)
}

/// Fits every penalty of a descending grid with warm starts and returns all fits.
pub fn fit_mcnnm_path(
    y: &PanelMatrix,
    mask: &ObservationMask,
    grid: &[f64],
    cfg: &McnnmConfig,
) -> Result<Vec<FitResult>> {
    let mut fits = Vec::with_capacity(grid.len());
    walk_path(y, mask, grid, cfg, |_, f| fits.push(f.clone()))?;
    Ok(fits)
}

pub(crate) fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    rng
}

/// K-fold selection of the penalty.
///
/// Each fold keeps a uniform random subset of `floor(|O|^2 / NT)` observed
/// cells, fits the whole grid on it with warm starts, and scores the mean
/// squared error on the held-out observed cells. The penalty with the lowest
/// mean holdout error wins; ties go to the smaller penalty.
pub fn cross_validate(y: &PanelMatrix, mask: &ObservationMask, cv: &CvConfig, cfg: &McnnmConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    let fold_cfg = cv.fold_config(cfg);
    cross_validate_with(
        y,
        mask,
        cv,
        |fold_mask, visit| {
            walk_path(y, fold_mask, &cv.lambda_grid, &fold_cfg, |k, fit| {
                visit(k, &fit.estimate)
            })
            .map(|_| ())
        },
        |_, _| 1.0,
    )
}

/// Fold construction and scoring shared by the plain and weighted estimators.
/// `path` fits the whole grid on a fold mask and reports each estimate;
/// holdout errors are weighted by `weight(i, t)`.
pub(crate) fn cross_validate_with<P, W>(
    y: &PanelMatrix,
    mask: &ObservationMask,
    cv: &CvConfig,
    path: P,
    weight: W,
) -> Result<CvOutcome>
where
    P: Fn(&ObservationMask, &mut dyn FnMut(usize, &PanelMatrix)) -> Result<()> + Sync,
    W: Fn(usize, usize) -> f64 + Sync,
{
    cv.validate()?;
    mask.check_shape(y.shape())?;
    let (n, t) = mask.shape();
    let n_obs = mask.n_observed();
    if n_obs == 0 {
        return Err(Error::EmptyMask);
    }
    if mask.is_fully_observed() {
        return Err(Error::DegenerateCv(
            "panel is fully observed; the fold size equals |O| and nothing is held out".into(),
        ));
    }
    let fold_size = ((n_obs as u128 * n_obs as u128) / (n as u128 * t as u128)) as usize;
    if fold_size == 0 {
        return Err(Error::DegenerateCv(format!(
            "fold cardinality floor(|O|^2/NT) is 0 for |O| = {n_obs}"
        )));
    }
    let holdout_size = n_obs - fold_size;
    let pairs = mask.observed_pairs();

    let per_fold: Vec<Result<Vec<f64>>> = (0..cv.n_folds)
        .into_par_iter()
        .map(|fold| {
            let mut rng = fold_rng(cv.seed, fold);
            let mut keep = rand::seq::index::sample(&mut rng, n_obs, fold_size).into_vec();
            keep.sort_unstable();
            let mut in_fold = vec![false; n_obs];
            for &k in &keep {
                in_fold[k] = true;
            }
            let train: Vec<(usize, usize)> = keep.iter().map(|&k| pairs[k]).collect();
            let holdout: Vec<(usize, usize)> = (0..n_obs).filter(|&k| !in_fold[k]).map(|k| pairs[k]).collect();
            let fold_mask = ObservationMask::from_pairs(n, t, &train)?;

            let mut errors = vec![0.0; cv.lambda_grid.len()];
            path(&fold_mask, &mut |k, estimate| {
                let sse: f64 = holdout
                    .iter()
                    .map(|&(i, p)| weight(i, p) * (y.get(i, p) - estimate.get(i, p)).powi(2))
                    .sum();
                errors[k] = sse / holdout.len() as f64;
            })?;
            Ok(errors)
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;

    let table: Vec<CvRow> = cv
        .lambda_grid
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let fold_mse: Vec<f64> = per_fold.iter().map(|e| e[k]).collect();
            CvRow {
                lambda,
                mean_mse: fold_mse.iter().sum::<f64>() / fold_mse.len() as f64,
                fold_mse,
            }
        })
        .collect();

    // The grid is descending, so `<=` keeps the smallest lambda among ties.
    let mut best = 0;
    for (k, row) in table.iter().enumerate() {
        if row.mean_mse <= table[best].mean_mse {
            best = k;
        }
    }
    Ok(CvOutcome {
        lambda_star: table[best].lambda,
        table,
        fold_size,
        holdout_size,
    })
}

/// Cross-validates the penalty and refits on all observed cells, walking the
/// grid down to the selected penalty with warm starts.
pub fn fit_mcnnm_cv(
    y: &PanelMatrix,
    mask: &ObservationMask,
    cv: &CvConfig,
    cfg: &McnnmConfig,
) -> Result<(FitResult, CvOutcome)> {
    let outcome = cross_validate(y, mask, cv, cfg)?;
    let stop = cv
        .lambda_grid
        .iter()
        .position(|&l| l == outcome.lambda_star)
        .expect("selected lambda comes from the grid");
    let fit = walk_path(y, mask, &cv.lambda_grid[..=stop], cfg, |_, _| {})?.expect("non-empty grid");
    Ok((fit, outcome))
}
