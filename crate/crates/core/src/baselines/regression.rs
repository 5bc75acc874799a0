use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::elastic_net::{fit_elastic_net, select_lambda_cv, EnConfig};
use super::synthetic_control::fit_simplex_weights;
use super::Weights;
use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};
use crate::soft_impute::SvdTriple;

/// Condition number of `[1 | X]` above which least squares is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// One fitted regression and the missing cells it imputes.
///
/// In a horizontal fit `target` and `features` are periods while `training`
/// and `predicted` are units. A vertical fit swaps the roles: `target` is the
/// treated unit, `features` are donor units, `training` and `predicted` are
/// periods.
#[derive(Clone, Debug)]
pub struct RegressionGroup {
    pub target: usize,
    pub features: Vec<usize>,
    pub training: Vec<usize>,
    pub predicted: Vec<usize>,
    pub weights: Weights,
}

#[derive(Clone, Debug)]
pub struct RegressionFit {
    /// Observed cells unchanged, missing cells predicted.
    pub imputed: PanelMatrix,
    pub groups: Vec<RegressionGroup>,
}

/// Runs one regression per (observed-period pattern, missing period): the
/// missing period is regressed on the pattern's periods over every unit that
/// is observed on all of them.
fn row_regressions<S>(
    y: &DMatrix<f64>,
    mask: &ObservationMask,
    solve: S,
) -> Result<(DMatrix<f64>, Vec<RegressionGroup>)>
where
    S: Fn(&DMatrix<f64>, &DVector<f64>) -> Result<Weights> + Sync,
{
    let observed: Vec<Vec<usize>> = (0..mask.n_units()).map(|i| mask.observed_periods_of(i)).collect();
    let mut pending: BTreeMap<(&[usize], usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in mask.missing_pairs() {
        pending.entry((&observed[i], t)).or_default().push(i);
    }
    let pending: Vec<_> = pending.into_iter().collect();

    let groups: Vec<RegressionGroup> = pending
        .into_par_iter()
        .map(|((features, target), predicted)| {
            let training: Vec<usize> = (0..mask.n_units())
                .filter(|&r| mask.is_observed(r, target) && features.iter().all(|&f| mask.is_observed(r, f)))
                .collect();
            if training.is_empty() {
                return Err(Error::Infeasible(format!(
                    "no complete training row for target column {target} on {} predictor columns",
                    features.len()
                )));
            }
            let x = y.select_rows(&training).select_columns(features);
            let z = y.column(target).select_rows(&training);
            let weights = solve(&x, &z)?;
            Ok(RegressionGroup {
                target,
                features: features.to_vec(),
                training,
                predicted,
                weights,
            })
        })
        .collect::<Result<_>>()?;

    let mut imputed = y.clone();
    for g in &groups {
        for &r in &g.predicted {
            imputed[(r, g.target)] = g.weights.intercept
                + g.features
                    .iter()
                    .zip(&g.weights.coefficients)
                    .map(|(&f, w)| w * y[(r, f)])
                    .sum::<f64>();
        }
    }
    Ok((imputed, groups))
}

fn horizontal_with<S>(y: &PanelMatrix, mask: &ObservationMask, solve: S) -> Result<RegressionFit>
where
    S: Fn(&DMatrix<f64>, &DVector<f64>) -> Result<Weights> + Sync,
{
    mask.check_shape(y.shape())?;
    let (imputed, groups) = row_regressions(y.as_matrix(), mask, solve)?;
    Ok(RegressionFit {
        imputed: PanelMatrix::new(imputed)?,
        groups,
    })
}

fn vertical_with<S>(y: &PanelMatrix, mask: &ObservationMask, solve: S) -> Result<RegressionFit>
where
    S: Fn(&DMatrix<f64>, &DVector<f64>) -> Result<Weights> + Sync,
{
    mask.check_shape(y.shape())?;
    let (imputed, groups) = row_regressions(&y.as_matrix().transpose(), &mask.transpose(), solve)?;
    Ok(RegressionFit {
        imputed: PanelMatrix::new(imputed.transpose())?,
        groups,
    })
}

/// Least squares with intercept. Refuses underdetermined or numerically
/// collinear designs instead of pseudo-inverting.
pub fn ols_with_intercept(x: &DMatrix<f64>, z: &DVector<f64>, fallback: &str) -> Result<Weights> {
    let (n, p) = x.shape();
    if n < p + 1 {
        return Err(Error::IllPosed(format!(
            "{n} training observations for {p} regressors plus intercept; least squares is singular, use {fallback}"
        )));
    }
    let svd = SvdTriple::compute(&x.clone().insert_column(0, 1.0));
    let top = svd.singular_values[0];
    let bottom = svd.singular_values[p];
    if !(bottom > 0.0 && top / bottom <= MAX_CONDITION) {
        return Err(Error::IllPosed(format!(
            "design is collinear (condition number {:.3e}); use {fallback}",
            top / bottom
        )));
    }
    let scaled = DVector::from_fn(p + 1, |k, _| svd.left.column(k).dot(z) / svd.singular_values[k]);
    let beta = &svd.right * scaled;
    Ok(Weights {
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
    })
}

fn elastic_net_solver(cfg: &EnConfig) -> impl Fn(&DMatrix<f64>, &DVector<f64>) -> Result<Weights> + Sync + '_ {
    move |x, z| {
        let lambda = match cfg.lambda {
            Some(l) => l,
            None => select_lambda_cv(x, z, cfg)?,
        };
        Ok(fit_elastic_net(x, z, lambda, cfg.alpha)?.weights)
    }
}

fn simplex_solver(x: &DMatrix<f64>, z: &DVector<f64>) -> Result<Weights> {
    let fit = fit_simplex_weights(x, z)?;
    Ok(Weights {
        coefficients: fit.weights,
        intercept: 0.0,
    })
}

/// Horizontal least squares: each missing period is regressed on the unit's
/// observed periods, trained on units observed on all of them.
pub fn fit_horizontal(y: &PanelMatrix, mask: &ObservationMask) -> Result<RegressionFit> {
    horizontal_with(y, mask, |x, z| ols_with_intercept(x, z, "hr-en"))
}

/// Vertical least squares: each treated unit is regressed on the units
/// observed in its missing period, trained on the periods where all are
/// observed. Equal to [`fit_horizontal`] on the transposed panel.
pub fn fit_vertical(y: &PanelMatrix, mask: &ObservationMask) -> Result<RegressionFit> {
    vertical_with(y, mask, |x, z| ols_with_intercept(x, z, "vt-en"))
}

pub fn fit_hr_en(y: &PanelMatrix, mask: &ObservationMask, cfg: &EnConfig) -> Result<RegressionFit> {
    cfg.validate()?;
    horizontal_with(y, mask, elastic_net_solver(cfg))
}

pub fn fit_vt_en(y: &PanelMatrix, mask: &ObservationMask, cfg: &EnConfig) -> Result<RegressionFit> {
    cfg.validate()?;
    vertical_with(y, mask, elastic_net_solver(cfg))
}

/// Synthetic control: vertical regression with nonnegative donor weights
/// summing to one and no intercept.
pub fn fit_sc_adh(y: &PanelMatrix, mask: &ObservationMask) -> Result<RegressionFit> {
    vertical_with(y, mask, simplex_solver)
}
