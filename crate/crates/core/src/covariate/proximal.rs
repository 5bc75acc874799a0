use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::{masked, numerical_rank, singular_values, ObservationMask, PanelMatrix};
use crate::soft_impute::{audit_trace, shrink_matrix, FitResult, McnnmConfig, DESCENT_SLACK};

/// Smooth part of a penalized completion problem, written as
/// `(1/|O|) q(Y - L)` for a quadratic form `q` supported on observed cells.
pub(crate) trait SmoothLoss: Sync {
    /// `(1/|O|) q(Y - L)`.
    fn value(&self, residual: &DMatrix<f64>) -> f64;
    /// `(|O|/2)` times the negative gradient, i.e. `Q (Y - L)` on observed cells.
    fn descent_direction(&self, residual: &DMatrix<f64>) -> DMatrix<f64>;
    /// Upper bound on the largest eigenvalue of `Q`.
    fn curvature(&self) -> f64;
}

/// Proximal gradient with step `|O| / (2 kappa)`:
/// `L+ = shrink_{lambda |O| / (2 kappa)}(L + Q(Y - L) / kappa)`, started from
/// `P_O(Y)` unless a warm start is given. With `Q = I` this is exactly the
/// soft-impute iteration.
pub(crate) fn proximal_descent(
    y: &PanelMatrix,
    mask: &ObservationMask,
    cfg: &McnnmConfig,
    loss: &dyn SmoothLoss,
    warm_start: Option<&PanelMatrix>,
) -> Result<FitResult> {
    cfg.validate()?;
    mask.check_shape(y.shape())?;
    if mask.n_observed() == 0 {
        return Err(Error::EmptyMask);
    }
    let kappa = loss.curvature();
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "loss curvature must be positive and finite, got {kappa}"
        )));
    }
    let y = y.as_matrix();
    let mut current = match warm_start {
        Some(w) => {
            w.check_shape(mask.shape())?;
            w.as_matrix().clone()
        }
        None => masked(y, mask, true),
    };
    let threshold = cfg.lambda * mask.n_observed() as f64 / (2.0 * kappa);
    let objective = |l: &DMatrix<f64>, nuclear: f64| loss.value(&(y - l)) + cfg.lambda * nuclear;

    let mut trace = vec![objective(&current, singular_values(&current).iter().sum())];
    let mut spectrum = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let direction = loss.descent_direction(&(y - &current));
        let next = shrink_matrix(&(&current + direction / kappa), threshold);
        trace.push(objective(&next.matrix, next.singular_values.iter().sum()));
        let change = (&next.matrix - &current).norm() / current.norm().max(1.0);
        current = next.matrix;
        spectrum = next.singular_values;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let descended = audit_trace(&trace, DESCENT_SLACK * trace[0].abs().max(1.0));
    debug_assert!(descended, "proximal gradient objective increased: {trace:?}");

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

/// Walks a descending penalty grid with warm starts, reporting each fit.
pub(crate) fn proximal_path(
    y: &PanelMatrix,
    mask: &ObservationMask,
    grid: &[f64],
    cfg: &McnnmConfig,
    loss: &dyn SmoothLoss,
    mut visit: impl FnMut(usize, &FitResult),
) -> Result<Option<FitResult>> {
    let mut previous: Option<FitResult> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let step = McnnmConfig { lambda, ..cfg.clone() };
        let fit = proximal_descent(y, mask, &step, loss, previous.as_ref().map(|f| &f.estimate))?;
        visit(k, &fit);
        previous = Some(fit);
    }
    Ok(previous)
}
