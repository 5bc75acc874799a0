//! Extensions of the completion estimator: observed covariates with fixed
//! effects, propensity-weighted loss, and serially correlated errors.
//!
//! The covariate model fits
//!
//! ```text
//! Y_it ~ L_it + sum_pq X_ip H_pq Z_tq + mu + gamma_i + delta_t + V_it . beta
//! ```
//!
//! by minimizing `(1/|O|) sum_O r_it^2 + lambda_l ||L||_* + lambda_h sum |H_pq|`
//! with block coordinate descent in the fixed order gamma, delta, beta, H, L.

mod ar1;
mod propensity;
mod proximal;

pub use ar1::{estimate_rho, fit_ar1, ArSpec};
pub use propensity::{
    cross_validate_weighted, estimate_propensity, estimate_propensity_with, fit_weighted, fit_weighted_cv,
    PropensityModel, DEFAULT_CLIP,
};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};
use crate::soft_impute::{audit_trace, shrink_matrix};

/// Relative residual norm below which a unit-time covariate column counts as
/// a linear combination of the columns before it.
pub const COLLINEARITY_TOLERANCE: f64 = 1e-10;

/// Optional covariates. `x` (`N x P`) and `z` (`T x Q`) enter together through
/// `X H Z^T`; each entry of `v` is one `N x T` unit-time covariate.
#[derive(Clone, Debug, Default)]
pub struct CovariateSet {
    pub x: Option<DMatrix<f64>>,
    pub z: Option<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
}

impl CovariateSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, n_units: usize, n_periods: usize) -> Result<()> {
        match (&self.x, &self.z) {
            (Some(x), Some(z)) => {
                if x.nrows() != n_units {
                    return Err(Error::dims((n_units, x.ncols()), x.shape()));
                }
                if z.nrows() != n_periods {
                    return Err(Error::dims((n_periods, z.ncols()), z.shape()));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "unit covariates x and time covariates z enter through X H Z^T and must be supplied together"
                        .into(),
                ))
            }
        }
        for v in &self.v {
            if v.shape() != (n_units, n_periods) {
                return Err(Error::dims((n_units, n_periods), v.shape()));
            }
        }
        let all = self.x.iter().chain(self.z.iter()).chain(self.v.iter());
        if all.flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates must be finite".into()));
        }
        Ok(())
    }

    fn interaction_shape(&self) -> (usize, usize) {
        match (&self.x, &self.z) {
            (Some(x), Some(z)) => (x.ncols(), z.ncols()),
            _ => (0, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateConfig {
    /// Include the intercept and unit and period effects.
    pub fixed_effects: bool,
    /// Stop once both the relative objective change and the relative change
    /// of `L` over a full cycle fall below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CovariateConfig {
    fn default() -> Self {
        CovariateConfig {
            fixed_effects: true,
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CovariateFit {
    pub l_hat: PanelMatrix,
    /// `P x Q`; empty without interaction covariates.
    pub h_hat: DMatrix<f64>,
    pub intercept: f64,
    /// Unit effects, summing to zero (all zero without fixed effects).
    pub gamma: Vec<f64>,
    /// Period effects, summing to zero (all zero without fixed effects).
    pub delta: Vec<f64>,
    /// One coefficient per unit-time covariate; dropped columns hold 0.
    pub beta: Vec<f64>,
    pub dropped_columns: Vec<usize>,
    pub lambda_l: f64,
    pub lambda_h: f64,
    /// Objective at the start and after every full cycle.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl CovariateFit {
    /// Covariate part `X H Z^T + mu + gamma + delta + V . beta`, without `L`.
    pub fn covariate_part(&self, cov: &CovariateSet) -> DMatrix<f64> {
        let (n, t) = self.l_hat.shape();
        let mut out = DMatrix::from_fn(n, t, |i, s| self.intercept + self.gamma[i] + self.delta[s]);
        if let (Some(x), Some(z)) = (&cov.x, &cov.z) {
            out += x * &self.h_hat * z.transpose();
        }
        for (v, b) in cov.v.iter().zip(&self.beta) {
            out += v * *b;
        }
        out
    }

    /// Numerical rank of the low-rank component.
    pub fn effective_rank(&self) -> usize {
        crate::panel::numerical_rank(&crate::panel::singular_values(self.l_hat.as_matrix()))
    }

    /// Full fitted panel `L + X H Z^T + mu + gamma + delta + V . beta`.
    pub fn fitted(&self, cov: &CovariateSet) -> PanelMatrix {
        PanelMatrix::from_matrix_unchecked(self.l_hat.as_matrix() + self.covariate_part(cov))
    }
}

/// Keeps unit-time covariate columns that are not linear combinations of
/// earlier ones on the observed cells (modified Gram-Schmidt).
fn independent_columns(v: &[DMatrix<f64>], mask: &ObservationMask) -> Vec<usize> {
    let pairs = mask.observed_pairs();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, vj) in v.iter().enumerate() {
        let mut col = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, t)| vj[(i, t)]));
        let original = col.norm();
        for b in &basis {
            let c = b.dot(&col);
            col.axpy(-c, b, 1.0);
        }
        let rest = col.norm();
        if original > 0.0 && rest > COLLINEARITY_TOLERANCE * original {
            basis.push(col / rest);
            kept.push(j);
        }
    }
    kept
}

struct State {
    l: DMatrix<f64>,
    nuclear: f64,
    xhz: DMatrix<f64>,
    h: DMatrix<f64>,
    vb: DMatrix<f64>,
    beta: Vec<f64>,
    /// Unit effects including the intercept until the final normalization.
    gamma: Vec<f64>,
    delta: Vec<f64>,
}

impl State {
    fn residual(&self, y: &DMatrix<f64>, i: usize, t: usize) -> f64 {
        y[(i, t)] - self.l[(i, t)] - self.xhz[(i, t)] - self.vb[(i, t)] - self.gamma[i] - self.delta[t]
    }

    fn objective(&self, y: &DMatrix<f64>, mask: &ObservationMask, lambda_l: f64, lambda_h: f64) -> f64 {
        let sse: f64 = mask
            .observed_pairs()
            .iter()
            .map(|&(i, t)| self.residual(y, i, t).powi(2))
            .sum();
        sse / mask.n_observed() as f64 + lambda_l * self.nuclear + lambda_h * self.h.abs().sum()
    }
}

/// Joint fit of the low-rank component, interaction coefficients, fixed
/// effects and unit-time coefficients.
///
/// Each cycle updates gamma and delta (exact means of the partial residual),
/// beta (least squares on the retained columns), every `H_pq` by a scalar
/// soft-threshold at `lambda_h |O| / 2`, and `L` by one shrink step at
/// `lambda_l |O| / 2`. Every block update is an exact or majorized
/// minimization, so the objective never increases.
pub fn fit_covariate_model(
    y: &PanelMatrix,
    mask: &ObservationMask,
    cov: &CovariateSet,
    lambda_l: f64,
    lambda_h: f64,
    cfg: &CovariateConfig,
) -> Result<CovariateFit> {
    mask.check_shape(y.shape())?;
    let (n, t) = mask.shape();
    cov.validate(n, t)?;
    if mask.n_observed() == 0 {
        return Err(Error::EmptyMask);
    }
    for (name, v) in [("lambda_l", lambda_l), ("lambda_h", lambda_h)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    if !(cfg.tolerance > 0.0) || cfg.max_iterations == 0 {
        return Err(Error::InvalidArgument(
            "tolerance must be positive and max_iterations at least 1".into(),
        ));
    }

    let y = y.as_matrix();
    let pairs = mask.observed_pairs();
    let n_obs = mask.n_observed() as f64;
    let (p, q) = cov.interaction_shape();

    let kept = independent_columns(&cov.v, mask);
    let dropped: Vec<usize> = (0..cov.v.len()).filter(|j| !kept.contains(j)).collect();
    if !dropped.is_empty() {
        warn!("dropping collinear unit-time covariate columns {dropped:?}");
    }
    let beta_solver = if kept.is_empty() {
        None
    } else {
        let gram = DMatrix::from_fn(kept.len(), kept.len(), |a, b| {
            pairs
                .iter()
                .map(|&(i, s)| cov.v[kept[a]][(i, s)] * cov.v[kept[b]][(i, s)])
                .sum::<f64>()
        });
        Some(
            gram.cholesky()
                .ok_or_else(|| Error::IllPosed("unit-time covariate Gram matrix is singular".into()))?,
        )
    };
    // a_it = X_ip Z_tq and q_pq = sum_O a_it^2 for every interaction entry
    let interaction: Vec<(usize, usize, DMatrix<f64>, f64)> = match (&cov.x, &cov.z) {
        (Some(x), Some(z)) => (0..p)
            .flat_map(|pi| (0..q).map(move |qi| (pi, qi)))
            .map(|(pi, qi)| {
                let a = DMatrix::from_fn(n, t, |i, s| x[(i, pi)] * z[(s, qi)]);
                let curv = pairs.iter().map(|&(i, s)| a[(i, s)].powi(2)).sum::<f64>();
                (pi, qi, a, curv)
            })
            .collect(),
        _ => Vec::new(),
    };
    let rows: Vec<Vec<usize>> = (0..n).map(|i| mask.observed_periods_of(i)).collect();
    let cols: Vec<Vec<usize>> = (0..t)
        .map(|s| (0..n).filter(|&i| mask.is_observed(i, s)).collect())
        .collect();

    let mut st = State {
        l: DMatrix::zeros(n, t),
        nuclear: 0.0,
        xhz: DMatrix::zeros(n, t),
        h: DMatrix::zeros(p, q),
        vb: DMatrix::zeros(n, t),
        beta: vec![0.0; cov.v.len()],
        gamma: vec![0.0; n],
        delta: vec![0.0; t],
    };
    let objective = |st: &State| st.objective(y, mask, lambda_l, lambda_h);
    let slack = |f: f64| 1e-10 * f.abs().max(1.0);
    let mut current = objective(&st);
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let start = current;
        let mut check = |st: &State, block: &str| {
            let value = objective(st);
            debug_assert!(
                value <= current + slack(current),
                "{block} update increased the objective"
            );
            current = value;
        };

        if cfg.fixed_effects {
            for i in 0..n {
                if !rows[i].is_empty() {
                    let s: f64 = rows[i].iter().map(|&s| st.residual(y, i, s) + st.gamma[i]).sum();
                    st.gamma[i] = s / rows[i].len() as f64;
                }
            }
            check(&st, "unit effect");
            for s in 0..t {
                if !cols[s].is_empty() {
                    let total: f64 = cols[s].iter().map(|&i| st.residual(y, i, s) + st.delta[s]).sum();
                    st.delta[s] = total / cols[s].len() as f64;
                }
            }
            check(&st, "period effect");
        }

        if let Some(chol) = &beta_solver {
            let partial = |i: usize, s: usize| st.residual(y, i, s) + st.vb[(i, s)];
            let rhs = DVector::from_iterator(
                kept.len(),
                kept.iter().map(|&j| {
                    pairs
                        .iter()
                        .map(|&(i, s)| cov.v[j][(i, s)] * partial(i, s))
                        .sum::<f64>()
                }),
            );
            let b = chol.solve(&rhs);
            st.vb.fill(0.0);
            for (k, &j) in kept.iter().enumerate() {
                st.beta[j] = b[k];
                st.vb += &cov.v[j] * b[k];
            }
            check(&st, "beta");
        }

        if !interaction.is_empty() {
            let threshold = lambda_h * n_obs / 2.0;
            for (pi, qi, a, curv) in &interaction {
                if *curv == 0.0 {
                    continue;
                }
                let old = st.h[(*pi, *qi)];
                let c: f64 = pairs
                    .iter()
                    .map(|&(i, s)| a[(i, s)] * st.residual(y, i, s))
                    .sum::<f64>()
                    + old * curv;
                let new = soft(c, threshold) / curv;
                if new != old {
                    st.xhz += a * (new - old);
                    st.h[(*pi, *qi)] = new;
                }
            }
            check(&st, "interaction");
        }

        let mut filled = st.l.clone();
        for &(i, s) in pairs {
            filled[(i, s)] = st.residual(y, i, s) + st.l[(i, s)];
        }
        let next = shrink_matrix(&filled, lambda_l * n_obs / 2.0);
        let l_change = (&next.matrix - &st.l).norm() / st.l.norm().max(1.0);
        st.l = next.matrix;
        st.nuclear = next.singular_values.iter().sum();
        check(&st, "low-rank");

        trace.push(current);
        let f_change = (start - current).abs() / start.abs().max(f64::MIN_POSITIVE);
        if l_change < cfg.tolerance && f_change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("covariate model stopped after {iterations} cycles without converging");
    }
    let descended = audit_trace(&trace, slack(trace[0]));
    debug_assert!(descended, "covariate objective increased: {trace:?}");

    let (gamma, delta, intercept) = if cfg.fixed_effects {
        let gm = st.gamma.iter().sum::<f64>() / n as f64;
        let dm = st.delta.iter().sum::<f64>() / t as f64;
        (
            st.gamma.iter().map(|g| g - gm).collect(),
            st.delta.iter().map(|d| d - dm).collect(),
            gm + dm,
        )
    } else {
        (st.gamma, st.delta, 0.0)
    };
    Ok(CovariateFit {
        l_hat: PanelMatrix::from_matrix_unchecked(st.l),
        h_hat: st.h,
        intercept,
        gamma,
        delta,
        beta: st.beta,
        dropped_columns: dropped,
        lambda_l,
        lambda_h,
        objective_trace: trace,
        iterations,
        converged,
    })
}

fn soft(z: f64, gamma: f64) -> f64 {
    z.signum() * (z.abs() - gamma).max(0.0)
}
