use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};

/// Two-way fixed effects fit `mu + gamma_i + delta_t` on the observed cells.
///
/// Effects are normalized to sum to zero; `imputed` carries the observed
/// outcomes unchanged and the fitted values on missing cells.
#[derive(Clone, Debug)]
pub struct DidFit {
    pub intercept: f64,
    pub unit_effects: Vec<f64>,
    pub period_effects: Vec<f64>,
    pub imputed: PanelMatrix,
}

impl DidFit {
    pub fn fitted(&self, unit: usize, period: usize) -> f64 {
        self.intercept + self.unit_effects[unit] + self.period_effects[period]
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// True when the bipartite unit/period graph of observed cells is connected.
pub(crate) fn is_connected(mask: &ObservationMask) -> bool {
    let (n, t) = mask.shape();
    let mut parent: Vec<usize> = (0..n + t).collect();
    for &(i, p) in mask.observed_pairs() {
        let a = find(&mut parent, i);
        let b = find(&mut parent, n + p);
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (1..n + t).all(|k| find(&mut parent, k) == root)
}

/// Least-squares two-way fixed effects on observed cells; missing cells are
/// imputed with the fitted additive model.
pub fn fit_did(y: &PanelMatrix, mask: &ObservationMask) -> Result<DidFit> {
    mask.check_shape(y.shape())?;
    let (n, t) = mask.shape();
    if !is_connected(mask) {
        return Err(Error::Infeasible(
            "observed cells do not connect all units and periods; fixed effects are not identified".into(),
        ));
    }

    // Unit effects absorb the intercept and period 0 is the reference, so the
    // unknowns are a_i (all units) and b_s (periods 1..T). Eliminating a_i
    // leaves a (T-1)-dimensional SPD system in b.
    let rows: Vec<Vec<usize>> = (0..n).map(|i| mask.observed_periods_of(i)).collect();
    let row_sums: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, ps)| ps.iter().map(|&p| y.get(i, p)).sum())
        .collect();
    let m = t - 1;
    let mut system = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for &(i, p) in mask.observed_pairs() {
        if p > 0 {
            system[(p - 1, p - 1)] += 1.0;
            rhs[p - 1] += y.get(i, p);
        }
    }
    for (i, ps) in rows.iter().enumerate() {
        let inv = 1.0 / ps.len() as f64;
        for &p in ps.iter().filter(|&&p| p > 0) {
            rhs[p - 1] -= row_sums[i] * inv;
            for &s in ps.iter().filter(|&&s| s > 0) {
                system[(p - 1, s - 1)] -= inv;
            }
        }
    }
    let b = if m == 0 {
        DVector::zeros(0)
    } else {
        system
            .cholesky()
            .ok_or_else(|| Error::IllPosed("two-way fixed effects normal equations are singular".into()))?
            .solve(&rhs)
    };
    let period_raw: Vec<f64> = std::iter::once(0.0).chain(b.iter().copied()).collect();
    let unit_raw: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, ps)| (row_sums[i] - ps.iter().map(|&p| period_raw[p]).sum::<f64>()) / ps.len() as f64)
        .collect();

    let unit_mean = unit_raw.iter().sum::<f64>() / n as f64;
    let period_mean = period_raw.iter().sum::<f64>() / t as f64;
    let unit_effects: Vec<f64> = unit_raw.iter().map(|a| a - unit_mean).collect();
    let period_effects: Vec<f64> = period_raw.iter().map(|b| b - period_mean).collect();
    let intercept = unit_mean + period_mean;

    let imputed = DMatrix::from_fn(n, t, |i, p| {
        if mask.is_observed(i, p) {
            y.get(i, p)
        } else {
            intercept + unit_effects[i] + period_effects[p]
        }
    });
    Ok(DidFit {
        intercept,
        unit_effects,
        period_effects,
        imputed: PanelMatrix::new(imputed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_panel_imputes_constant() {
        let y = PanelMatrix::from_fn(4, 5, |_, _| 3.5).unwrap();
        let mask = ObservationMask::staggered(5, &[5, 5, 2, 3]).unwrap();
        let fit = fit_did(&y, &mask).unwrap();
        for (i, t) in mask.missing_pairs() {
            assert!((fit.imputed.get(i, t) - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_two_by_two() {
        let y = PanelMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        let mask = ObservationMask::block(2, 2, 1, &[1]).unwrap();
        let fit = fit_did(&y, &mask).unwrap();
        assert!((fit.imputed.get(1, 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn additive_panels_are_imputed_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let a: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = PanelMatrix::from_fn(7, 6, |i, t| a[i] + b[t]).unwrap();
            let mask = loop {
                let m = ObservationMask::from_fn(7, 6, |_, _| rng.random_bool(0.6)).unwrap();
                if is_connected(&m) {
                    break m;
                }
            };
            let fit = fit_did(&y, &mask).unwrap();
            for (i, t) in mask.missing_pairs() {
                assert!((fit.imputed.get(i, t) - y.get(i, t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residuals_satisfy_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let y = PanelMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let mask = ObservationMask::staggered(8, &[8, 8, 3, 5, 8, 6]).unwrap();
        let fit = fit_did(&y, &mask).unwrap();
        let resid = |i: usize, t: usize| y.get(i, t) - fit.fitted(i, t);
        for i in 0..6 {
            let s: f64 = mask.observed_periods_of(i).iter().map(|&t| resid(i, t)).sum();
            assert!(s.abs() < 1e-8);
        }
        for t in 0..8 {
            let s: f64 = (0..6).filter(|&i| mask.is_observed(i, t)).map(|i| resid(i, t)).sum();
            assert!(s.abs() < 1e-8);
        }
        assert!(fit.unit_effects.iter().sum::<f64>().abs() < 1e-10);
        assert!(fit.period_effects.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn disconnected_design_is_rejected() {
        // units {0,1} only see periods {0,1}; unit 2 only sees period 2
        let mask = ObservationMask::from_pairs(3, 3, &[(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)]).unwrap();
        let y = PanelMatrix::zeros(3, 3);
        assert!(matches!(fit_did(&y, &mask), Err(Error::Infeasible(_))));
    }
}
