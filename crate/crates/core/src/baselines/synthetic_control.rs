use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::singular_values;
use crate::soft_impute::audit_trace;

pub const MAX_ITERATIONS: usize = 10_000;
pub const RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SimplexFit {
    pub weights: Vec<f64>,
    /// `||y - X w||^2` at the start point and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection onto `{w : w >= 0, sum w = 1}` by the sort-and-threshold
/// rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project onto an empty simplex");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn sse(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (y - x * w).norm_squared()
}

/// Minimizes `||y - X w||^2` over the probability simplex by projected
/// gradient with step `1 / sigma_1(X)^2`, starting from uniform weights.
pub fn fit_simplex_weights(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<SimplexFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::dims((y.len(), p), (n, p)));
    }
    if p == 0 {
        return Err(Error::Infeasible("synthetic control needs at least one donor".into()));
    }
    if n == 0 {
        return Err(Error::Infeasible(
            "synthetic control needs at least one pre-treatment period".into(),
        ));
    }
    let mut w = DVector::from_element(p, 1.0 / p as f64);
    let mut current = sse(x, y, &w);
    let mut trace = vec![current];
    let top = singular_values(x).first().copied().unwrap_or(0.0);
    if p == 1 || top == 0.0 {
        return Ok(SimplexFit {
            weights: w.iter().copied().collect(),
            objective_trace: trace,
            iterations: 0,
            converged: true,
        });
    }
    let step = 1.0 / (top * top);
    let xt = x.transpose();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let grad = &xt * (x * &w - y);
        let candidate: Vec<f64> = w.iter().zip(grad.iter()).map(|(a, g)| a - step * g).collect();
        let next = DVector::from_vec(project_simplex(&candidate));
        let value = sse(x, y, &next);
        debug_assert!(
            value <= current + 1e-10 * current.max(1.0),
            "projected gradient increased the objective"
        );
        w = next;
        trace.push(value);
        let change = (current - value).abs();
        current = value;
        if change <= RELATIVE_TOLERANCE * current.max(f64::MIN_POSITIVE) || current == 0.0 {
            converged = true;
            break;
        }
    }
    audit_trace(&trace, 1e-10 * trace[0].max(1.0));
    Ok(SimplexFit {
        weights: w.iter().copied().collect(),
        objective_trace: trace,
        iterations,
        converged,
    })
}
