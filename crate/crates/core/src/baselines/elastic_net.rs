use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Weights;
use crate::error::{Error, Result};

/// Penalty settings for the elastic-net regressions. When `lambda` is `None`
/// it is chosen by K-fold cross-validation over a geometric path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnConfig {
    pub lambda: Option<f64>,
    /// Mixing weight: 1 is the lasso, 0 is ridge.
    pub alpha: f64,
    pub n_folds: usize,
    pub n_lambdas: usize,
    pub seed: u64,
}

impl Default for EnConfig {
    fn default() -> Self {
        EnConfig {
            lambda: None,
            alpha: 0.5,
            n_folds: 5,
            n_lambdas: 20,
            seed: 0,
        }
    }
}

impl EnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "elastic-net lambda must be nonnegative, got {l}"
                )));
            }
        }
        if self.lambda.is_none() && (self.n_folds < 2 || self.n_lambdas == 0) {
            return Err(Error::InvalidArgument(
                "penalty selection needs n_folds >= 2 and n_lambdas >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EnOptions {
    /// Stop when no coefficient moves more than `tolerance` times the target
    /// standard deviation (changes are measured in fitted-value units).
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for EnOptions {
    fn default() -> Self {
        EnOptions {
            tolerance: 1e-12,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ElasticNetFit {
    pub weights: Weights,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn check_inputs(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64, alpha: f64) -> Result<()> {
    if design.nrows() != target.len() {
        return Err(Error::dims((target.len(), design.ncols()), design.shape()));
    }
    if design.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "elastic net needs at least one observation".into(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "elastic-net lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

struct Centered {
    x: DMatrix<f64>,
    x_mean: Vec<f64>,
    y: DVector<f64>,
    y_mean: f64,
    /// `||x_j||^2 / n` per centered column
    scale: Vec<f64>,
}

fn center(design: &DMatrix<f64>, target: &DVector<f64>) -> Centered {
    let n = design.nrows() as f64;
    let mut x = design.clone();
    let mut x_mean = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for mut col in x.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
        x_mean.push(m);
        scale.push(col.norm_squared() / n);
    }
    let y_mean = target.sum() / n;
    let y = target.add_scalar(-y_mean);
    Centered {
        x,
        x_mean,
        y,
        y_mean,
        scale,
    }
}

fn coordinate_descent(c: &Centered, lambda: f64, alpha: f64, w: &mut [f64], opts: &EnOptions) -> (usize, bool) {
    let n = c.x.nrows() as f64;
    let p = c.x.ncols();
    let threshold = opts.tolerance * (c.y.norm_squared() / n).sqrt().max(f64::MIN_POSITIVE);
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let mut resid = c.y.clone();
    for (j, &wj) in w.iter().enumerate() {
        if wj != 0.0 {
            resid.axpy(-wj, &c.x.column(j), 1.0);
        }
    }

    let sweep = |coords: &mut dyn Iterator<Item = usize>, w: &mut [f64], resid: &mut DVector<f64>| -> f64 {
        let mut largest = 0.0f64;
        for j in coords {
            let d = c.scale[j];
            if d == 0.0 {
                w[j] = 0.0;
                continue;
            }
            let col = c.x.column(j);
            let z = col.dot(resid) / n + d * w[j];
            let new = soft(z, l1) / (d + l2);
            let delta = new - w[j];
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                w[j] = new;
                largest = largest.max(delta.abs() * d.sqrt());
            }
        }
        largest
    };

    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        if sweep(&mut (0..p), w, &mut resid) < threshold {
            return (sweeps, true);
        }
        let active: Vec<usize> = (0..p).filter(|&j| w[j] != 0.0).collect();
        while sweeps < opts.max_sweeps {
            sweeps += 1;
            if sweep(&mut active.iter().copied(), w, &mut resid) < threshold {
                break;
            }
        }
    }
    (sweeps, false)
}

fn finish(c: &Centered, w: Vec<f64>, sweeps: usize, converged: bool) -> ElasticNetFit {
    let intercept = c.y_mean - w.iter().zip(&c.x_mean).map(|(a, b)| a * b).sum::<f64>();
    ElasticNetFit {
        weights: Weights {
            coefficients: w,
            intercept,
        },
        sweeps,
        converged,
    }
}

/// Coordinate-descent minimizer of
/// `(1/(2n)) ||y - b0 - X w||^2 + lambda (alpha ||w||_1 + (1 - alpha)/2 ||w||^2)`
/// with an unpenalized intercept `b0`.
pub fn fit_elastic_net(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64, alpha: f64) -> Result<ElasticNetFit> {
    fit_elastic_net_with(design, target, lambda, alpha, &EnOptions::default(), None)
}

pub fn fit_elastic_net_with(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    alpha: f64,
    opts: &EnOptions,
    warm_start: Option<&[f64]>,
) -> Result<ElasticNetFit> {
    check_inputs(design, target, lambda, alpha)?;
    let c = center(design, target);
    let mut w = match warm_start {
        Some(w0) if w0.len() == design.ncols() => w0.to_vec(),
        Some(w0) => return Err(Error::dims((design.ncols(), 1), (w0.len(), 1))),
        None => vec![0.0; design.ncols()],
    };
    let (sweeps, converged) = coordinate_descent(&c, lambda, alpha, &mut w, opts);
    if !converged {
        warn!("elastic net stopped after {sweeps} sweeps without converging");
    }
    Ok(finish(&c, w, sweeps, converged))
}

/// Smallest lambda at which every coefficient is zero. The ridge limit
/// `alpha = 0` has no such value; a floor of `alpha = 1e-3` is used.
pub fn en_lambda_max(design: &DMatrix<f64>, target: &DVector<f64>, alpha: f64) -> f64 {
    let c = center(design, target);
    let n = design.nrows() as f64;
    let top = c.x.column_iter().map(|col| col.dot(&c.y).abs()).fold(0.0, f64::max);
    top / (n * alpha.max(1e-3))
}

/// Largest KKT violation of a candidate solution, in gradient units.
pub fn kkt_residual(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64, alpha: f64, weights: &Weights) -> f64 {
    let n = design.nrows() as f64;
    let w = DVector::from_column_slice(&weights.coefficients);
    let resid = target - design * &w - DVector::from_element(target.len(), weights.intercept);
    let mut worst = (resid.sum() / n).abs();
    for (j, col) in design.column_iter().enumerate() {
        let grad = -col.dot(&resid) / n + lambda * (1.0 - alpha) * w[j];
        let violation = if w[j] == 0.0 {
            (grad.abs() - lambda * alpha).max(0.0)
        } else {
            (grad + lambda * alpha * w[j].signum()).abs()
        };
        worst = worst.max(violation);
    }
    worst
}

fn rows_of(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

/// Picks the penalty minimizing K-fold held-out squared error over a
/// geometric path from `en_lambda_max` downwards. Folds are a seeded
/// shuffle; each fold walks the path with warm starts.
pub fn select_lambda_cv(design: &DMatrix<f64>, target: &DVector<f64>, cfg: &EnConfig) -> Result<f64> {
    check_inputs(design, target, 0.0, cfg.alpha)?;
    let (n, p) = design.shape();
    let top = en_lambda_max(design, target, cfg.alpha);
    if top <= 0.0 {
        return Ok(0.0);
    }
    let ratio: f64 = if n > p { 1e-4 } else { 1e-2 };
    let m = cfg.n_lambdas.max(1);
    let path: Vec<f64> = (0..m)
        .map(|k| {
            if m == 1 {
                top
            } else {
                top * ratio.powf(k as f64 / (m - 1) as f64)
            }
        })
        .collect();
    let folds = cfg.n_folds.min(n);
    if folds < 2 {
        return Ok(*path.last().unwrap());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let opts = EnOptions {
        tolerance: 1e-7,
        max_sweeps: 10_000,
    };
    let mut sse = vec![0.0; path.len()];
    for k in 0..folds {
        let held: Vec<usize> = (0..n).filter(|&r| r % folds == k).map(|r| order[r]).collect();
        let train: Vec<usize> = (0..n).filter(|&r| r % folds != k).map(|r| order[r]).collect();
        let xt = rows_of(design, &train);
        let yt = target.select_rows(&train);
        let xh = rows_of(design, &held);
        let yh = target.select_rows(&held);
        let c = center(&xt, &yt);
        let mut w = vec![0.0; p];
        for (slot, &lambda) in path.iter().enumerate() {
            coordinate_descent(&c, lambda, cfg.alpha, &mut w, &opts);
            let fit = finish(&c, w.clone(), 0, true);
            let pred = &xh * DVector::from_column_slice(&fit.weights.coefficients);
            sse[slot] += pred
                .iter()
                .zip(yh.iter())
                .map(|(a, b)| (a + fit.weights.intercept - b).powi(2))
                .sum::<f64>();
        }
    }
    let best = sse
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v < sse[best] { k } else { best });
    Ok(path[best])
}
