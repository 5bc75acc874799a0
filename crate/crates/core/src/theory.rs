//! Numeric evaluators for the error-bound theory: the noise operator norm,
//! the deterministic oracle inequality for a fitted estimate, the high
//! probability consistency bound, and a plug-in for the control fraction.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{masked, singular_values, ObservationMask, PanelMatrix};
use crate::soft_impute::{fit_mcnnm, McnnmConfig};

/// Parameters of the consistency bound. `c_constant` is user supplied: only
/// its existence is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremBoundConfig {
    pub c_constant: f64,
    pub sigma: f64,
    pub l_max: f64,
    pub rank: f64,
    pub p_c: f64,
}

impl TheoremBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_c == 0.0 {
            return Err(Error::InvalidArgument(
                "p_c = 0: no fully observed units, the bound diverges".into(),
            ));
        }
        if !(self.p_c > 0.0 && self.p_c <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p_c must lie in (0, 1], got {}",
                self.p_c
            )));
        }
        if !(self.c_constant > 0.0 && self.c_constant.is_finite()) {
            return Err(Error::InvalidArgument("C must be positive".into()));
        }
        for (name, v) in [("sigma", self.sigma), ("l_max", self.l_max), ("rank", self.rank)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `sigma_1(P_O(E))`.
pub fn noise_operator_norm(noise: &PanelMatrix, mask: &ObservationMask) -> Result<f64> {
    mask.check_shape(noise.shape())?;
    Ok(singular_values(&masked(noise.as_matrix(), mask, true))[0])
}

/// The three terms of the consistency bound before the constant:
/// `L_max sqrt(log(N+T) / (N p_c^2))`, `sigma sqrt(R log(N+T) / (T p_c^2))`
/// and `sigma sqrt(R log^3(N+T) / (N p_c^2))`.
pub fn theorem_terms(cfg: &TheoremBoundConfig, n_units: usize, n_periods: usize) -> Result<[f64; 3]> {
    cfg.validate()?;
    if n_units == 0 || n_periods == 0 {
        return Err(Error::InvalidArgument("N and T must be at least 1".into()));
    }
    let (n, t) = (n_units as f64, n_periods as f64);
    let log = (n + t).ln();
    let p2 = cfg.p_c * cfg.p_c;
    Ok([
        cfg.l_max * (log / (n * p2)).sqrt(),
        cfg.sigma * (cfg.rank * log / (t * p2)).sqrt(),
        cfg.sigma * (cfg.rank * log.powi(3) / (n * p2)).sqrt(),
    ])
}

/// `C` times the largest of [`theorem_terms`]: a bound on
/// `||L* - L_hat||_F / sqrt(N T)` holding with probability at least
/// `1 - 2 (N+T)^-2`.
pub fn theorem_bound(cfg: &TheoremBoundConfig, n_units: usize, n_periods: usize) -> Result<f64> {
    let terms = theorem_terms(cfg, n_units, n_periods)?;
    Ok(cfg.c_constant * terms.iter().copied().fold(0.0, f64::max))
}

/// `sigma max(sqrt(N log(N+T)), sqrt(T) log^{3/2}(N+T))`: the scale that
/// bounds the noise operator norm up to a constant.
pub fn noise_norm_scale(sigma: f64, n_units: usize, n_periods: usize) -> f64 {
    let (n, t) = (n_units as f64, n_periods as f64);
    let log = (n + t).ln();
    sigma * (n * log).sqrt().max(t.sqrt() * log.powf(1.5))
}

/// Penalty prescribed by the consistency theory, `C * noise_norm_scale / |O|`.
/// Offered as an alternative anchor for penalty grids.
pub fn theorem_lambda(c_constant: f64, sigma: f64, mask: &ObservationMask) -> Result<f64> {
    if mask.n_observed() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(c_constant * noise_norm_scale(sigma, mask.n_units(), mask.n_periods()) / mask.n_observed() as f64)
}

/// Fraction of fully observed units `N_c / N`: a plug-in proxy for the
/// probability that a unit is never treated.
pub fn empirical_pc(mask: &ObservationMask) -> f64 {
    mask.n_control() as f64 / mask.n_units() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaOutcome {
    Holds,
    Fails,
    /// The penalty is below the admissible threshold.
    NotApplicable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub outcome: LemmaOutcome,
    /// `sum_O (L* - L_hat)^2 / |O|`
    pub lhs: f64,
    /// `10 lambda sqrt(R) ||L* - L_hat||_F`
    pub rhs: f64,
    /// `3 ||P_O(Y - L*)||_op / |O|`; the inequality applies for `lambda` at or above it.
    pub threshold: f64,
}

/// Evaluates the deterministic error inequality for an estimate fitted at
/// penalty `lambda`. The noise is `P_O(Y - L*)`, so `y` is required.
pub fn check_lemma_error_bound(
    y: &PanelMatrix,
    l_star: &PanelMatrix,
    l_hat: &PanelMatrix,
    mask: &ObservationMask,
    lambda: f64,
    rank: usize,
) -> Result<LemmaCheck> {
    let shape = mask.shape();
    y.check_shape(shape)?;
    l_star.check_shape(shape)?;
    l_hat.check_shape(shape)?;
    if mask.n_observed() == 0 {
        return Err(Error::EmptyMask);
    }
    let n_obs = mask.n_observed() as f64;
    let noise = masked(&(y.as_matrix() - l_star.as_matrix()), mask, true);
    let threshold = 3.0 * singular_values(&noise)[0] / n_obs;
    let diff = l_star.as_matrix() - l_hat.as_matrix();
    let lhs = mask
        .observed_pairs()
        .iter()
        .map(|&(i, t)| diff[(i, t)].powi(2))
        .sum::<f64>()
        / n_obs;
    let rhs = 10.0 * lambda * (rank as f64).sqrt() * diff.norm();
    let outcome = if lambda < threshold {
        LemmaOutcome::NotApplicable
    } else if lhs <= rhs + 1e-10 {
        LemmaOutcome::Holds
    } else {
        LemmaOutcome::Fails
    };
    Ok(LemmaCheck {
        outcome,
        lhs,
        rhs,
        threshold,
    })
}

/// Seeded batch for the oracle inequality: `L* = A B^T` with standard normal
/// `A` (N x R) and `B` (T x R), `Y = L* + sigma * noise`, half the units never
/// treated and the rest adopting uniformly in `ceil(T/2)..=T`, fitted at the
/// smallest admissible penalty `3 ||P_O(Y - L*)||_op / |O|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteConfig {
    pub instances: usize,
    pub n: usize,
    pub t: usize,
    pub rank: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        LemmaSuiteConfig {
            instances: 50,
            n: 30,
            t: 30,
            rank: 2,
            sigma: 0.2,
            seed: 0,
        }
    }
}

/// Runs the batch; instance `k` draws from stream `k` of `seed`, so the
/// result does not depend on scheduling.
pub fn run_lemma_suite(cfg: &LemmaSuiteConfig) -> Result<Vec<LemmaCheck>> {
    if cfg.n < 2 || cfg.t == 0 || cfg.rank > cfg.n.min(cfg.t) {
        return Err(Error::InvalidArgument(format!(
            "lemma suite needs N >= 2, T >= 1 and R <= min(N, T); got {}x{} rank {}",
            cfg.n, cfg.t, cfg.rank
        )));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", cfg.sigma)));
    }
    (0..cfg.instances)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let (n, t, r) = (cfg.n, cfg.t, cfg.rank);
            let a = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = DMatrix::from_fn(t, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let l_star = a * b.transpose();
            let noise = DMatrix::from_fn(n, t, |_, _| cfg.sigma * rng.sample::<f64, _>(StandardNormal));
            let y = PanelMatrix::new(&l_star + noise)?;
            // Same rounding as the check, so lambda sits exactly on its threshold.
            let noise = PanelMatrix::new(y.as_matrix() - &l_star)?;
            let adoption: Vec<usize> = (0..n)
                .map(|i| {
                    if i < n / 2 {
                        t
                    } else {
                        rng.random_range(t.div_ceil(2).max(1)..=t)
                    }
                })
                .collect();
            let mask = ObservationMask::staggered(t, &adoption)?;
            let lambda = 3.0 * noise_operator_norm(&noise, &mask)? / mask.n_observed() as f64;
            let fit = fit_mcnnm(&y, &mask, &McnnmConfig::with_lambda(lambda))?;
            check_lemma_error_bound(&y, &PanelMatrix::new(l_star)?, &fit.estimate, &mask, lambda, r)
        })
        .collect()
}

/// Expected direction of the bound along one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Nonincreasing,
    Nondecreasing,
}

/// Outcome of the monotonicity lattice along one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeDirection {
    pub parameter: String,
    pub expected: Direction,
    pub checked: usize,
    pub violations: usize,
    /// First violating step, if any.
    pub example: Option<String>,
}

impl LatticeDirection {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks the bound for nonincreasing in N, T, p_c and nondecreasing in
/// sigma, R, L_max over the product of the given grids; each check moves one
/// coordinate to its next grid value. `base.c_constant` is used throughout.
pub fn bound_lattice(
    base: &TheoremBoundConfig,
    sizes: &[usize],
    pcs: &[f64],
    scales: &[f64],
) -> Result<Vec<LatticeDirection>> {
    base.validate()?;
    if pcs.iter().chain(scales).any(|v| !v.is_finite() || *v < 0.0) || pcs.iter().any(|&p| p <= 0.0 || p > 1.0) {
        return Err(Error::InvalidArgument(
            "lattice grids must be finite, scales >= 0 and p_c in (0, 1]".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("lattice sizes must be >= 1".into()));
    }
    let eval = |n: usize, t: usize, c: &TheoremBoundConfig| theorem_bound(c, n, t);
    let mut out = Vec::new();
    let mut record = |parameter: &str, expected: Direction, steps: Vec<(String, f64, f64)>| {
        let mut dir = LatticeDirection {
            parameter: parameter.to_string(),
            expected,
            checked: steps.len(),
            violations: 0,
            example: None,
        };
        for (label, before, after) in steps {
            let ok = match expected {
                Direction::Nonincreasing => after <= before * (1.0 + 1e-12),
                Direction::Nondecreasing => after >= before * (1.0 - 1e-12),
            };
            if !ok {
                dir.violations += 1;
                dir.example.get_or_insert(format!("{label}: {before:.6} -> {after:.6}"));
            }
        }
        out.push(dir);
    };
    let mut by = |name: &str,
                  expected: Direction,
                  step: &dyn Fn(usize, usize, &TheoremBoundConfig) -> Option<(String, f64, f64)>| {
        let mut steps = Vec::new();
        for &n in sizes {
            for &t in sizes {
                for &p in pcs {
                    for &s in scales {
                        for &r in scales {
                            for &l in scales {
                                let c = TheoremBoundConfig {
                                    p_c: p,
                                    sigma: s,
                                    rank: r,
                                    l_max: l,
                                    ..base.clone()
                                };
                                if let Some(x) = step(n, t, &c) {
                                    steps.push(x);
                                }
                            }
                        }
                    }
                }
            }
        }
        record(name, expected, steps);
    };
    let next = |grid: &[f64], v: f64| grid.iter().copied().find(|&g| g > v);
    let next_size = |v: usize| sizes.iter().copied().find(|&g| g > v);
    let at = |n, t, c: &TheoremBoundConfig| eval(n, t, c).unwrap_or(f64::NAN);
    by("n", Direction::Nonincreasing, &|n, t, c| {
        next_size(n).map(|m| (format!("N {n}->{m} at T={t}"), at(n, t, c), at(m, t, c)))
    });
    by("t", Direction::Nonincreasing, &|n, t, c| {
        next_size(t).map(|m| (format!("T {t}->{m} at N={n}"), at(n, t, c), at(n, m, c)))
    });
    by("p_c", Direction::Nonincreasing, &|n, t, c| {
        next(pcs, c.p_c).map(|p| {
            (
                format!("p_c {}->{p}", c.p_c),
                at(n, t, c),
                at(n, t, &TheoremBoundConfig { p_c: p, ..c.clone() }),
            )
        })
    });
    by("sigma", Direction::Nondecreasing, &|n, t, c| {
        next(scales, c.sigma).map(|s| {
            (
                format!("sigma {}->{s}", c.sigma),
                at(n, t, c),
                at(n, t, &TheoremBoundConfig { sigma: s, ..c.clone() }),
            )
        })
    });
    by("rank", Direction::Nondecreasing, &|n, t, c| {
        next(scales, c.rank).map(|r| {
            (
                format!("R {}->{r}", c.rank),
                at(n, t, c),
                at(n, t, &TheoremBoundConfig { rank: r, ..c.clone() }),
            )
        })
    });
    by("l_max", Direction::Nondecreasing, &|n, t, c| {
        next(scales, c.l_max).map(|l| {
            (
                format!("L_max {}->{l}", c.l_max),
                at(n, t, c),
                at(n, t, &TheoremBoundConfig { l_max: l, ..c.clone() }),
            )
        })
    });
    Ok(out)
}
