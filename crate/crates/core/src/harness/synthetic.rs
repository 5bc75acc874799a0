use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    IidGaussian,
    /// Stationary AR(1) within each unit; marginal variance stays `sigma^2`.
    Ar1 {
        rho: f64,
    },
}

/// Recipe for a low-rank panel `Y = L* + eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    pub rank: usize,
    pub noise_sigma: f64,
    pub noise_model: NoiseModel,
    pub factor_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Gaussian noise, unit factor scale.
    pub fn new(n: usize, t: usize, rank: usize, noise_sigma: f64, seed: u64) -> Self {
        SyntheticSpec {
            n,
            t,
            rank,
            noise_sigma,
            noise_model: NoiseModel::IidGaussian,
            factor_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::InvalidArgument("synthetic panel needs n, t >= 1".into()));
        }
        if self.rank > self.n.min(self.t) {
            return Err(Error::InvalidArgument(format!(
                "rank {} exceeds min(n, t) = {}",
                self.rank,
                self.n.min(self.t)
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.factor_scale.is_finite() {
            return Err(Error::InvalidArgument("factor scale must be finite".into()));
        }
        if let NoiseModel::Ar1 { rho } = self.noise_model {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "AR(1) coefficient must lie in (-1, 1), got {rho}"
                )));
            }
        }
        Ok(())
    }
}

/// A generated panel together with its noiseless part.
#[derive(Clone, Debug)]
pub struct SyntheticPanel {
    pub l_star: PanelMatrix,
    pub y: PanelMatrix,
}

/// Draws `U` (n x R), `V` (t x R) and the noise, in that order, from one
/// ChaCha8 stream seeded by `spec.seed`; `L* = (scale / sqrt R) U V^T`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticPanel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t, r) = (spec.n, spec.t, spec.rank);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let l_star = if r == 0 {
        DMatrix::zeros(n, t)
    } else {
        let u = DMatrix::from_fn(n, r, |_, _| normal());
        let v = DMatrix::from_fn(t, r, |_, _| normal());
        (u * v.transpose()) * (spec.factor_scale / (r as f64).sqrt())
    };
    let sigma = spec.noise_sigma;
    let mut noise = DMatrix::zeros(n, t);
    for i in 0..n {
        match spec.noise_model {
            NoiseModel::IidGaussian => {
                for p in 0..t {
                    noise[(i, p)] = sigma * normal();
                }
            }
            NoiseModel::Ar1 { rho } => {
                let innovation = sigma * (1.0 - rho * rho).sqrt();
                noise[(i, 0)] = sigma * normal();
                for p in 1..t {
                    noise[(i, p)] = rho * noise[(i, p - 1)] + innovation * normal();
                }
            }
        }
    }
    let y = &l_star + noise;
    Ok(SyntheticPanel {
        l_star: PanelMatrix::new(l_star)?,
        y: PanelMatrix::new(y)?,
    })
}
