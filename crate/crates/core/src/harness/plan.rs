use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ObservationMask;

/// Distribution of the 1-based adoption time `t_i` of a pseudo-treated unit.
/// Unit `i` stays observed for its first `t_i` periods, so `t_i = T` leaves
/// the row complete.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdoptionDistribution {
    /// Uniform on `ceil(T/2)..=T`.
    #[default]
    LastHalf,
    /// Uniform on `first..=last`.
    Uniform { first: usize, last: usize },
}

impl AdoptionDistribution {
    fn bounds(&self, n_periods: usize) -> Result<(usize, usize)> {
        let (first, last) = match *self {
            AdoptionDistribution::LastHalf => (n_periods.div_ceil(2).max(1), n_periods),
            AdoptionDistribution::Uniform { first, last } => (first, last),
        };
        if first == 0 || first > last || last > n_periods {
            return Err(Error::InvalidArgument(format!(
                "adoption range {first}..={last} must lie in 1..={n_periods}"
            )));
        }
        Ok((first, last))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanMode {
    /// `n_treated` random units are missing from period `T0 = ceil(t0_ratio T)`
    /// (0-based) onwards, i.e. the first `T0` periods stay observed.
    Simultaneous { n_treated: usize, t0_ratio: f64 },
    Staggered {
        n_treated: usize,
        #[serde(default)]
        adoption: AdoptionDistribution,
    },
}

/// How to hide cells of a fully observed panel, repeated `replications` times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoTreatmentPlan {
    pub mode: PlanMode,
    pub replications: usize,
    pub seed: u64,
}

impl PseudoTreatmentPlan {
    pub fn simultaneous(n_treated: usize, t0_ratio: f64, replications: usize, seed: u64) -> Self {
        PseudoTreatmentPlan {
            mode: PlanMode::Simultaneous { n_treated, t0_ratio },
            replications,
            seed,
        }
    }

    pub fn staggered(n_treated: usize, replications: usize, seed: u64) -> Self {
        PseudoTreatmentPlan {
            mode: PlanMode::Staggered {
                n_treated,
                adoption: AdoptionDistribution::LastHalf,
            },
            replications,
            seed,
        }
    }

    /// Checks the plan against an `n_units x n_periods` panel.
    pub fn validate(&self, n_units: usize, n_periods: usize) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be positive".into()));
        }
        let n_treated = match self.mode {
            PlanMode::Simultaneous { n_treated, t0_ratio } => {
                if !(t0_ratio > 0.0 && t0_ratio < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "t0_ratio must lie in (0, 1), got {t0_ratio}"
                    )));
                }
                if first_treated_period(t0_ratio, n_periods) >= n_periods {
                    return Err(Error::Infeasible(format!(
                        "t0_ratio {t0_ratio} leaves no treated period among {n_periods}"
                    )));
                }
                n_treated
            }
            PlanMode::Staggered { n_treated, adoption } => {
                adoption.bounds(n_periods)?;
                n_treated
            }
        };
        if n_treated >= n_units {
            return Err(Error::Infeasible(format!(
                "{n_treated} treated units leave no control among {n_units}"
            )));
        }
        Ok(())
    }
}

fn first_treated_period(t0_ratio: f64, n_periods: usize) -> usize {
    (t0_ratio * n_periods as f64).ceil() as usize
}

/// Mask of replication `index`; its randomness comes only from `(seed, index)`.
pub fn pseudo_mask(
    plan: &PseudoTreatmentPlan,
    n_units: usize,
    n_periods: usize,
    index: usize,
) -> Result<ObservationMask> {
    plan.validate(n_units, n_periods)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(index as u64);
    match plan.mode {
        PlanMode::Simultaneous { n_treated, t0_ratio } => {
            let mut units = sample(&mut rng, n_units, n_treated).into_vec();
            units.sort_unstable();
            ObservationMask::block(n_units, n_periods, first_treated_period(t0_ratio, n_periods), &units)
        }
        PlanMode::Staggered { n_treated, adoption } => {
            let (first, last) = adoption.bounds(n_periods)?;
            let mut units = sample(&mut rng, n_units, n_treated).into_vec();
            units.sort_unstable();
            let mut observed = vec![n_periods; n_units];
            for &u in &units {
                observed[u] = rng.random_range(first..=last);
            }
            ObservationMask::staggered(n_periods, &observed)
        }
    }
}

/// One mask per replication, in replication order.
pub fn make_pseudo_masks(plan: &PseudoTreatmentPlan, n_units: usize, n_periods: usize) -> Result<Vec<ObservationMask>> {
    plan.validate(n_units, n_periods)?;
    (0..plan.replications)
        .map(|r| pseudo_mask(plan, n_units, n_periods, r))
        .collect()
}
