//! Panel outcome matrices, observation masks, masked projections and the
//! singular-value norm family.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Dense `N x T` matrix of real values: units in rows, periods in columns.
///
/// Every stored entry is finite. Outcome, low-rank estimate and noise
/// matrices all use this type.
#[derive(Clone, PartialEq)]
pub struct PanelMatrix(DMatrix<f64>);

impl PanelMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "panel must have at least one unit and one period".into(),
            ));
        }
        for unit in 0..values.nrows() {
            for period in 0..values.ncols() {
                if !values[(unit, period)].is_finite() {
                    return Err(Error::NonFinite { unit, period });
                }
            }
        }
        Ok(PanelMatrix(values))
    }

    /// Wraps a matrix known to be finite and non-empty.
    pub(crate) fn from_matrix_unchecked(values: DMatrix<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        PanelMatrix(values)
    }

    pub fn zeros(n_units: usize, n_periods: usize) -> Self {
        PanelMatrix(DMatrix::zeros(n_units, n_periods))
    }

    pub fn from_fn(n_units: usize, n_periods: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n_units, n_periods, f))
    }

    /// Builds a panel from row slices (one slice per unit).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::InvalidArgument("rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(n, t, |i, j| rows[i][j]))
    }

    pub fn n_units(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, unit: usize, period: usize) -> f64 {
        self.0[(unit, period)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        PanelMatrix(self.0.transpose())
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::dims(shape, self.shape()));
        }
        Ok(())
    }
}

impl fmt::Debug for PanelMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PanelMatrix{:?}", self.0)
    }
}

/// How a mask was constructed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskStructure {
    General,
    /// Units in `treated_units` are missing from `first_treated_period` (0-based) onwards.
    Block {
        first_treated_period: usize,
        treated_units: Vec<usize>,
    },
    /// Unit `i` is observed for its first `observed_periods[i]` periods.
    Staggered {
        observed_periods: Vec<usize>,
    },
}

/// The set of observed (unit, period) pairs; its complement is the set of
/// missing (treated) cells.
///
/// Membership is stored as a dense boolean grid; the observed pairs are also
/// kept as a sorted list for sampling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask {
    n_units: usize,
    n_periods: usize,
    observed: Vec<bool>,
    pairs: Vec<(usize, usize)>,
    structure: MaskStructure,
}

impl ObservationMask {
    fn build(n_units: usize, n_periods: usize, observed: Vec<bool>, structure: MaskStructure) -> Result<Self> {
        if n_units == 0 || n_periods == 0 {
            return Err(Error::InvalidArgument(
                "mask must have at least one unit and one period".into(),
            ));
        }
        debug_assert_eq!(observed.len(), n_units * n_periods);
        let pairs = (0..n_units)
            .flat_map(|i| (0..n_periods).map(move |t| (i, t)))
            .filter(|&(i, t)| observed[i * n_periods + t])
            .collect();
        Ok(ObservationMask {
            n_units,
            n_periods,
            observed,
            pairs,
            structure,
        })
    }

    /// Every cell observed.
    pub fn full(n_units: usize, n_periods: usize) -> Result<Self> {
        Self::build(
            n_units,
            n_periods,
            vec![true; n_units * n_periods],
            MaskStructure::General,
        )
    }

    pub fn from_fn(
        n_units: usize,
        n_periods: usize,
        mut is_observed: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let observed = (0..n_units)
            .flat_map(|i| (0..n_periods).map(move |t| (i, t)))
            .map(|(i, t)| is_observed(i, t))
            .collect();
        Self::build(n_units, n_periods, observed, MaskStructure::General)
    }

    /// Mask whose observed set is exactly `pairs` (0-based).
    pub fn from_pairs(n_units: usize, n_periods: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut observed = vec![false; n_units * n_periods];
        for &(i, t) in pairs {
            if i >= n_units || t >= n_periods {
                return Err(Error::InvalidArgument(format!(
                    "pair ({i}, {t}) outside {n_units}x{n_periods} grid"
                )));
            }
            observed[i * n_periods + t] = true;
        }
        Self::build(n_units, n_periods, observed, MaskStructure::General)
    }

    /// Block missingness: `treated_units` are missing from `first_treated_period`
    /// (0-based, so the 1-based `T0` is `first_treated_period + 1`) through the last period.
    pub fn block(
        n_units: usize,
        n_periods: usize,
        first_treated_period: usize,
        treated_units: &[usize],
    ) -> Result<Self> {
        if first_treated_period >= n_periods {
            return Err(Error::InvalidArgument(format!(
                "first treated period {first_treated_period} outside 0..{n_periods}"
            )));
        }
        let mut treated: Vec<usize> = treated_units.to_vec();
        treated.sort_unstable();
        treated.dedup();
        if let Some(&bad) = treated.iter().find(|&&u| u >= n_units) {
            return Err(Error::InvalidArgument(format!(
                "treated unit {bad} outside 0..{n_units}"
            )));
        }
        let mut observed = vec![true; n_units * n_periods];
        for &i in &treated {
            for t in first_treated_period..n_periods {
                observed[i * n_periods + t] = false;
            }
        }
        Self::build(
            n_units,
            n_periods,
            observed,
            MaskStructure::Block {
                first_treated_period,
                treated_units: treated,
            },
        )
    }

    /// Staggered adoption: unit `i` is observed for periods `0..observed_periods[i]`.
    ///
    /// Each entry is the 1-based adoption time `t_i` in `1..=T`; a never-treated
    /// unit has `t_i = T` (its row is fully observed).
    pub fn staggered(n_periods: usize, observed_periods: &[usize]) -> Result<Self> {
        let n_units = observed_periods.len();
        if let Some((i, &ti)) = observed_periods
            .iter()
            .enumerate()
            .find(|(_, &ti)| ti == 0 || ti > n_periods)
        {
            return Err(Error::InvalidArgument(format!(
                "adoption time {ti} of unit {i} outside 1..={n_periods}"
            )));
        }
        let observed = observed_periods
            .iter()
            .flat_map(|&ti| (0..n_periods).map(move |t| t < ti))
            .collect();
        Self::build(
            n_units,
            n_periods,
            observed,
            MaskStructure::Staggered {
                observed_periods: observed_periods.to_vec(),
            },
        )
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_units, self.n_periods)
    }

    pub fn structure(&self) -> &MaskStructure {
        &self.structure
    }

    pub fn is_observed(&self, unit: usize, period: usize) -> bool {
        self.observed[unit * self.n_periods + period]
    }

    /// Sorted (row-major) list of observed pairs.
    pub fn observed_pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn missing_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n_units)
            .flat_map(|i| (0..self.n_periods).map(move |t| (i, t)))
            .filter(|&(i, t)| !self.is_observed(i, t))
            .collect()
    }

    pub fn n_observed(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_missing(&self) -> usize {
        self.n_units * self.n_periods - self.pairs.len()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.n_missing() == 0
    }

    pub fn row_fully_observed(&self, unit: usize) -> bool {
        (0..self.n_periods).all(|t| self.is_observed(unit, t))
    }

    /// Number of control units: rows with every period observed.
    pub fn n_control(&self) -> usize {
        (0..self.n_units).filter(|&i| self.row_fully_observed(i)).count()
    }

    pub fn observed_periods_of(&self, unit: usize) -> Vec<usize> {
        (0..self.n_periods).filter(|&t| self.is_observed(unit, t)).collect()
    }

    pub fn missing_periods_of(&self, unit: usize) -> Vec<usize> {
        (0..self.n_periods).filter(|&t| !self.is_observed(unit, t)).collect()
    }

    /// Treatment indicator `W`: 1 on missing cells, 0 on observed ones.
    pub fn treatment_indicator(&self) -> PanelMatrix {
        PanelMatrix(DMatrix::from_fn(self.n_units, self.n_periods, |i, t| {
            if self.is_observed(i, t) {
                0.0
            } else {
                1.0
            }
        }))
    }

    /// Mask of the transposed panel (periods become rows).
    pub fn transpose(&self) -> Self {
        let (n, t) = self.shape();
        let observed = (0..t)
            .flat_map(|p| (0..n).map(move |u| (u, p)))
            .map(|(u, p)| self.is_observed(u, p))
            .collect();
        // Structure tags describe row-wise patterns and do not survive transposition.
        Self::build(t, n, observed, MaskStructure::General).expect("non-empty grid")
    }

    pub(crate) fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::dims(self.shape(), shape));
        }
        Ok(())
    }
}

/// `P_O(A)`: keeps observed entries, zeroes the rest.
pub fn project_observed(a: &PanelMatrix, mask: &ObservationMask) -> Result<PanelMatrix> {
    mask.check_shape(a.shape())?;
    Ok(PanelMatrix(masked(a.as_matrix(), mask, true)))
}

/// `P_O^perp(A)`: keeps missing entries, zeroes the observed ones.
pub fn project_missing(a: &PanelMatrix, mask: &ObservationMask) -> Result<PanelMatrix> {
    mask.check_shape(a.shape())?;
    Ok(PanelMatrix(masked(a.as_matrix(), mask, false)))
}

pub(crate) fn masked(a: &DMatrix<f64>, mask: &ObservationMask, keep_observed: bool) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, t| {
        if mask.is_observed(i, t) == keep_observed {
            a[(i, t)]
        } else {
            0.0
        }
    })
}

/// Members of the singular-value / entrywise norm family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    /// `(sum sigma_i^p)^(1/p)`, `p >= 1`.
    Schatten(f64),
    Frobenius,
    /// Number of singular values above `RANK_TOLERANCE * sigma_1`.
    Rank,
    Nuclear,
    Operator,
    Max,
    ElementwiseL1,
}

pub fn norm(a: &PanelMatrix, kind: NormKind) -> Result<f64> {
    let m = a.as_matrix();
    let value = match kind {
        NormKind::Schatten(p) => {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("Schatten norm needs p >= 1, got {p}")));
            }
            singular_values(m).iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p)
        }
        NormKind::Frobenius => m.norm(),
        NormKind::Rank => numerical_rank(&singular_values(m)) as f64,
        NormKind::Nuclear => singular_values(m).iter().sum(),
        NormKind::Operator => singular_values(m).first().copied().unwrap_or(0.0),
        NormKind::Max => a.max_abs(),
        NormKind::ElementwiseL1 => m.iter().map(|v| v.abs()).sum(),
    };
    Ok(value)
}

pub(crate) fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular values in descending order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    to_faer(m).singular_values().expect("SVD of a finite matrix converges")
}

/// Count of `s_i > RANK_TOLERANCE * s_1` for a descending spectrum.
pub(crate) fn numerical_rank(descending: &[f64]) -> usize {
    match descending.first() {
        Some(&top) if top > 0.0 => descending.iter().filter(|&&s| s > RANK_TOLERANCE * top).count(),
        _ => 0,
    }
}
