use std::collections::BTreeMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{pseudo_mask, PseudoTreatmentPlan};
use crate::baselines::{impute, EstimatorSpec};
use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};

/// `sqrt(mean over missing cells of (estimate - truth)^2)`.
pub fn rmse_on_missing(estimate: &PanelMatrix, truth: &PanelMatrix, mask: &ObservationMask) -> Result<f64> {
    estimate.check_shape(mask.shape())?;
    truth.check_shape(mask.shape())?;
    let missing = mask.missing_pairs();
    if missing.is_empty() {
        return Err(Error::InvalidArgument("no missing cells to score".into()));
    }
    let sse: f64 = missing
        .iter()
        .map(|&(i, t)| {
            let d = estimate.get(i, t) - truth.get(i, t);
            d * d
        })
        .sum();
    Ok((sse / missing.len() as f64).sqrt())
}

/// Results of one estimator across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    /// Mean over scored replications; `None` when every replication was skipped.
    pub mean_rmse: Option<f64>,
    /// Sample standard deviation over scored replications divided by `sqrt(n_reps)`.
    pub se: Option<f64>,
    pub n_reps: usize,
    pub skipped: usize,
    /// One entry per replication; `None` where the estimator was skipped.
    pub per_replication: Vec<Option<f64>>,
    /// Rank of the nuclear-norm fit per replication.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effective_ranks: Vec<Option<usize>>,
    /// Reason for the first skip, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub estimators: Vec<EstimatorSummary>,
    pub config_echo: BTreeMap<String, String>,
    pub seed: u64,
}

impl EvalReport {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }
}

enum Outcome {
    Scored { rmse: f64, rank: Option<usize> },
    Skipped(String),
}

/// Hides cells of the fully observed `y` per `plan`, imputes them with every
/// estimator and scores against `y`.
pub fn run_comparison(y: &PanelMatrix, plan: &PseudoTreatmentPlan, estimators: &[EstimatorSpec]) -> Result<EvalReport> {
    run_comparison_against(y, y, plan, estimators)
}

/// Like [`run_comparison`], but scores against `truth` (e.g. the noiseless
/// part of a synthetic panel) while the estimators see `y`.
///
/// Replications run in parallel; each draws its mask from `(plan.seed, index)`
/// and results are gathered in index order, so the report does not depend on
/// the thread count.
pub fn run_comparison_against(
    y: &PanelMatrix,
    truth: &PanelMatrix,
    plan: &PseudoTreatmentPlan,
    estimators: &[EstimatorSpec],
) -> Result<EvalReport> {
    truth.check_shape(y.shape())?;
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators to compare".into()));
    }
    let (n, t) = y.shape();
    plan.validate(n, t)?;
    let outcomes: Vec<Vec<Outcome>> = (0..plan.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Outcome>> {
            let mask = pseudo_mask(plan, n, t, r)?;
            Ok(estimators
                .iter()
                .map(|spec| run_one(spec, y, truth, &mask, r))
                .collect())
        })
        .collect::<Result<_>>()?;

    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(k, spec)| summarize(spec, outcomes.iter().map(|row| &row[k])))
        .collect();
    Ok(EvalReport {
        estimators: summaries,
        config_echo: BTreeMap::new(),
        seed: plan.seed,
    })
}

fn run_one(spec: &EstimatorSpec, y: &PanelMatrix, truth: &PanelMatrix, mask: &ObservationMask, rep: usize) -> Outcome {
    if mask.n_missing() == 0 {
        return Outcome::Skipped("mask hides no cells".into());
    }
    match impute(spec, y, mask).and_then(|imp| Ok((rmse_on_missing(&imp.imputed, truth, mask)?, imp.effective_rank))) {
        Ok((rmse, rank)) => {
            debug!("replication {rep}: {spec} rmse {rmse:.6}");
            Outcome::Scored { rmse, rank }
        }
        Err(e) => {
            warn!("replication {rep}: {spec} skipped: {e}");
            Outcome::Skipped(e.to_string())
        }
    }
}

fn summarize<'a>(spec: &EstimatorSpec, outcomes: impl Iterator<Item = &'a Outcome>) -> EstimatorSummary {
    let mut per_replication = Vec::new();
    let mut ranks = Vec::new();
    let mut skip_reason = None;
    for o in outcomes {
        match o {
            Outcome::Scored { rmse, rank } => {
                per_replication.push(Some(*rmse));
                ranks.push(*rank);
            }
            Outcome::Skipped(why) => {
                per_replication.push(None);
                ranks.push(None);
                skip_reason.get_or_insert_with(|| why.clone());
            }
        }
    }
    let scored: Vec<f64> = per_replication.iter().flatten().copied().collect();
    let n = scored.len();
    let mean = (n > 0).then(|| scored.iter().sum::<f64>() / n as f64);
    let se = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            let var = scored.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        }
    });
    let effective_ranks = if matches!(spec, EstimatorSpec::McNnm(_)) {
        ranks
    } else {
        Vec::new()
    };
    EstimatorSummary {
        name: spec.name().to_string(),
        mean_rmse: mean,
        se,
        n_reps: n,
        skipped: per_replication.len() - n,
        per_replication,
        effective_ranks,
        skip_reason,
    }
}
