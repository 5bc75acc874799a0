//! Evaluation on pseudo-treated cells: seeded synthetic panels, masks that
//! hide cells of a fully observed panel, RMSE comparisons across
//! estimators, and CSV/JSON input and output.

mod compare;
mod io;
mod plan;
mod synthetic;

pub use compare::{rmse_on_missing, run_comparison, run_comparison_against, EstimatorSummary, EvalReport};
pub use io::{
    load_panel_csv, read_cell_covariates, read_panel_csv, read_time_covariates, read_unit_covariates,
    write_imputed_csv, write_json, write_panel_csv, write_replications_csv, write_report, CovariateTable, PanelData,
};
pub use plan::{make_pseudo_masks, pseudo_mask, AdoptionDistribution, PlanMode, PseudoTreatmentPlan};
pub use synthetic::{generate_synthetic, NoiseModel, SyntheticPanel, SyntheticSpec};
