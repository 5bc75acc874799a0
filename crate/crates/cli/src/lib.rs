//! Command-line driver for `mcnnm`: impute panels, select penalties,
//! simulate data, compare estimators on pseudo-treated cells and run the
//! numeric theory checks.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 infeasible problem or a
//! failed check.

mod args;
mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcnnm::harness::{PlanMode, SyntheticSpec};
use mcnnm::{EstimatorSpec, LambdaChoice};

use args::{parse_estimators, parse_plan, parse_sweep, parse_synthetic, Sweep};

#[derive(Parser, Debug)]
#[command(
    name = "mcnnm",
    version,
    about = "Nuclear-norm matrix completion for causal panel data"
)]
struct Cli {
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for every random draw (data, masks, cross-validation folds).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Do not print summaries to stdout; files are still written.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// `key=value` file echoed into every report.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fill the missing cells of a panel CSV.
    Impute(ImputeArgs),
    /// Cross-validate the nuclear-norm penalty and print the error table.
    Cv(CvArgs),
    /// Write a synthetic low-rank panel, optionally with a pseudo-treatment mask.
    Simulate(SimulateArgs),
    /// Compare estimators on pseudo-treated cells of a fully observed panel.
    Compare(CompareArgs),
    /// Run the error-inequality batch and the bound monotonicity lattice.
    CheckTheory(CheckTheoryArgs),
}

#[derive(Args, Debug)]
struct ImputeArgs {
    /// Panel CSV with columns unit,time,outcome,treated.
    #[arg(long)]
    input: PathBuf,
    /// did, hr, vt, hr-en, vt-en, sc-adh or mc-nnm.
    #[arg(long, default_value = "mc-nnm", value_parser = parse_estimator)]
    estimator: EstimatorSpec,
    /// Penalty for mc-nnm: auto, a number, or max-scaled:<factor>.
    #[arg(long, default_value = "auto", value_parser = parse_lambda)]
    lambda: LambdaChoice,
    /// Cross-validation folds for --lambda auto.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Imputed panel CSV (unit,time,outcome,imputed).
    #[arg(long)]
    output: PathBuf,
    /// Fit metadata JSON; printed to stdout when omitted.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Unit covariates CSV (unit,<names...>); needs --time-covariates.
    #[arg(long)]
    unit_covariates: Option<PathBuf>,
    /// Time covariates CSV (time,<names...>); needs --unit-covariates.
    #[arg(long)]
    time_covariates: Option<PathBuf>,
    /// Unit-time covariates CSV (unit,time,<names...>).
    #[arg(long)]
    cell_covariates: Option<PathBuf>,
    /// Penalty on the unit-by-time interaction coefficients.
    #[arg(long, default_value_t = 0.0)]
    lambda_h: f64,
    /// Leave out the intercept and unit and period effects.
    #[arg(long)]
    no_fixed_effects: bool,
}

#[derive(Args, Debug)]
struct CvArgs {
    /// Panel CSV with columns unit,time,outcome,treated.
    #[arg(long)]
    input: PathBuf,
    /// Number of random observed-cell subsets.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Full cross-validation outcome as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// n=..,t=..,rank=..,sigma=..[,rho=..][,scale=..]
    #[arg(long, value_parser = parse_synthetic)]
    synthetic: SyntheticSpec,
    /// Marks the cells of one pseudo-treatment draw as treated.
    #[arg(long, value_parser = parse_plan)]
    plan: Option<PlanMode>,
    /// Panel CSV to write.
    #[arg(long)]
    output: PathBuf,
    /// Also write the noiseless panel here.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Score {
    /// Against the panel the estimators see.
    Observed,
    /// Against the noiseless part of a synthetic panel.
    Truth,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Fully observed panel CSV.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Generate the panel instead: n=..,t=..,rank=..,sigma=..[,rho=..][,scale=..]
    #[arg(long, value_parser = parse_synthetic)]
    synthetic: Option<SyntheticSpec>,
    /// simultaneous:nt=<k>[,t0=<ratio>] or staggered:nt=<k>[,first=..,last=..]
    #[arg(long, value_parser = parse_plan)]
    plan: PlanMode,
    /// Comma-separated estimator names.
    #[arg(long, default_value = "did,hr-en,vt-en,sc-adh,mc-nnm", value_parser = parse_estimator_list)]
    estimators: EstimatorList,
    /// Penalty for mc-nnm: auto, a number, or max-scaled:<factor>.
    #[arg(long, default_value = "auto", value_parser = parse_lambda)]
    lambda: LambdaChoice,
    /// Pseudo-treatment draws per comparison.
    #[arg(long, default_value_t = 20)]
    replications: usize,
    /// Repeat the comparison over a plan parameter: key=start:stop:count.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<Sweep>,
    #[arg(long, value_enum, default_value_t = Score::Observed)]
    score: Score,
    /// Report JSON.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-replication CSV (not with --sweep).
    #[arg(long, conflicts_with = "sweep")]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckTheoryArgs {
    /// Instances in the error-inequality batch.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Units per instance.
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Periods per instance.
    #[arg(long, default_value_t = 30)]
    t: usize,
    /// Rank of the true matrix.
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Largest control probability on the lattice's p_c grid; must lie in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pc: f64,
    /// Print a JSON summary instead of text.
    #[arg(long)]
    json: bool,
}

/// Newtype so clap does not treat the list as repeated values.
#[derive(Clone, Debug)]
struct EstimatorList(Vec<EstimatorSpec>);

fn parse_estimator(s: &str) -> Result<EstimatorSpec, String> {
    s.parse().map_err(|e: mcnnm::Error| e.to_string())
}

fn parse_estimator_list(s: &str) -> Result<EstimatorList, String> {
    parse_estimators(s).map(EstimatorList)
}

fn parse_lambda(s: &str) -> Result<LambdaChoice, String> {
    s.parse().map_err(|e: mcnnm::Error| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. With `init_logger`, `-v` flags configure an `env_logger` on stderr.
pub fn run_from<I, T>(args: I, init_logger: bool) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if init_logger {
        let level = match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        };
        env_logger::Builder::new().filter_level(level).init();
    }
    match commands::run(cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
