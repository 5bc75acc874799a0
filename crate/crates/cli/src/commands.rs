use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::info;
use mcnnm::covariate::{fit_covariate_model, CovariateConfig, CovariateSet};
use mcnnm::harness::{
    generate_synthetic, load_panel_csv, pseudo_mask, read_cell_covariates, read_time_covariates, read_unit_covariates,
    run_comparison_against, write_imputed_csv, write_json, write_panel_csv, write_report, EvalReport, PanelData,
    PseudoTreatmentPlan,
};
use mcnnm::soft_impute::{cross_validate, CvOutcome};
use mcnnm::theory::{
    bound_lattice, run_lemma_suite, LatticeDirection, LemmaOutcome, LemmaSuiteConfig, TheoremBoundConfig,
};
use mcnnm::{lambda_max, CvConfig, EstimatorSpec, LambdaChoice, McnnmConfig, McnnmSpec, PanelMatrix};
use serde::Serialize;

use crate::{CheckTheoryArgs, Cli, Command, CompareArgs, CvArgs, ImputeArgs, Score, SimulateArgs};

/// Why a command stopped; decides the exit code.
#[derive(Debug)]
pub(crate) enum Failure {
    Usage(String),
    Library(mcnnm::Error),
    ChecksFailed(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Library(e) if e.is_infeasible() => 2,
            Failure::Library(_) => 1,
            Failure::ChecksFailed(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::ChecksFailed(m) => f.write_str(m),
            Failure::Library(e) => write!(f, "{e}"),
        }
    }
}

impl From<mcnnm::Error> for Failure {
    fn from(e: mcnnm::Error) -> Self {
        Failure::Library(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Library(e.into())
    }
}

type Outcome = Result<(), Failure>;

// Independent streams for the three kinds of randomness under one --seed.
fn data_seed(seed: u64) -> u64 {
    seed
}

fn mask_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn tuning_seed(seed: u64) -> u64 {
    seed.wrapping_add(2)
}

struct Context {
    seed: u64,
    quiet: bool,
    echo: BTreeMap<String, String>,
}

impl Context {
    /// Stdout, or a sink under `--quiet`.
    fn stdout(&self) -> Box<dyn Write> {
        if self.quiet {
            Box::new(io::sink())
        } else {
            Box::new(io::stdout().lock())
        }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.echo.insert(format!("cli.{key}"), value.to_string());
    }
}

pub(crate) fn run(cli: Cli) -> Outcome {
    let echo = match &cli.config {
        Some(path) => crate::args::read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut ctx = Context {
        seed: cli.seed,
        quiet: cli.quiet,
        echo,
    };
    ctx.note("seed", cli.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {} worker threads: {e}", cli.threads)))?;
    pool.install(|| match cli.command {
        Command::Impute(a) => impute(a, ctx),
        Command::Cv(a) => cv(a, ctx),
        Command::Simulate(a) => simulate(a, ctx),
        Command::Compare(a) => compare(a, ctx),
        Command::CheckTheory(a) => check_theory(a, ctx),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Library(io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()))
}

fn write_json_to<T: Serialize>(path: Option<&Path>, value: &T) -> Outcome {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            write_json(&mut w, value)?;
            w.flush()?;
        }
        None => write_json(io::stdout().lock(), value)?,
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

#[derive(Serialize)]
struct CovariateSummary {
    unit_names: Vec<String>,
    time_names: Vec<String>,
    cell_names: Vec<String>,
    lambda_h: f64,
    intercept: f64,
    unit_effects: Vec<f64>,
    period_effects: Vec<f64>,
    /// Row-major `P x Q` interaction coefficients.
    interaction: Vec<Vec<f64>>,
    cell_coefficients: Vec<f64>,
    dropped_cell_columns: Vec<usize>,
}

#[derive(Serialize)]
struct ImputeMetadata {
    estimator: String,
    n_units: usize,
    n_periods: usize,
    n_missing: usize,
    lambda: Option<f64>,
    effective_rank: Option<usize>,
    iterations: Option<usize>,
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv: Option<CvOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covariates: Option<CovariateSummary>,
    config_echo: BTreeMap<String, String>,
    seed: u64,
}

fn impute(a: ImputeArgs, mut ctx: Context) -> Outcome {
    ctx.note("command", "impute");
    ctx.note("input", a.input.display());
    ctx.note("estimator", a.estimator.name());
    let data = load_panel_csv(&a.input)?;
    let (n, t) = data.y.shape();
    info!("loaded {n} x {t} panel with {} missing cells", data.mask.n_missing());
    let with_covariates = a.unit_covariates.is_some() || a.time_covariates.is_some() || a.cell_covariates.is_some();
    let is_mcnnm = matches!(a.estimator, EstimatorSpec::McNnm(_));
    if with_covariates && !is_mcnnm {
        return Err(Failure::Usage("covariates are supported by mc-nnm only".into()));
    }
    if is_mcnnm {
        ctx.note("lambda", lambda_text(a.lambda));
    }
    let mut meta = ImputeMetadata {
        estimator: a.estimator.name().to_string(),
        n_units: n,
        n_periods: t,
        n_missing: data.mask.n_missing(),
        lambda: None,
        effective_rank: None,
        iterations: None,
        converged: None,
        cv: None,
        covariates: None,
        config_echo: BTreeMap::new(),
        seed: ctx.seed,
    };
    let imputed = if with_covariates {
        impute_with_covariates(&a, &data, &mut meta, &mut ctx)?
    } else {
        let spec = match a.estimator {
            EstimatorSpec::McNnm(m) => EstimatorSpec::McNnm(McnnmSpec {
                lambda: a.lambda,
                n_folds: a.folds,
                ..m
            }),
            other => other,
        }
        .with_seed(tuning_seed(ctx.seed));
        let imp = mcnnm::impute(&spec, &data.y, &data.mask)?;
        meta.lambda = imp.lambda;
        meta.effective_rank = imp.effective_rank;
        meta.iterations = imp.iterations;
        meta.converged = imp.converged;
        meta.cv = imp.cv;
        imp.imputed
    };
    let mut w = create(&a.output)?;
    write_imputed_csv(&mut w, &data, &imputed)?;
    w.flush()?;
    meta.config_echo = ctx.echo;
    write_json_to(a.metadata.as_deref(), &meta)
}

fn lambda_text(l: LambdaChoice) -> String {
    match l {
        LambdaChoice::Auto => "auto".into(),
        LambdaChoice::Fixed(v) => format!("{v}"),
        LambdaChoice::MaxScaled(f) => format!("max-scaled:{f}"),
    }
}

fn impute_with_covariates(
    a: &ImputeArgs,
    data: &PanelData,
    meta: &mut ImputeMetadata,
    ctx: &mut Context,
) -> Result<PanelMatrix, Failure> {
    let lambda = match a.lambda {
        LambdaChoice::Auto => {
            return Err(Failure::Usage(
                "--lambda auto is not available with covariates; pass a number or max-scaled:<factor>".into(),
            ))
        }
        LambdaChoice::Fixed(v) => v,
        LambdaChoice::MaxScaled(f) => f * lambda_max(&data.y, &data.mask)?,
    };
    let mut cov = CovariateSet::none();
    let mut summary_names = (Vec::new(), Vec::new(), Vec::new());
    if let Some(p) = &a.unit_covariates {
        ctx.note("unit_covariates", p.display());
        let (names, x) = read_unit_covariates(File::open(p)?, &data.units)?;
        summary_names.0 = names;
        cov.x = Some(x);
    }
    if let Some(p) = &a.time_covariates {
        ctx.note("time_covariates", p.display());
        let (names, z) = read_time_covariates(File::open(p)?, &data.periods)?;
        summary_names.1 = names;
        cov.z = Some(z);
    }
    if let Some(p) = &a.cell_covariates {
        ctx.note("cell_covariates", p.display());
        let table = read_cell_covariates(File::open(p)?, &data.units, &data.periods)?;
        summary_names.2 = table.names;
        cov.v = table.values;
    }
    ctx.note("lambda_h", a.lambda_h);
    ctx.note("fixed_effects", !a.no_fixed_effects);
    let cfg = CovariateConfig {
        fixed_effects: !a.no_fixed_effects,
        ..CovariateConfig::default()
    };
    let fit = fit_covariate_model(&data.y, &data.mask, &cov, lambda, a.lambda_h, &cfg)?;
    meta.lambda = Some(fit.lambda_l);
    meta.effective_rank = Some(fit.effective_rank());
    meta.iterations = Some(fit.iterations);
    meta.converged = Some(fit.converged);
    let h = &fit.h_hat;
    meta.covariates = Some(CovariateSummary {
        unit_names: summary_names.0,
        time_names: summary_names.1,
        cell_names: summary_names.2,
        lambda_h: fit.lambda_h,
        intercept: fit.intercept,
        unit_effects: fit.gamma.clone(),
        period_effects: fit.delta.clone(),
        interaction: (0..h.nrows()).map(|p| h.row(p).iter().copied().collect()).collect(),
        cell_coefficients: fit.beta.clone(),
        dropped_cell_columns: fit.dropped_columns.clone(),
    });
    Ok(fit.fitted(&cov))
}

fn cv(a: CvArgs, mut ctx: Context) -> Outcome {
    ctx.note("command", "cv");
    ctx.note("input", a.input.display());
    ctx.note("folds", a.folds);
    let data = load_panel_csv(&a.input)?;
    let mut cfg = CvConfig::with_default_grid(&data.y, &data.mask, tuning_seed(ctx.seed))?;
    cfg.n_folds = a.folds;
    let outcome = cross_validate(&data.y, &data.mask, &cfg, &McnnmConfig::default())?;
    let mut out = ctx.stdout();
    writeln!(out, "{:>14}  {:>14}", "lambda", "mean_mse")?;
    for row in &outcome.table {
        let mark = if row.lambda == outcome.lambda_star { " *" } else { "" };
        writeln!(out, "{:>14.6e}  {:>14.6e}{mark}", row.lambda, row.mean_mse)?;
    }
    writeln!(out, "lambda* = {:.6e}", outcome.lambda_star)?;
    if let Some(p) = &a.output {
        #[derive(Serialize)]
        struct CvReport<'a> {
            cv: &'a CvOutcome,
            config_echo: &'a BTreeMap<String, String>,
            seed: u64,
        }
        write_json_to(
            Some(p),
            &CvReport {
                cv: &outcome,
                config_echo: &ctx.echo,
                seed: ctx.seed,
            },
        )?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs, mut ctx: Context) -> Outcome {
    ctx.note("command", "simulate");
    let spec = mcnnm::harness::SyntheticSpec {
        seed: data_seed(ctx.seed),
        ..a.synthetic
    };
    let panel = generate_synthetic(&spec)?;
    let (n, t) = panel.y.shape();
    let mask = match a.plan {
        Some(mode) => pseudo_mask(
            &PseudoTreatmentPlan {
                mode,
                replications: 1,
                seed: mask_seed(ctx.seed),
            },
            n,
            t,
            0,
        )?,
        None => mcnnm::ObservationMask::full(n, t)?,
    };
    let mut w = create(&a.output)?;
    write_panel_csv(&mut w, &PanelData::from_matrix(panel.y, mask)?)?;
    w.flush()?;
    if let Some(p) = &a.truth {
        let mut w = create(p)?;
        write_panel_csv(
            &mut w,
            &PanelData::from_matrix(panel.l_star, mcnnm::ObservationMask::full(n, t)?)?,
        )?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    value: f64,
    report: EvalReport,
}

#[derive(Serialize)]
struct SweepReport {
    parameter: String,
    points: Vec<SweepPoint>,
    config_echo: BTreeMap<String, String>,
    seed: u64,
}

fn compare(a: CompareArgs, mut ctx: Context) -> Outcome {
    ctx.note("command", "compare");
    let (y, truth) = match (&a.input, &a.synthetic) {
        (Some(path), _) => {
            ctx.note("input", path.display());
            if a.score == Score::Truth {
                return Err(Failure::Usage("--score truth needs a --synthetic panel".into()));
            }
            let data = load_panel_csv(path)?;
            if !data.mask.is_fully_observed() {
                return Err(Failure::Usage(format!(
                    "compare needs a fully observed panel; {} cells are missing",
                    data.mask.n_missing()
                )));
            }
            (data.y.clone(), data.y)
        }
        (None, Some(spec)) => {
            let spec = mcnnm::harness::SyntheticSpec {
                seed: data_seed(ctx.seed),
                ..spec.clone()
            };
            ctx.note("synthetic", format!("{spec:?}"));
            let panel = generate_synthetic(&spec)?;
            let truth = if a.score == Score::Truth {
                panel.l_star
            } else {
                panel.y.clone()
            };
            (panel.y, truth)
        }
        (None, None) => return Err(Failure::Usage("compare needs --input or --synthetic".into())),
    };
    let estimators: Vec<EstimatorSpec> = a
        .estimators
        .0
        .iter()
        .map(|e| match e {
            EstimatorSpec::McNnm(m) => EstimatorSpec::McNnm(McnnmSpec {
                lambda: a.lambda,
                ..m.clone()
            }),
            other => other.clone(),
        })
        .map(|e| e.with_seed(tuning_seed(ctx.seed)))
        .collect();
    ctx.note(
        "estimators",
        estimators.iter().map(|e| e.name()).collect::<Vec<_>>().join(","),
    );
    ctx.note("lambda", lambda_text(a.lambda));
    ctx.note("plan", format!("{:?}", a.plan));
    ctx.note("replications", a.replications);
    ctx.note("score", format!("{:?}", a.score).to_lowercase());
    let seed = ctx.seed;
    let plan_for = |mode| PseudoTreatmentPlan {
        mode,
        replications: a.replications,
        seed: mask_seed(seed),
    };
    let finish = |mut report: EvalReport, echo: &BTreeMap<String, String>| {
        report.config_echo = echo.clone();
        report.seed = seed;
        report
    };
    let mut out = ctx.stdout();
    match &a.sweep {
        None => {
            let report = finish(
                run_comparison_against(&y, &truth, &plan_for(a.plan), &estimators)?,
                &ctx.echo,
            );
            writeln!(
                out,
                "{:<8}  {:>10}  {:>10}  {:>5}  {:>7}",
                "estimator", "mean_rmse", "se", "reps", "skipped"
            )?;
            for e in &report.estimators {
                writeln!(
                    out,
                    "{:<8}  {:>10}  {:>10}  {:>5}  {:>7}",
                    e.name,
                    fmt_opt(e.mean_rmse),
                    fmt_opt(e.se),
                    e.n_reps,
                    e.skipped
                )?;
            }
            if let Some(p) = &a.output {
                write_report(&report, p, a.csv.as_deref())?;
            } else if let Some(p) = &a.csv {
                let mut w = create(p)?;
                mcnnm::harness::write_replications_csv(&mut w, &report)?;
                w.flush()?;
            }
        }
        Some(sweep) => {
            ctx.note("sweep", format!("{}={:?}", sweep.key.name(), sweep.values));
            let mut points = Vec::with_capacity(sweep.values.len());
            for &value in &sweep.values {
                info!("sweep {} = {value}", sweep.key.name());
                let plan = plan_for(sweep.apply(a.plan, value)?);
                let report = finish(run_comparison_against(&y, &truth, &plan, &estimators)?, &ctx.echo);
                points.push(SweepPoint { value, report });
            }
            write!(out, "{:>10}", sweep.key.name())?;
            for e in &estimators {
                write!(out, "  {:>10}", e.name())?;
            }
            writeln!(out)?;
            for p in &points {
                write!(out, "{:>10.4}", p.value)?;
                for e in &p.report.estimators {
                    write!(out, "  {:>10}", fmt_opt(e.mean_rmse))?;
                }
                writeln!(out)?;
            }
            if let Some(path) = &a.output {
                let report = SweepReport {
                    parameter: sweep.key.name().to_string(),
                    points,
                    config_echo: ctx.echo.clone(),
                    seed: ctx.seed,
                };
                write_json_to(Some(path), &report)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LemmaSummary {
    instances: usize,
    holds: usize,
    fails: usize,
    not_applicable: usize,
    passed: bool,
}

#[derive(Serialize)]
struct LatticeSummary {
    #[serde(flatten)]
    direction: LatticeDirection,
    passed: bool,
}

#[derive(Serialize)]
struct TheorySummary {
    lemma: LemmaSummary,
    lattice: Vec<LatticeSummary>,
    passed: bool,
    config_echo: BTreeMap<String, String>,
    seed: u64,
}

/// Dimensions and scale values of the bound lattice.
const LATTICE_SIZES: [usize; 7] = [10, 20, 40, 80, 160, 320, 640];
const LATTICE_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

fn check_theory(a: CheckTheoryArgs, mut ctx: Context) -> Outcome {
    ctx.note("command", "check-theory");
    if !(a.pc > 0.0 && a.pc <= 1.0) {
        return Err(Failure::Usage(format!("--pc must lie in (0, 1], got {}", a.pc)));
    }
    for (k, v) in [("instances", a.instances), ("n", a.n), ("t", a.t), ("rank", a.rank)] {
        ctx.note(k, v);
    }
    ctx.note("sigma", a.sigma);
    ctx.note("pc", a.pc);
    let suite = LemmaSuiteConfig {
        instances: a.instances,
        n: a.n,
        t: a.t,
        rank: a.rank,
        sigma: a.sigma,
        seed: ctx.seed,
    };
    let checks = run_lemma_suite(&suite).map_err(|e| match e {
        mcnnm::Error::InvalidArgument(m) => Failure::Usage(m),
        other => Failure::Library(other),
    })?;
    let count = |o: LemmaOutcome| checks.iter().filter(|c| c.outcome == o).count();
    let lemma = LemmaSummary {
        instances: checks.len(),
        holds: count(LemmaOutcome::Holds),
        fails: count(LemmaOutcome::Fails),
        not_applicable: count(LemmaOutcome::NotApplicable),
        passed: count(LemmaOutcome::Holds) == checks.len(),
    };
    let base = TheoremBoundConfig {
        c_constant: 1.0,
        sigma: 1.0,
        l_max: 1.0,
        rank: 1.0,
        p_c: a.pc,
    };
    let mut pcs = vec![a.pc / 4.0, a.pc / 2.0, a.pc];
    pcs.dedup();
    let lattice: Vec<LatticeSummary> = bound_lattice(&base, &LATTICE_SIZES, &pcs, &LATTICE_SCALES)?
        .into_iter()
        .map(|d| LatticeSummary {
            passed: d.passed(),
            direction: d,
        })
        .collect();
    let passed = lemma.passed && lattice.iter().all(|d| d.passed);
    let mut out = ctx.stdout();
    let summary = TheorySummary {
        lemma,
        lattice,
        passed,
        config_echo: ctx.echo,
        seed: ctx.seed,
    };
    if a.json {
        write_json_to(None, &summary)?;
    } else {
        let l = &summary.lemma;
        writeln!(
            out,
            "lemma   {}  {}/{} hold ({} fail, {} not applicable)",
            verdict(l.passed),
            l.holds,
            l.instances,
            l.fails,
            l.not_applicable
        )?;
        for d in &summary.lattice {
            let dir = &d.direction;
            write!(
                out,
                "lattice {}  {:<6} {:?}: {}/{} steps violate",
                verdict(d.passed),
                dir.parameter,
                dir.expected,
                dir.violations,
                dir.checked
            )?;
            match &dir.example {
                Some(e) => writeln!(out, " (first: {e})")?,
                None => writeln!(out)?,
            }
        }
        writeln!(out, "check-theory {}", verdict(summary.passed))?;
    }
    if summary.passed {
        Ok(())
    } else {
        Err(Failure::ChecksFailed("one or more theory checks failed".into()))
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}
