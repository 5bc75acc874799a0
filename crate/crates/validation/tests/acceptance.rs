//! The fourteen acceptance criteria, run in order with one verdict line each.
//! The process exits nonzero when any criterion fails.

use std::time::Duration;

use mcnnm::baselines::{en_lambda_max, fit_did, fit_elastic_net, fit_simplex_weights, kkt_residual};
use mcnnm::harness::{
    generate_synthetic, run_comparison, run_comparison_against, AdoptionDistribution, PlanMode, PseudoTreatmentPlan,
    SyntheticSpec,
};
use mcnnm::theory::{
    bound_lattice, run_lemma_suite, theorem_bound, LemmaOutcome, LemmaSuiteConfig, TheoremBoundConfig,
};
use mcnnm::{
    descent_audit, factorize, fit_mcnnm, lambda_max, norm, shrink, EstimatorSpec, FitResult, McnnmConfig, NormKind,
    ObservationMask, PanelMatrix,
};
use mcnnm_validation::{
    additive_panel, gaussian_matrix, is_connected, rank_one, rng, simplex_grid_3, uniform_missing_mask, Runner, Verdict,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn fixed_point_identity(fits: &mut Vec<FitResult>) -> Verdict {
    let mut worst = 0.0_f64;
    for seed in 0..20 {
        let mut g = rng(100 + seed);
        let (n, t) = (12 + (seed as usize % 5), 9 + (seed as usize % 7));
        let y = PanelMatrix::new(gaussian_matrix(&mut g, n, t)).unwrap();
        let mask = ObservationMask::full(n, t).unwrap();
        let lambda = [0.05, 0.2, 0.6][seed as usize % 3] * lambda_max(&y, &mask).unwrap();
        let fit = fit_mcnnm(&y, &mask, &McnnmConfig::with_lambda(lambda)).unwrap();
        let expected = shrink(&y, lambda * (n * t) as f64 / 2.0);
        worst = worst.max(max_abs_diff(fit.estimate.as_matrix(), expected.as_matrix()));
        fits.push(fit);
    }
    Verdict::new(
        worst < 1e-8,
        format!("max deviation {worst:.2e} over 20 panels (tol 1e-8)"),
    )
}

fn annihilation() -> Verdict {
    let mut worst = 0.0_f64;
    for seed in 0..20 {
        let mut g = rng(200 + seed);
        let (n, t) = (10 + seed as usize, 8 + (seed as usize * 3) % 11);
        let y = PanelMatrix::new(gaussian_matrix(&mut g, n, t)).unwrap();
        let mask = uniform_missing_mask(&mut g, n, t, n * t / 4);
        let fit = fit_mcnnm(&y, &mask, &McnnmConfig::with_lambda(lambda_max(&y, &mask).unwrap())).unwrap();
        worst = worst.max(fit.estimate.max_abs());
    }
    Verdict::new(
        worst < 1e-10,
        format!("max |entry| {worst:.2e} over 20 masked panels (tol 1e-10)"),
    )
}

fn noiseless_recovery(fits: &mut Vec<FitResult>) -> Verdict {
    let mut errors = Vec::new();
    for seed in 0..10 {
        let mut g = rng(400 + seed);
        let l_star = rank_one(&mut g, 20, 20, 20.0);
        let mask = uniform_missing_mask(&mut g, 20, 20, 120);
        let lambda = 0.01 * lambda_max(&l_star, &mask).unwrap();
        let fit = fit_mcnnm(&l_star, &mask, &McnnmConfig::with_lambda(lambda)).unwrap();
        errors.push((fit.estimate.as_matrix() - l_star.as_matrix()).norm() / l_star.frobenius());
        fits.push(fit);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    Verdict::new(
        worst < 0.05,
        format!("worst relative error {worst:.4} over 10 seeds (tol 0.05)"),
    )
}

fn error_inequality_suite() -> Verdict {
    let checks = run_lemma_suite(&LemmaSuiteConfig::default()).unwrap();
    let holds = checks.iter().filter(|c| c.outcome == LemmaOutcome::Holds).count();
    let worst = checks.iter().map(|c| c.lhs / c.rhs).fold(0.0, f64::max);
    Verdict::new(
        holds == 50 && checks.len() == 50,
        format!("{holds}/{} instances hold; largest lhs/rhs {worst:.3}", checks.len()),
    )
}

fn factorization_identity(fits: &mut Vec<FitResult>) -> Verdict {
    for seed in 0..12 {
        let mut g = rng(600 + seed);
        let (n, t) = (15 + seed as usize, 12);
        let y = PanelMatrix::new(gaussian_matrix(&mut g, n, t)).unwrap();
        let mask = uniform_missing_mask(&mut g, n, t, n * t / 3);
        let lambda = [0.02, 0.1, 0.4][seed as usize % 3] * lambda_max(&y, &mask).unwrap();
        fits.push(fit_mcnnm(&y, &mask, &McnnmConfig::with_lambda(lambda)).unwrap());
    }
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for fit in fits.iter().filter(|f| f.converged) {
        let pair = factorize(fit);
        let nuclear = norm(&fit.estimate, NormKind::Nuclear).unwrap();
        let (a2, b2) = (pair.a.norm_squared(), pair.b.norm_squared());
        worst = worst.max((a2 - nuclear).abs()).max((b2 - nuclear).abs());
        checked += 1;
    }
    Verdict::new(
        worst < 1e-8 && checked > 0,
        format!("max | ||A||^2 or ||B||^2 - ||L||_* | = {worst:.2e} over {checked} converged fits (tol 1e-8)"),
    )
}

fn simplex_oracle() -> Verdict {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_feasibility = 0.0_f64;
    for seed in 0..10 {
        let mut g = rng(700 + seed);
        let t0 = 12;
        let x = gaussian_matrix(&mut g, t0, 3);
        let truth = [
            g.random_range(0.0..1.0),
            g.random_range(0.0..1.0),
            g.random_range(0.0..1.0),
        ];
        let total: f64 = truth.iter().sum();
        let y = DVector::from_fn(t0, |r, _| {
            (0..3).map(|k| x[(r, k)] * truth[k] / total).sum::<f64>() + 0.3 * mcnnm_validation::normal(&mut g)
        });
        let fit = fit_simplex_weights(&x, &y).unwrap();
        let objective = |w: &[f64]| (&y - &x * DVector::from_column_slice(w)).norm_squared();
        let grid_min = simplex_grid_3(1413)
            .map(|w| objective(&w))
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max(objective(&fit.weights) - grid_min);
        let sum_err = (fit.weights.iter().sum::<f64>() - 1.0).abs();
        let neg = fit.weights.iter().map(|w| (-w).max(0.0)).fold(0.0, f64::max);
        worst_feasibility = worst_feasibility.max(sum_err).max(neg);
    }
    Verdict::new(
        worst_gap <= 1e-6 && worst_feasibility <= 1e-8,
        format!(
            "objective minus best of 1,000,405 grid points <= {worst_gap:.2e} (tol 1e-6); simplex violation {worst_feasibility:.1e} (tol 1e-8)"
        ),
    )
}

fn elastic_net_kkt() -> Verdict {
    let mut worst = 0.0_f64;
    for seed in 0..50u64 {
        let mut g = rng(800 + seed);
        let alpha = [0.0, 0.5, 1.0][seed as usize % 3];
        let (n, p) = if seed % 5 == 4 { (15, 25) } else { (40, 8) };
        let x = gaussian_matrix(&mut g, n, p);
        let beta = DVector::from_fn(p, |j, _| if j < 3 { 1.0 + j as f64 } else { 0.0 });
        let z = &x * beta + DVector::from_fn(n, |_, _| 0.5 * mcnnm_validation::normal(&mut g)).add_scalar(2.0);
        let lambda = [0.02, 0.1, 0.4][(seed as usize / 3) % 3] * en_lambda_max(&x, &z, alpha);
        let fit = fit_elastic_net(&x, &z, lambda, alpha).unwrap();
        worst = worst.max(kkt_residual(&x, &z, lambda, alpha, &fit.weights));
    }
    Verdict::new(
        worst < 1e-6,
        format!("max KKT residual {worst:.2e} over 50 fits (tol 1e-6)"),
    )
}

fn shape_adaptivity() -> Verdict {
    let estimators: Vec<EstimatorSpec> = ["hr-en", "vt-en", "mc-nnm"]
        .iter()
        .map(|s| s.parse::<EstimatorSpec>().unwrap().with_seed(9))
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (n, t)) in [(490, 10), (70, 70), (10, 490)].into_iter().enumerate() {
        let panel = generate_synthetic(&SyntheticSpec::new(n, t, 3, 1.0, 900 + k as u64)).unwrap();
        let plan = PseudoTreatmentPlan::simultaneous(n / 2, 0.5, 20, 950 + k as u64);
        let report = run_comparison(&panel.y, &plan, &estimators).unwrap();
        let mean = |name: &str| {
            report
                .estimator(name)
                .and_then(|e| e.mean_rmse)
                .unwrap_or(f64::INFINITY)
        };
        let (hr, vt, mc) = (mean("hr-en"), mean("vt-en"), mean("mc-nnm"));
        let order_ok = match n.cmp(&t) {
            std::cmp::Ordering::Greater => hr < vt,
            std::cmp::Ordering::Less => vt < hr,
            std::cmp::Ordering::Equal => true,
        };
        let mc_ok = mc <= 1.1 * hr.min(vt);
        ok &= order_ok && mc_ok;
        parts.push(format!("{n}x{t}: hr-en {hr:.4} vt-en {vt:.4} mc-nnm {mc:.4}"));
    }
    Verdict::new(ok, parts.join("; "))
}

fn staggered_reproduction() -> Verdict {
    let panel = generate_synthetic(&SyntheticSpec::new(38, 31, 3, 1.0, 1000)).unwrap();
    let plan = PseudoTreatmentPlan::staggered(35, 20, 1001);
    let estimators: Vec<EstimatorSpec> = ["did", "hr-en", "vt-en", "sc-adh", "mc-nnm"]
        .iter()
        .map(|s| s.parse::<EstimatorSpec>().unwrap().with_seed(1002))
        .collect();
    let report = run_comparison(&panel.y, &plan, &estimators).unwrap();
    let mc = report
        .estimator("mc-nnm")
        .and_then(|e| e.mean_rmse)
        .unwrap_or(f64::INFINITY);
    let mut ok = true;
    let mut parts = vec![format!("mc-nnm {mc:.4}")];
    for e in report.estimators.iter().filter(|e| e.name != "mc-nnm") {
        match e.mean_rmse {
            Some(m) => {
                ok &= mc <= m;
                parts.push(format!("{} {m:.4}", e.name));
            }
            None => parts.push(format!("{} skipped", e.name)),
        }
    }
    Verdict::new(ok, parts.join(", "))
}

fn consistency_trend() -> Verdict {
    let mc: Vec<EstimatorSpec> = vec!["mc-nnm".parse::<EstimatorSpec>().unwrap().with_seed(1102)];
    let mut means = Vec::new();
    for (k, n) in [20usize, 40, 80].into_iter().enumerate() {
        let panel = generate_synthetic(&SyntheticSpec::new(n, n, 2, 0.5, 1100 + k as u64)).unwrap();
        // Half the units adopt in ceil(n/2)..n-1, so exactly half the rows stay complete.
        let plan = PseudoTreatmentPlan {
            mode: PlanMode::Staggered {
                n_treated: n / 2,
                adoption: AdoptionDistribution::Uniform {
                    first: n.div_ceil(2),
                    last: n - 1,
                },
            },
            replications: 20,
            seed: 1110 + k as u64,
        };
        let report = run_comparison_against(&panel.y, &panel.l_star, &plan, &mc).unwrap();
        means.push(report.estimator("mc-nnm").and_then(|e| e.mean_rmse).unwrap_or(f64::NAN));
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    Verdict::new(
        decreasing,
        format!(
            "mean RMSE against L* at N=T=20/40/80: {:.4} / {:.4} / {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

fn did_exactness() -> Verdict {
    let mut worst = 0.0_f64;
    for seed in 0..20u64 {
        let mut g = rng(1200 + seed);
        let (n, t) = (8 + seed as usize % 6, 7 + seed as usize % 5);
        let y = additive_panel(&mut g, n, t);
        let mask = loop {
            let m = match seed % 3 {
                0 => uniform_missing_mask(&mut g, n, t, n * t * 2 / 5),
                1 => {
                    let units = sample(&mut g, n, n / 2).into_vec();
                    ObservationMask::block(n, t, t / 2, &units).unwrap()
                }
                _ => {
                    let adoption: Vec<usize> = (0..n).map(|i| if i < 2 { t } else { g.random_range(1..=t) }).collect();
                    ObservationMask::staggered(t, &adoption).unwrap()
                }
            };
            if is_connected(&m) && m.n_missing() > 0 {
                break m;
            }
        };
        let fit = fit_did(&y, &mask).unwrap();
        let missing = mask.missing_pairs();
        let sse: f64 = missing
            .iter()
            .map(|&(i, p)| (fit.imputed.get(i, p) - y.get(i, p)).powi(2))
            .sum();
        worst = worst.max((sse / missing.len() as f64).sqrt());
    }
    Verdict::new(
        worst < 1e-8,
        format!("max RMSE {worst:.2e} over 20 connected masks (tol 1e-8)"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, threads: &str| -> (u8, Vec<u8>, Vec<u8>) {
        let json = dir.path().join(format!("{tag}.json"));
        let csv = dir.path().join(format!("{tag}.csv"));
        let code = mcnnm_cli::run_from(
            [
                "mcnnm",
                "--quiet",
                "--threads",
                threads,
                "--seed",
                "13",
                "compare",
                "--synthetic",
                "n=24,t=18,rank=2,sigma=0.5",
                "--plan",
                "staggered:nt=10",
                "--estimators",
                "did,hr-en,vt-en,sc-adh,mc-nnm",
                "--replications",
                "6",
                "--output",
                json.to_str().unwrap(),
                "--csv",
                csv.to_str().unwrap(),
            ],
            false,
        );
        (
            code,
            std::fs::read(&json).unwrap_or_default(),
            std::fs::read(&csv).unwrap_or_default(),
        )
    };
    let first = run("first", "1");
    let second = run("second", "1");
    let wide = run("wide", "8");
    let ok = first.0 == 0 && !first.1.is_empty() && first == second && first == wide;
    Verdict::new(
        ok,
        format!(
            "exit codes {}/{}/{}; report {} bytes; identical across reruns: {}, across 1 vs 8 threads: {}",
            first.0,
            second.0,
            wide.0,
            first.1.len(),
            first == second,
            first == wide
        ),
    )
}

fn bound_arithmetic() -> Verdict {
    let cfg = TheoremBoundConfig {
        c_constant: 1.0,
        sigma: 1.0,
        l_max: 1.0,
        rank: 1.0,
        p_c: 1.0,
    };
    let value = theorem_bound(&cfg, 100, 100).unwrap();
    // Third term sqrt(log^3(200) / 100) dominates the other two, sqrt(log(200) / 100).
    let log200 = 200f64.ln();
    let oracle = (log200.powi(3) / 100.0).sqrt().max((log200 / 100.0).sqrt());
    let matches = (value - oracle).abs() <= 5e-6 * oracle && format!("{value:.5}") == "1.21957";
    let base = TheoremBoundConfig { p_c: 0.5, ..cfg };
    let lattice = bound_lattice(
        &base,
        &[10, 20, 40, 80, 160, 320, 640],
        &[0.25, 0.5, 1.0],
        &[0.25, 0.5, 1.0, 2.0, 4.0],
    )
    .unwrap();
    let failing: Vec<String> = lattice
        .iter()
        .filter(|d| !d.passed())
        .map(|d| {
            format!(
                "{} {}/{} ({})",
                d.parameter,
                d.violations,
                d.checked,
                d.example.as_deref().unwrap_or("")
            )
        })
        .collect();
    let detail = if failing.is_empty() {
        format!("bound {value:.6} vs oracle {oracle:.6}; lattice monotone in all six parameters")
    } else {
        format!(
            "bound {value:.6} vs oracle {oracle:.6}; lattice violations: {}",
            failing.join("; ")
        )
    };
    Verdict::new(matches && failing.is_empty(), detail)
}

fn main() {
    let mut runner = Runner::new();
    let mut fits = Vec::new();
    runner.check(1, "fixed point equals shrinkage on full panels", secs(5), || {
        fixed_point_identity(&mut fits)
    });
    runner.check(2, "penalty at lambda_max gives the zero matrix", None, annihilation);
    runner.check(4, "noiseless rank-1 recovery", secs(10), || {
        noiseless_recovery(&mut fits)
    });
    runner.check(
        5,
        "error inequality holds on 50 seeded instances",
        secs(60),
        error_inequality_suite,
    );
    runner.check(6, "factor norms equal the nuclear norm", None, || {
        factorization_identity(&mut fits)
    });
    runner.check(7, "simplex weights match a dense grid oracle", None, simplex_oracle);
    runner.check(8, "elastic-net KKT conditions", None, elastic_net_kkt);
    runner.check(9, "shape adaptivity on rank-3 panels", secs(600), shape_adaptivity);
    runner.check(
        10,
        "staggered adoption: mc-nnm vs baselines",
        secs(300),
        staggered_reproduction,
    );
    runner.check(11, "RMSE decreases with panel size", None, consistency_trend);
    runner.check(12, "DID exact on additive panels", None, did_exactness);
    runner.check(13, "compare output is byte-identical", None, determinism);
    runner.check(14, "bound arithmetic and monotonicity lattice", None, bound_arithmetic);
    // Last, so that every fit above has been audited.
    runner.check(3, "objective never increases on any fit", None, || {
        let audit = descent_audit();
        Verdict::new(
            audit.violations == 0 && audit.fits > 0,
            format!(
                "{} audited fits, {} violations (slack 1e-10); in-library assertion active: {}",
                audit.fits,
                audit.violations,
                cfg!(debug_assertions)
            ),
        )
    });
    let passed = runner.rows().iter().filter(|r| r.passed).count();
    println!("acceptance: {passed}/{} criteria passed", runner.rows().len());
    if !runner.all_passed() {
        std::process::exit(1);
    }
}
