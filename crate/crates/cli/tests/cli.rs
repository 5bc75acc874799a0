use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mcnnm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcnnm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn did_fills_the_two_by_two_example_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("did.csv");
    std::fs::write(&input, "unit,time,outcome,treated\na,1,1,0\na,2,2,0\nb,1,3,0\nb,2,,1\n").unwrap();
    let out = dir.path().join("out.csv");
    let meta = dir.path().join("meta.json");
    let o = mcnnm(&[
        "impute",
        "--input",
        path(&input),
        "--estimator",
        "did",
        "--output",
        path(&out),
        "--metadata",
        path(&meta),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "unit,time,outcome,imputed\na,1,1,0\na,2,2,0\nb,1,3,0\nb,2,4,1\n");
    assert_eq!(read_json(&meta)["n_missing"], 1);
}

#[test]
fn horizontal_regression_without_enough_controls_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("stag.csv");
    let mut csv = String::from("unit,time,outcome,treated\n");
    // Two complete units, two units adopting at periods 4 and 5.
    for (u, adopt) in [("a", 7), ("b", 7), ("c", 4), ("d", 5)] {
        for t in 1..=6 {
            let treated = (t >= adopt) as u8;
            csv.push_str(&format!(
                "{u},{t},{},{treated}\n",
                (t * 3 + u.len()) as f64 * 0.7 + u.as_bytes()[0] as f64
            ));
        }
    }
    std::fs::write(&input, csv).unwrap();
    let out = dir.path().join("out.csv");
    let o = mcnnm(&[
        "impute",
        "--input",
        path(&input),
        "--estimator",
        "hr",
        "--output",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(
        msg.contains("training observations") && msg.contains("regressors"),
        "{msg}"
    );
}

#[test]
fn parse_errors_exit_one_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("dup.csv");
    std::fs::write(&input, "unit,time,outcome,treated\na,1,1,0\na,1,2,0\n").unwrap();
    let out = dir.path().join("out.csv");
    let o = mcnnm(&[
        "impute",
        "--input",
        path(&input),
        "--estimator",
        "did",
        "--output",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = mcnnm(&[
        "impute",
        "--input",
        path(&input),
        "--estimator",
        "lasso",
        "--output",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(mcnnm(&["--help"]).status.code(), Some(0));
}

fn compare_args<'a>(out: &'a str, threads: &'a str) -> Vec<&'a str> {
    vec![
        "--threads",
        threads,
        "--seed",
        "7",
        "compare",
        "--synthetic",
        "n=14,t=12,rank=2,sigma=0.5",
        "--plan",
        "simultaneous:nt=4,t0=0.5",
        "--estimators",
        "did,hr-en,vt-en,sc-adh,mc-nnm",
        "--replications",
        "3",
        "--output",
        out,
    ]
}

#[test]
fn compare_lists_exactly_the_requested_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = mcnnm(&compare_args(path(&out), "1"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&out);
    let names: Vec<&str> = report["estimators"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["did", "hr-en", "vt-en", "sc-adh", "mc-nnm"]);
    for e in report["estimators"].as_array().unwrap() {
        for key in ["mean_rmse", "se", "n_reps", "skipped"] {
            assert!(e.get(key).is_some(), "missing {key}");
        }
    }
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config_echo"]["cli.replications"], "3");
}

#[test]
fn compare_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let oa = mcnnm(&compare_args(path(&a), "1"));
    let ob = mcnnm(&compare_args(path(&b), "4"));
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn sweep_prints_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.json");
    let o = mcnnm(&[
        "compare",
        "--synthetic",
        "n=12,t=10,rank=1,sigma=0.3",
        "--plan",
        "simultaneous:nt=3",
        "--sweep",
        "t0_ratio=0.3:0.9:4",
        "--estimators",
        "did,mc-nnm",
        "--lambda",
        "max-scaled:0.05",
        "--replications",
        "2",
        "--output",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.lines().next().unwrap().contains("t0_ratio"));
    let report = read_json(&out);
    assert_eq!(report["parameter"], "t0_ratio");
    assert_eq!(report["points"].as_array().unwrap().len(), 4);
}

#[test]
fn infeasible_plan_exits_two() {
    let o = mcnnm(&[
        "compare",
        "--synthetic",
        "n=6,t=8,rank=1,sigma=1",
        "--plan",
        "staggered:nt=6",
        "--replications",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no control"));
}

#[test]
fn compare_rejects_panels_with_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("did.csv");
    std::fs::write(&input, "unit,time,outcome,treated\na,1,1,0\na,2,2,0\nb,1,3,0\nb,2,,1\n").unwrap();
    let o = mcnnm(&["compare", "--input", path(&input), "--plan", "simultaneous:nt=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fully observed"));
}

#[test]
fn simulate_then_impute_with_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let truth = dir.path().join("truth.csv");
    let o = mcnnm(&[
        "--seed",
        "3",
        "simulate",
        "--synthetic",
        "n=16,t=12,rank=2,sigma=0.1",
        "--plan",
        "staggered:nt=6",
        "--output",
        path(&panel),
        "--truth",
        path(&truth),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = std::fs::read_to_string(&panel).unwrap();
    assert_eq!(rows.lines().count(), 1 + 16 * 12);
    assert!(rows.lines().any(|l| l.ends_with(",1")));
    let out = dir.path().join("imputed.csv");
    let meta = dir.path().join("meta.json");
    let o = mcnnm(&[
        "impute",
        "--input",
        path(&panel),
        "--output",
        path(&out),
        "--metadata",
        path(&meta),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_json(&meta);
    assert_eq!(m["estimator"], "mc-nnm");
    assert_eq!(m["lambda"], m["cv"]["lambda_star"]);
    assert!(m["cv"]["table"].as_array().unwrap().len() > 10);
    assert_eq!(m["converged"], true);
}

#[test]
fn covariates_need_an_explicit_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let o = mcnnm(&[
        "simulate",
        "--synthetic",
        "n=8,t=6,rank=1,sigma=0.1",
        "--plan",
        "staggered:nt=3",
        "--output",
        path(&panel),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let cells = dir.path().join("cells.csv");
    let mut csv = String::from("unit,time,x1\n");
    for u in 0..8 {
        for t in 0..6 {
            csv.push_str(&format!("{u},{t},{}\n", ((u * 7 + t * 3) % 5) as f64 - 2.0));
        }
    }
    std::fs::write(&cells, csv).unwrap();
    let out = dir.path().join("out.csv");
    let meta = dir.path().join("meta.json");
    let base = [
        "impute",
        "--input",
        path(&panel),
        "--output",
        path(&out),
        "--metadata",
        path(&meta),
        "--cell-covariates",
        path(&cells),
    ];
    let o = mcnnm(&base);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("auto"));
    let mut args = base.to_vec();
    args.extend(["--lambda", "max-scaled:0.1"]);
    let o = mcnnm(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_json(&meta);
    assert_eq!(m["covariates"]["cell_names"][0], "x1");
    assert_eq!(m["covariates"]["cell_coefficients"].as_array().unwrap().len(), 1);
}

#[test]
fn check_theory_rejects_zero_pc() {
    let o = mcnnm(&["check-theory", "--pc", "0", "--instances", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--pc"));
}

#[test]
fn check_theory_json_summary_schema() {
    let o = mcnnm(&["check-theory", "--instances", "4", "--json"]);
    let summary: Value = serde_json::from_slice(&o.stdout).expect("stdout is JSON");
    let lemma = &summary["lemma"];
    assert_eq!(lemma["instances"], 4);
    assert_eq!(lemma["holds"], 4);
    assert_eq!(lemma["passed"], true);
    let lattice = summary["lattice"].as_array().unwrap();
    let params: Vec<&str> = lattice.iter().map(|d| d["parameter"].as_str().unwrap()).collect();
    assert_eq!(params, ["n", "t", "p_c", "sigma", "rank", "l_max"]);
    for d in lattice {
        for key in ["expected", "checked", "violations", "passed"] {
            assert!(d.get(key).is_some(), "missing {key}");
        }
        assert_eq!(d["passed"], d["violations"] == 0);
    }
    // The bound is not monotone in the panel dimensions, so the overall verdict fails.
    assert_eq!(summary["passed"], false);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_is_echoed_into_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# provenance\nexperiment=shape\n").unwrap();
    let out = dir.path().join("r.json");
    let o = mcnnm(&[
        "--config",
        path(&cfg),
        "compare",
        "--synthetic",
        "n=8,t=6,rank=1,sigma=0.2",
        "--plan",
        "simultaneous:nt=2",
        "--estimators",
        "did",
        "--replications",
        "2",
        "--output",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_json(&out)["config_echo"]["experiment"], "shape");
}
