mod common;

use std::fs;
use std::path::Path;

use common::{check_golden, fixture, golden_cases, run, run_ok};
use crm_cli::io::{ingest_panel, IngestOptions};
use crm_core::scenario_risk::weighted_var;
use crm_core::{ScenarioDistribution, WeightingMeasure};

/// Re-runs are byte-identical and match the frozen report. Set
/// `CRM_BLESS=1` to rewrite the frozen reports.
#[test]
fn golden_reports_for_every_subcommand() {
    let bless = std::env::var("CRM_BLESS").is_ok_and(|v| v == "1");
    let covered: std::collections::BTreeSet<String> = golden_cases().into_iter().map(|(_, a)| a[0].clone()).collect();
    for cmd in ["estimate", "contrib", "factor", "optimize", "allocate", "kappa", "equilibrium", "announce"] {
        assert!(covered.contains(cmd), "no golden case for {cmd}");
    }
    let bad = check_golden(bless);
    assert!(bad.is_empty(), "golden mismatches: {bad:?}");
}

#[test]
fn announced_arrays_reproduce_in_process_contributions() {
    let p = fixture("panel.csv");
    let pos = fixture("positions.csv");
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.json");
    let (code, text, err) = run(&[
        "announce", "--input", &p, "--positions", &pos, "--measure", "alpha:12", "--scheme", "bootstrap:2,0.98",
        "--trials", "400", "--seed", "5",
    ]);
    assert_eq!(code, 0, "{err}");
    fs::write(&ann, text).unwrap();
    let from_file = run_ok(&["contrib", "--input", &p, "--positions", &pos, "--announced", ann.to_str().unwrap()]);
    let direct = run_ok(&[
        "contrib", "--input", &p, "--positions", &pos, "--measure", "alpha:12", "--scheme", "bootstrap:2,0.98",
        "--trials", "400", "--seed", "5",
    ]);
    assert_eq!(from_file["contributions"], direct["contributions"]);
    assert_eq!(from_file["total_risk"], direct["total_risk"]);
}

#[test]
fn allocation_adds_up_on_three_assets() {
    for m in ["tail:0.05", "beta:12,3", "mix:0.3@0.1,0.7@0.5"] {
        let r = run_ok(&["allocate", "--input", &fixture("panel.csv"), "--measure", m, "--positions", &fixture("positions.csv")]);
        let sum: f64 = r["contributions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        let total = r["total_risk"].as_f64().unwrap();
        assert!((sum - total).abs() <= 1e-10, "{m}: {sum} vs {total}");
    }
}

#[test]
fn exhaustive_tail_estimate_is_the_empirical_value() {
    let p = fixture("panel.csv");
    let panel = ingest_panel(Path::new(&p), &IngestOptions::default()).unwrap();
    let w = panel.portfolio(&[1.0; 3]).unwrap();
    for lambda in [0.05, 0.1, 0.5] {
        let spec = format!("tail:{lambda}");
        let r = run_ok(&["estimate", "--input", &p, "--measure", &spec, "--scheme", &format!("uniform:{}", panel.len()), "--trials", "exhaustive"]);
        let oracle = weighted_var(&ScenarioDistribution::uniform(w.clone()).unwrap(), &WeightingMeasure::tail(lambda).unwrap()).unwrap();
        assert!((r["risk"].as_f64().unwrap() - oracle).abs() <= 1e-12);
    }
}

#[test]
fn exit_codes() {
    let p = fixture("panel.csv");
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["estimate", "--input", &p]).0, 2);
    assert_eq!(run(&["estimate", "--input", &p, "--measure", "tail:2"]).0, 2);
    assert_eq!(run(&["estimate", "--input", &p, "--measure", "alpha:3", "--trials", "10", "--scheme", "uniform:10"]).0, 2);
    assert_eq!(run(&["estimate", "--input", "/nonexistent.csv", "--measure", "tail:0.1"]).0, 1);
    // Window longer than the history is a data error.
    assert_eq!(run(&["estimate", "--input", &p, "--measure", "alpha:3", "--trials", "10", "--scheme", "uniform:1000", "--seed", "1"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn blank_cell_is_reported_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("p.csv");
    fs::write(&f, "date,a,b\n1,1,2\n2,3,\n").unwrap();
    let (code, _, err) = run(&["estimate", "--input", f.to_str().unwrap(), "--measure", "tail:0.5"]);
    assert_eq!(code, 1);
    assert!(err.contains("row 3") && err.contains("column b"), "{err}");
}

#[test]
fn plot_data_files() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("curves");
    run_ok(&["estimate", "--input", &fixture("panel.csv"), "--measure", "tail:0.1", "--emit-plot-data", prefix.to_str().unwrap()]);
    let cdf = fs::read_to_string(dir.path().join("curves_cdf.csv")).unwrap();
    let tail = fs::read_to_string(dir.path().join("curves_tail.csv")).unwrap();
    assert!(cdf.starts_with("x,F\n") && cdf.lines().count() == 81);
    assert!(tail.starts_with("lambda,risk\n") && tail.lines().count() == 101);
    let last: f64 = cdf.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(last, 1.0);
}

#[test]
fn thread_cap_does_not_change_reports() {
    let p = fixture("panel.csv");
    let args = ["estimate", "--input", &p, "--measure", "alpha:20", "--trials", "2000", "--scheme", "uniform:80", "--seed", "4"];
    let (_, all, _) = run(&args);
    // Other tests may observe the cap while it is set; their reports do not
    // depend on it either.
    std::env::set_var("CRM_THREADS", "1");
    let (_, one, _) = run(&args);
    std::env::remove_var("CRM_THREADS");
    assert_eq!(all, one);
}
