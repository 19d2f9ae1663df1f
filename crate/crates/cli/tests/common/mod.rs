//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use crm_cli::run_command;
use serde_json::Value;

pub fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

pub fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<String> = std::iter::once("crm".to_string())
        .chain(args.iter().map(|a| a.to_string()))
        .collect();
    let code = run_command(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn run_ok(args: &[&str]) -> Value {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "{args:?}: {err}");
    serde_json::from_str(&out).unwrap()
}

pub fn golden_cases() -> Vec<(&'static str, Vec<String>)> {
    let p = fixture("panel.csv");
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        ("estimate_alpha", s(&["estimate", "--input", &p, "--measure", "alpha:250", "--trials", "1000", "--scheme", "uniform:50", "--seed", "7"])),
        ("estimate_tail_exact", s(&["estimate", "--input", &p, "--measure", "tail:0.1"])),
        ("estimate_mixture_mc", s(&["estimate", "--input", &p, "--measure", "mix:0.5@0.25,0.5@1", "--trials", "400", "--scheme", "geometric:0.97", "--seed", "3"])),
        ("estimate_timechange", s(&["estimate", "--input", &p, "--measure", "beta:20,4", "--trials", "300", "--scheme", "timechange:1.3,8", "--seed", "11"])),
        ("contrib_bootstrap", s(&["contrib", "--input", &p, "--measure", "alpha:4", "--trials", "500", "--scheme", "bootstrap:3", "--seed", "3", "--positions", &fixture("positions.csv")])),
        ("contrib_exact", s(&["contrib", "--input", &p, "--measure", "beta:8,2"])),
        ("factor_kernel", s(&["factor", "--input", &p, "--factors", &fixture("factors.csv"), "--measure", "tail:0.2"])),
        ("factor_knn", s(&["factor", "--input", &p, "--factors", &fixture("factors.csv"), "--measure", "alpha:5", "--regression", "knn:9", "--factor-columns", "level"])),
        ("optimize", s(&["optimize", "--panel", &p, "--rewards", &fixture("rewards.csv"), "--limits", &fixture("limits.json"), "--factors", &fixture("factors.csv"), "--seed", "1", "--restarts", "4", "--iterations", "600"])),
        ("allocate", s(&["allocate", "--input", &p, "--measure", "beta:8,2"])),
        ("kappa", s(&["kappa", "--input", &p, "--measure", "tail:0.25", "--positions", &fixture("positions.csv")])),
        ("equilibrium", s(&["equilibrium", "--firm", &fixture("firm.json"), "--seed", "1", "--restarts", "4", "--iterations", "600"])),
        ("announce", s(&["announce", "--input", &p, "--measure", "beta:6,2", "--scheme", "uniform:60", "--trials", "20", "--seed", "9"])),
    ]
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"))
}

/// Runs every golden case twice; returns the names whose re-run or frozen
/// report differs. With `bless`, rewrites the frozen reports instead.
pub fn check_golden(bless: bool) -> Vec<String> {
    let mut bad = Vec::new();
    for (name, args) in golden_cases() {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (c1, first, _) = run(&refs);
        let (c2, second, _) = run(&refs);
        if c1 != 0 || c2 != 0 || first != second {
            bad.push(format!("{name} (rerun)"));
            continue;
        }
        let path = golden_path(name);
        if bless {
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, &first).unwrap();
        } else if fs::read_to_string(&path).ok().as_deref() != Some(first.as_str()) {
            bad.push(format!("{name} (frozen report)"));
        }
    }
    bad
}
