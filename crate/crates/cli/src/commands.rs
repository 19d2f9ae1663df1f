use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use crm_core::contribution::{capital_allocation, risk_contribution, tail_kappa};
use crm_core::factor::{factor_contribution, factor_risk, FactorSample, Regression};
use crm_core::mc_estimators::{batch_standard_error, contribution_from_selection, select_smallest, Selection};
use crm_core::optimize::{solve_portfolio, OptimizationProblem, RiskLimit, SolverOptions};
use crm_core::sampling::{generate_draws, standardize, DrawMatrix, DrawScheme, EwmaConfig};
use crm_core::scenario_risk::weighted_var;
use crm_core::sharing::{compute_equilibrium, EquilibriumTolerances};
use crm_core::{JointPanel, RiskError, ScenarioDistribution, WeightingMeasure};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};
use crate::io::{
    ingest_factors, ingest_panel, parse_measure, read_announced, read_firm, read_limits, read_positions,
    read_rewards, IngestOptions,
};
use crate::report::to_json;

#[derive(Debug, Parser)]
#[command(name = "crm", version, about = "Coherent risk measurement on scenario panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Risk of the portfolio, exactly or by Monte Carlo.
    Estimate(EstimateArgs),
    /// Risk contributions of each position to the portfolio.
    Contrib(ContribArgs),
    /// Factor risk and factor contributions.
    Factor(FactorArgs),
    /// Maximize reward under risk limits.
    Optimize(OptimizeArgs),
    /// Capital allocation of the portfolio risk to positions.
    Allocate(ExactArgs),
    /// Tail correlation of each position with the portfolio.
    Kappa(ExactArgs),
    /// Prices and trades of firm-wide risk limits between desks.
    Equilibrium(EquilibriumArgs),
    /// Draw index arrays and the selected cells, for later contributions.
    Announce(AnnounceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PanelArgs {
    /// Panel CSV: `date,<asset1>,...`.
    #[arg(long, visible_alias = "panel")]
    pub input: PathBuf,
    /// Treat cells as price levels and use their differences.
    #[arg(long)]
    pub returns: bool,
    /// Column holding scenario weights.
    #[arg(long)]
    pub prob_column: Option<String>,
    /// Positions CSV `asset,position` (default: one unit of every asset).
    #[arg(long)]
    pub positions: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Add wall-clock timings to the report.
    #[arg(long)]
    pub timings: bool,
    /// Write `<prefix>_cdf.csv` and `<prefix>_tail.csv` curves.
    #[arg(long, value_name = "PREFIX")]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trials {
    Exhaustive,
    Count(usize),
}

fn parse_trials(s: &str) -> Result<Trials, String> {
    if s == "exhaustive" {
        return Ok(Trials::Exhaustive);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Trials::Count(n)),
        _ => Err(format!("expected a positive integer or `exhaustive`, got '{s}'")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// `uniform:W`, `geometric:λ`, `bootstrap:n[,λ]`, `timechange:σ,n`, `scaling:σ`.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Number of trials, or `exhaustive` for the exact value on the
    /// scheme's historical weights.
    #[arg(long, value_parser = parse_trials, default_value = "exhaustive")]
    pub trials: Trials,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// `tail:λ`, `alpha:α`, `beta:α,β` or `mix:w@λ,...`.
    #[arg(long)]
    pub measure: String,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Include the draw indices and selected cells.
    #[arg(long)]
    pub arrays: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ContribArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub measure: Option<String>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Arrays written by `crm announce`.
    #[arg(long)]
    pub announced: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FactorArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub measure: String,
    /// Factor CSV `date,<factor1>,...` with the panel's dates.
    #[arg(long)]
    pub factors: PathBuf,
    /// Comma-separated factor columns to use (default: all).
    #[arg(long)]
    pub factor_columns: Option<String>,
    /// `auto`, `kernel[:bw]` or `knn:k`.
    #[arg(long, default_value = "auto")]
    pub regression: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1500)]
    pub iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Rewards CSV `asset,reward`.
    #[arg(long)]
    pub rewards: PathBuf,
    /// Limits JSON: `[{"measure": "...", "limit": c, "factor": "col"}]`.
    #[arg(long)]
    pub limits: PathBuf,
    #[arg(long)]
    pub factors: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    pub regression: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub measure: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EquilibriumArgs {
    /// Firm JSON with desks, limits and allocations.
    #[arg(long)]
    pub firm: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AnnounceArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// An integer Beta measure (`alpha:α` or `beta:α,β`).
    #[arg(long)]
    pub measure: String,
    #[arg(long)]
    pub scheme: String,
    #[arg(long)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub(crate) fn execute(cli: &Cli) -> CliResult<String> {
    let start = Instant::now();
    let (mut report, output) = match &cli.command {
        Command::Estimate(a) => (estimate(a)?, &a.output),
        Command::Contrib(a) => (contrib(a)?, &a.output),
        Command::Factor(a) => (factor(a)?, &a.output),
        Command::Optimize(a) => (optimize(a)?, &a.output),
        Command::Allocate(a) => (allocate(a)?, &a.output),
        Command::Kappa(a) => (kappa(a)?, &a.output),
        Command::Equilibrium(a) => (equilibrium(a)?, &a.output),
        Command::Announce(a) => (announce(a)?, &a.output),
    };
    if output.timings {
        report.insert(
            "timings".into(),
            json!({ "elapsed_seconds": start.elapsed().as_secs_f64() }),
        );
    }
    Ok(to_json(&Value::Object(report)))
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("reports are objects"),
    }
}

fn load_panel(a: &PanelArgs) -> CliResult<(JointPanel, Vec<f64>)> {
    let panel = ingest_panel(
        &a.input,
        &IngestOptions {
            returns: a.returns,
            prob_column: a.prob_column.clone(),
        },
    )?;
    let h = match &a.positions {
        Some(p) => read_positions(p, &panel)?,
        None => vec![1.0; panel.n_assets()],
    };
    Ok((panel, h))
}

fn parse_scheme(s: &str) -> CliResult<DrawScheme> {
    s.parse().map_err(|e: RiskError| CliError::Usage(format!("bad scheme '{s}': {e}")))
}

fn parse_regression(s: &str) -> CliResult<Regression> {
    s.parse().map_err(|e: RiskError| CliError::Usage(format!("bad regression '{s}': {e}")))
}

fn require_seed(seed: Option<u64>, what: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage(format!("{what} is randomized and needs --seed")))
}

/// Position-weighted asset columns `h_j X_j` the draws are taken from;
/// volatility-based schemes standardize every asset by its own EWMA vol.
fn draw_columns(panel: &JointPanel, h: &[f64], scheme: &DrawScheme) -> CliResult<Vec<Vec<f64>>> {
    let rescale = matches!(scheme, DrawScheme::TimeChange { .. } | DrawScheme::Scaling { .. });
    (0..panel.n_assets())
        .map(|j| {
            let col = panel.column(j);
            let col = if rescale {
                standardize(&col, &EwmaConfig::default())?
            } else {
                col
            };
            Ok(col.iter().map(|v| h[j] * v).collect())
        })
        .collect()
}

fn sum_columns(cols: &[Vec<f64>]) -> Vec<f64> {
    (0..cols[0].len())
        .map(|t| cols.iter().map(|c| c[t]).sum())
        .collect()
}

/// Law used by the exhaustive mode: the scheme's historical weights, or
/// the panel's own probabilities when no scheme is given.
fn exhaustive_probs(panel: &JointPanel, scheme: Option<&DrawScheme>) -> CliResult<Vec<f64>> {
    match scheme {
        None => Ok(panel.probs()),
        Some(s) => s
            .index_probs(panel.len())
            .map_err(|e| CliError::Usage(format!("exhaustive mode: {e}"))),
    }
}

const SE_BATCHES: usize = 20;

fn mc_empirical<F>(k: usize, stat: F) -> CliResult<(f64, Option<f64>)>
where
    F: Fn(std::ops::Range<usize>) -> crm_core::Result<f64> + Sync,
{
    let value = stat(0..k)?;
    let se = if k >= 2 * SE_BATCHES {
        Some(batch_standard_error(k, SE_BATCHES, &stat)?)
    } else {
        None
    };
    Ok((value, se))
}

fn emit_plot(prefix: &Path, d: &ScenarioDistribution) -> CliResult<()> {
    let mut cdf = String::from("x,F\n");
    let law = d.law();
    let mut acc = 0.0;
    for (i, (x, p)) in law.iter().enumerate() {
        acc += p;
        let f = if i + 1 == law.len() { 1.0 } else { acc.min(1.0) };
        cdf.push_str(&format!("{x:.16e},{f:.16e}\n"));
    }
    let mut tail = String::from("lambda,risk\n");
    for i in 1..=100 {
        let lambda = i as f64 / 100.0;
        let r = weighted_var(d, &WeightingMeasure::tail(lambda)?)?;
        tail.push_str(&format!("{lambda:.16e},{r:.16e}\n"));
    }
    let write = |suffix: &str, text: &str| -> CliResult<()> {
        let mut name = prefix.as_os_str().to_owned();
        name.push(suffix);
        fs::write(&name, text).map_err(|e| CliError::Io {
            path: PathBuf::from(name),
            source: e,
        })
    };
    write("_cdf.csv", &cdf)?;
    write("_tail.csv", &tail)
}

#[derive(Debug, Clone, Serialize)]
struct Announcement {
    command: &'static str,
    measure: String,
    scheme: String,
    seed: u64,
    trials: usize,
    order: usize,
    beta: usize,
    parts: usize,
    series_len: usize,
    indices: Vec<Vec<usize>>,
    selection: Vec<Vec<usize>>,
}

struct Announced {
    draws: DrawMatrix,
    selection: Selection,
}

fn integer_beta(measure: &WeightingMeasure) -> CliResult<(usize, usize)> {
    measure
        .integer_beta()
        .ok_or_else(|| CliError::Usage(format!("measure '{measure}' is not an integer Beta measure")))
}

fn announce_draws(
    cols: &[Vec<f64>],
    measure: &WeightingMeasure,
    scheme: &DrawScheme,
    trials: usize,
    seed: u64,
) -> CliResult<Announced> {
    let (alpha, beta) = integer_beta(measure)?;
    let w = sum_columns(cols);
    let draws = generate_draws(scheme, w.len(), trials, alpha, seed)?;
    let selection = select_smallest(&draws.realize(&w)?, beta)?;
    Ok(Announced { draws, selection })
}

fn announcement(a: &Announced, measure: &WeightingMeasure, series_len: usize) -> Announcement {
    let d = &a.draws;
    Announcement {
        command: "announce",
        measure: measure.to_string(),
        scheme: d.scheme.to_string(),
        seed: d.seed,
        trials: d.trials,
        order: d.order,
        beta: a.selection.beta,
        parts: d.parts,
        series_len,
        indices: d.indices.chunks(d.order * d.parts).map(<[usize]>::to_vec).collect(),
        selection: (0..a.selection.trials()).map(|k| a.selection.row(k).to_vec()).collect(),
    }
}

fn estimate(a: &EstimateArgs) -> CliResult<Map<String, Value>> {
    let (panel, h) = load_panel(&a.panel)?;
    let measure = parse_measure(&a.measure)?;
    let scheme = a.sampling.scheme.as_deref().map(parse_scheme).transpose()?;
    let mut report = object(json!({
        "command": "estimate",
        "measure": measure.to_string(),
        "scheme": scheme.map(|s| s.to_string()),
        "positions": h,
    }));
    match a.sampling.trials {
        Trials::Exhaustive => {
            let d = ScenarioDistribution::new(panel.portfolio(&h)?, exhaustive_probs(&panel, scheme.as_ref())?)?;
            report.insert("estimator".into(), json!("exact"));
            report.insert("risk".into(), json!(weighted_var(&d, &measure)?));
            report.insert("trials".into(), json!("exhaustive"));
            if let Some(p) = &a.output.emit_plot_data {
                emit_plot(p, &d)?;
            }
        }
        Trials::Count(k) => {
            let scheme = scheme.ok_or_else(|| CliError::Usage("Monte Carlo estimation needs --scheme".into()))?;
            let seed = require_seed(a.sampling.seed, "estimate")?;
            let cols = draw_columns(&panel, &h, &scheme)?;
            let w = sum_columns(&cols);
            report.insert("seed".into(), json!(seed));
            report.insert("trials".into(), json!(k));
            if measure.integer_beta().is_some() {
                let ann = announce_draws(&cols, &measure, &scheme, k, seed)?;
                let est = contribution_from_selection(&ann.draws.realize(&w)?, &ann.selection)?;
                report.insert("estimator".into(), json!("beta"));
                report.insert("risk".into(), json!(est.value));
                report.insert("std_error".into(), json!(est.std_error));
                if a.arrays {
                    let ann = announcement(&ann, &measure, w.len());
                    report.insert("arrays".into(), json!({"indices": ann.indices, "selection": ann.selection}));
                }
            } else {
                let draws = generate_draws(&scheme, w.len(), k, 1, seed)?;
                let x = draws.realize(&w)?;
                let cells = x.cells();
                let (value, se) = mc_empirical(k, |r| {
                    weighted_var(&ScenarioDistribution::uniform(cells[r].to_vec())?, &measure)
                })?;
                report.insert("estimator".into(), json!("empirical"));
                report.insert("risk".into(), json!(value));
                report.insert("std_error".into(), json!(se));
                if a.arrays {
                    let idx: Vec<Vec<usize>> = draws.indices.chunks(draws.parts).map(<[usize]>::to_vec).collect();
                    report.insert("arrays".into(), json!({"indices": idx}));
                }
            }
            if let Some(p) = &a.output.emit_plot_data {
                emit_plot(p, &ScenarioDistribution::new(panel.portfolio(&h)?, panel.probs())?)?;
            }
        }
    }
    Ok(report)
}

fn announce(a: &AnnounceArgs) -> CliResult<Map<String, Value>> {
    let (panel, h) = load_panel(&a.panel)?;
    let measure = parse_measure(&a.measure)?;
    let scheme = parse_scheme(&a.scheme)?;
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let cols = draw_columns(&panel, &h, &scheme)?;
    let ann = announce_draws(&cols, &measure, &scheme, a.trials, a.seed)?;
    Ok(object(serde_json::to_value(announcement(&ann, &measure, cols[0].len())).expect("serializable")))
}

fn load_announced(path: &Path, series_len: usize) -> CliResult<(WeightingMeasure, Announced)> {
    let f = read_announced(path)?;
    let bad = |m: String| CliError::input(path, m);
    let measure = parse_measure(&f.measure)?;
    let scheme = parse_scheme(&f.scheme)?;
    let (alpha, beta) = integer_beta(&measure)?;
    if f.series_len != series_len {
        return Err(bad(format!(
            "arrays were drawn from {} periods but the panel has {series_len}",
            f.series_len
        )));
    }
    if f.parts != scheme.parts()? || f.indices.len() != f.selection.len() || f.indices.is_empty() {
        return Err(bad("inconsistent array shapes".into()));
    }
    let width = alpha * f.parts;
    if f.indices.iter().any(|r| r.len() != width || r.iter().any(|&i| i >= series_len)) {
        return Err(bad("draw indices do not match the measure and panel".into()));
    }
    if f.selection.iter().any(|r| r.len() != beta || r.iter().any(|&c| c >= alpha)) {
        return Err(bad("selected cells do not match the measure".into()));
    }
    let draws = DrawMatrix {
        scheme,
        trials: f.indices.len(),
        order: alpha,
        parts: f.parts,
        seed: f.seed,
        indices: f.indices.concat(),
    };
    let selection = Selection {
        beta,
        columns: f.selection.concat(),
    };
    Ok((measure, Announced { draws, selection }))
}

fn contrib(a: &ContribArgs) -> CliResult<Map<String, Value>> {
    let (panel, h) = load_panel(&a.panel)?;
    let measure = a.measure.as_deref().map(parse_measure).transpose()?;
    let mut report = object(json!({
        "command": "contrib",
        "assets": panel.assets(),
        "positions": h,
    }));
    let (measure, values, total, errors) = if let Some(path) = &a.announced {
        if a.sampling.scheme.is_some() || a.sampling.seed.is_some() {
            return Err(CliError::Usage("--announced fixes the scheme and seed".into()));
        }
        let scheme = {
            let f = read_announced(path)?;
            parse_scheme(&f.scheme)?
        };
        let cols = draw_columns(&panel, &h, &scheme)?;
        let (m, ann) = load_announced(path, cols[0].len())?;
        if measure.as_ref().is_some_and(|g| g.to_string() != m.to_string()) {
            return Err(CliError::Usage(format!("--measure differs from the announced measure {m}")));
        }
        report.insert("scheme".into(), json!(ann.draws.scheme.to_string()));
        report.insert("seed".into(), json!(ann.draws.seed));
        report.insert("trials".into(), json!(ann.draws.trials));
        let (v, t, e) = contributions_from_announced(&cols, &ann)?;
        (m, v, t, e)
    } else {
        let measure = measure.ok_or_else(|| CliError::Usage("contrib needs --measure or --announced".into()))?;
        let scheme = a.sampling.scheme.as_deref().map(parse_scheme).transpose()?;
        match a.sampling.trials {
            Trials::Exhaustive => {
                let probs = exhaustive_probs(&panel, scheme.as_ref())?;
                let cols: Vec<Vec<f64>> = (0..panel.n_assets())
                    .map(|j| panel.column(j).iter().map(|v| h[j] * v).collect())
                    .collect();
                let w = sum_columns(&cols);
                let v = cols
                    .iter()
                    .map(|x| risk_contribution(x, &w, &probs, &measure))
                    .collect::<crm_core::Result<Vec<_>>>()?;
                let total = weighted_var(&ScenarioDistribution::new(w, probs)?, &measure)?;
                report.insert("trials".into(), json!("exhaustive"));
                (measure, v, total, None)
            }
            Trials::Count(k) => {
                let scheme = scheme.ok_or_else(|| CliError::Usage("Monte Carlo contributions need --scheme".into()))?;
                let seed = require_seed(a.sampling.seed, "contrib")?;
                let cols = draw_columns(&panel, &h, &scheme)?;
                report.insert("seed".into(), json!(seed));
                report.insert("trials".into(), json!(k));
                report.insert("scheme".into(), json!(scheme.to_string()));
                if measure.integer_beta().is_some() {
                    let ann = announce_draws(&cols, &measure, &scheme, k, seed)?;
                    let (v, t, e) = contributions_from_announced(&cols, &ann)?;
                    (measure, v, t, e)
                } else {
                    let w = sum_columns(&cols);
                    let draws = generate_draws(&scheme, w.len(), k, 1, seed)?;
                    let wv = draws.realize(&w)?;
                    let xs = cols.iter().map(|c| draws.realize(c)).collect::<crm_core::Result<Vec<_>>>()?;
                    let mut v = Vec::new();
                    let mut e = Vec::new();
                    for x in &xs {
                        let (val, se) = mc_empirical(k, |r| {
                            let n = r.len();
                            risk_contribution(&x.cells()[r.clone()], &wv.cells()[r], &vec![1.0 / n as f64; n], &measure)
                        })?;
                        v.push(val);
                        e.push(se);
                    }
                    let total = weighted_var(&ScenarioDistribution::uniform(wv.cells().to_vec())?, &measure)?;
                    (measure, v, total, Some(e))
                }
            }
        }
    };
    report.insert("measure".into(), json!(measure.to_string()));
    report.insert("contributions".into(), json!(values));
    report.insert("std_errors".into(), json!(errors));
    report.insert("total_risk".into(), json!(total));
    Ok(report)
}

type Contributions = (Vec<f64>, f64, Option<Vec<Option<f64>>>);

fn contributions_from_announced(cols: &[Vec<f64>], ann: &Announced) -> CliResult<Contributions> {
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for c in cols {
        let e = contribution_from_selection(&ann.draws.realize(c)?, &ann.selection)?;
        values.push(e.value);
        errors.push(Some(e.std_error));
    }
    let total = contribution_from_selection(&ann.draws.realize(&sum_columns(cols))?, &ann.selection)?.value;
    Ok((values, total, Some(errors)))
}

fn factor_sample(
    path: &Path,
    panel: &JointPanel,
    columns: Option<&str>,
) -> CliResult<(Vec<String>, FactorSample)> {
    let (names, sample) = ingest_factors(path, panel)?;
    match columns {
        None => Ok((names, sample)),
        Some(list) => {
            let wanted: Vec<&str> = list.split(',').map(str::trim).collect();
            let idx = wanted
                .iter()
                .map(|w| {
                    names
                        .iter()
                        .position(|n| n == w)
                        .ok_or_else(|| CliError::Usage(format!("no factor column '{w}'")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok((wanted.iter().map(|s| s.to_string()).collect(), sample.select(&idx)?))
        }
    }
}

fn factor(a: &FactorArgs) -> CliResult<Map<String, Value>> {
    let (panel, h) = load_panel(&a.panel)?;
    let measure = parse_measure(&a.measure)?;
    let method = parse_regression(&a.regression)?;
    let (names, sample) = factor_sample(&a.factors, &panel, a.factor_columns.as_deref())?;
    let probs = panel.probs();
    let cols: Vec<Vec<f64>> = (0..panel.n_assets())
        .map(|j| panel.column(j).iter().map(|v| h[j] * v).collect())
        .collect();
    let w = sum_columns(&cols);
    let total = factor_risk(&w, &sample, &probs, &measure, &method)?;
    let mut assets = Vec::new();
    for (j, x) in cols.iter().enumerate() {
        let fr = factor_risk(x, &sample, &probs, &measure, &method)?;
        assets.push(json!({
            "asset": panel.assets()[j],
            "risk": weighted_var(&ScenarioDistribution::new(x.clone(), probs.clone())?, &measure)?,
            "factor_risk": fr.risk,
            "factor_contribution": factor_contribution(x, &w, &sample, &probs, &measure, &method)?,
        }));
    }
    Ok(object(json!({
        "command": "factor",
        "measure": measure.to_string(),
        "factors": names,
        "regression": total.method,
        "positions": h,
        "assets": assets,
        "portfolio": {
            "risk": weighted_var(&ScenarioDistribution::new(w, probs)?, &measure)?,
            "factor_risk": total.risk,
        },
    })))
}

fn solver_options(s: &SolverArgs, seed: u64) -> SolverOptions {
    SolverOptions {
        restarts: s.restarts,
        iterations: s.iterations,
        seed,
        ..SolverOptions::default()
    }
}

fn optimize(a: &OptimizeArgs) -> CliResult<Map<String, Value>> {
    if a.panel.positions.is_some() {
        return Err(CliError::Usage("optimize does not take --positions".into()));
    }
    let (panel, _) = load_panel(&a.panel)?;
    let rewards = read_rewards(&a.rewards, &panel)?;
    let specs = read_limits(&a.limits)?;
    let seed = require_seed(a.solver.seed, "optimize")?;
    let method = parse_regression(&a.regression)?;
    let factors = match &a.factors {
        Some(p) => Some(ingest_factors(p, &panel)?),
        None => None,
    };
    let mut constraints = Vec::new();
    for s in &specs {
        let measure = parse_measure(&s.measure)?;
        let limit = match &s.factor {
            None => RiskLimit::new(measure, s.limit),
            Some(col) => {
                let (names, sample) = factors
                    .as_ref()
                    .ok_or_else(|| CliError::Usage(format!("limit on factor '{col}' needs --factors")))?;
                let j = names
                    .iter()
                    .position(|n| n == col)
                    .ok_or_else(|| CliError::input(&a.limits, format!("no factor column '{col}'")))?;
                RiskLimit::on_factors(measure, s.limit, &panel, &sample.select(&[j])?, &method)?
            }
        };
        constraints.push(limit);
    }
    let problem = OptimizationProblem {
        panel,
        rewards,
        constraints,
    };
    let sol = solve_portfolio(&problem, &solver_options(&a.solver, seed))?;
    Ok(object(json!({
        "command": "optimize",
        "seed": seed,
        "assets": problem.panel.assets(),
        "rewards": problem.rewards,
        "limits": specs.iter().map(|s| json!({"measure": s.measure, "limit": s.limit, "factor": s.factor})).collect::<Vec<_>>(),
        "solution": sol,
    })))
}

fn allocate(a: &ExactArgs) -> CliResult<Map<String, Value>> {
    let (panel, h) = load_panel(&a.panel)?;
    let measure = parse_measure(&a.measure)?;
    let probs = panel.probs();
    let cols: Vec<Vec<f64>> = (0..panel.n_assets())
        .map(|j| panel.column(j).iter().map(|v| h[j] * v).collect())
        .collect();
    let alloc = capital_allocation(&cols, &probs, &measure)?;
    if let Some(p) = &a.output.emit_plot_data {
        emit_plot(p, &ScenarioDistribution::new(sum_columns(&cols), probs)?)?;
    }
    Ok(object(json!({
        "command": "allocate",
        "measure": measure.to_string(),
        "assets": panel.assets(),
        "positions": h,
        "contributions": alloc.contributions,
        "total_risk": alloc.total_risk,
        "residual": alloc.residual,
    })))
}

fn kappa(a: &ExactArgs) -> CliResult<Map<String, Value>> {
    let (panel, h) = load_panel(&a.panel)?;
    let measure = parse_measure(&a.measure)?;
    let probs = panel.probs();
    let cols: Vec<Vec<f64>> = (0..panel.n_assets())
        .map(|j| panel.column(j).iter().map(|v| h[j] * v).collect())
        .collect();
    let w = sum_columns(&cols);
    let kappas = cols
        .iter()
        .map(|x| match tail_kappa(x, &w, &probs, &measure) {
            Ok(k) => Ok(Some(k)),
            Err(RiskError::NonNegativeUtility(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<crm_core::Result<Vec<_>>>()?;
    Ok(object(json!({
        "command": "kappa",
        "measure": measure.to_string(),
        "assets": panel.assets(),
        "positions": h,
        "kappa": kappas,
    })))
}

fn equilibrium(a: &EquilibriumArgs) -> CliResult<Map<String, Value>> {
    let (firm, given) = read_firm(&a.firm)?;
    let seed = match (&given, a.solver.seed) {
        (_, Some(s)) => s,
        (Some(_), None) => 0,
        (None, None) => return Err(CliError::Usage("solving the firm problem needs --seed".into())),
    };
    let eq = compute_equilibrium(
        &firm,
        given,
        &solver_options(&a.solver, seed),
        &EquilibriumTolerances::default(),
    )?;
    Ok(object(json!({
        "command": "equilibrium",
        "seed": a.solver.seed,
        "desks": firm.desks.iter().map(|d| d.name.clone()).collect::<Vec<_>>(),
        "limits": firm.limits.iter().map(|l| json!({"measure": l.measure.to_string(), "limit": l.limit})).collect::<Vec<_>>(),
        "positions": eq.positions,
        "prices": {
            "alpha": eq.prices.alpha,
            "residual": eq.prices.residual,
            "risks": eq.prices.risks,
            "binding": eq.prices.binding,
        },
        "trades": eq.trades,
        "report": eq.report,
    })))
}
