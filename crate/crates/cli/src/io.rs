//! CSV and JSON inputs: panels, factors, rewards, limits and firm files.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crm_core::factor::FactorSample;
use crm_core::sharing::{Desk, FirmInstance, FirmLimit};
use crm_core::{JointPanel, WeightingMeasure};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// How a panel file is turned into scenarios.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Cells are price levels; scenarios are their one-period differences.
    pub returns: bool,
    /// Column holding scenario weights instead of an asset.
    pub prob_column: Option<String>,
}

struct Table {
    header: Vec<String>,
    dates: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `date,<col>,...` with numeric cells, sorted most recent first.
fn read_table(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.trim().is_empty() {
        return Err(CliError::input(path, "empty file"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(CliError::input(path, "header must be `date,<column>,...`"));
    }
    let mut seen = HashSet::new();
    for h in &header[1..] {
        if h.is_empty() || !seen.insert(h.as_str()) {
            return Err(CliError::input(path, format!("blank or duplicate column name '{h}'")));
        }
    }
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    let mut seen_dates: HashMap<String, usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let date = rec.get(0).unwrap_or("").to_string();
        if date.is_empty() {
            return Err(CliError::Cell {
                path: path.to_path_buf(),
                row: line,
                column: header[0].clone(),
                message: "blank date".into(),
            });
        }
        if let Some(first) = seen_dates.insert(date.clone(), line) {
            return Err(CliError::Cell {
                path: path.to_path_buf(),
                row: line,
                column: header[0].clone(),
                message: format!("duplicate date '{date}' (first on row {first})"),
            });
        }
        let mut row = Vec::with_capacity(header.len() - 1);
        for (j, name) in header.iter().enumerate().skip(1) {
            let cell = rec.get(j).unwrap_or("");
            let cell_err = |message: String| CliError::Cell {
                path: path.to_path_buf(),
                row: line,
                column: name.clone(),
                message,
            };
            if cell.is_empty() {
                return Err(cell_err("blank cell".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| cell_err(format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(cell_err(format!("'{cell}' is not finite")));
            }
            row.push(v);
        }
        dates.push(date);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::input(path, "no data rows"));
    }
    let order = most_recent_first(&dates);
    Ok(Table {
        header,
        dates: order.iter().map(|&i| dates[i].clone()).collect(),
        rows: order.iter().map(|&i| rows[i].clone()).collect(),
    })
}

/// Integer dates sort numerically, anything else (ISO 8601) as text.
fn most_recent_first(dates: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dates.len()).collect();
    let numeric: Option<Vec<i64>> = dates.iter().map(|d| d.parse().ok()).collect();
    match numeric {
        Some(n) => order.sort_by(|&a, &b| n[b].cmp(&n[a])),
        None => order.sort_by(|&a, &b| dates[b].cmp(&dates[a])),
    }
    order
}

/// Loads a joint P&L panel.
pub fn ingest_panel(path: &Path, opts: &IngestOptions) -> CliResult<JointPanel> {
    let table = read_table(path)?;
    let names = &table.header[1..];
    let prob_idx = match &opts.prob_column {
        Some(c) => Some(
            names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| CliError::input(path, format!("no probability column '{c}'")))?,
        ),
        None => None,
    };
    let assets: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != prob_idx)
        .map(|(_, n)| n.clone())
        .collect();
    if assets.is_empty() {
        return Err(CliError::input(path, "no asset columns"));
    }
    let split = |r: &Vec<f64>| -> Vec<f64> {
        r.iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != prob_idx)
            .map(|(_, v)| *v)
            .collect()
    };
    let mut dates = table.dates.clone();
    let mut rows: Vec<Vec<f64>> = table.rows.iter().map(split).collect();
    let mut weights: Option<Vec<f64>> = prob_idx.map(|p| table.rows.iter().map(|r| r[p]).collect());
    if opts.returns {
        if rows.len() < 2 {
            return Err(CliError::input(path, "--returns needs at least two rows"));
        }
        rows = (0..rows.len() - 1)
            .map(|t| rows[t].iter().zip(&rows[t + 1]).map(|(a, b)| a - b).collect())
            .collect();
        dates.pop();
        if let Some(w) = weights.as_mut() {
            w.pop();
        }
    }
    let probs = match weights {
        Some(w) => {
            if w.iter().any(|v| *v < 0.0) {
                return Err(CliError::input(path, "negative scenario probability"));
            }
            let s: f64 = w.iter().sum();
            if !(s > 0.0) {
                return Err(CliError::input(path, "scenario probabilities sum to zero"));
            }
            Some(w.iter().map(|v| v / s).collect())
        }
        None => None,
    };
    Ok(JointPanel::new(dates, assets, rows, probs)?)
}

/// Loads factor increments and aligns them with the panel's dates.
pub fn ingest_factors(path: &Path, panel: &JointPanel) -> CliResult<(Vec<String>, FactorSample)> {
    let table = read_table(path)?;
    let by_date: HashMap<&str, usize> = table
        .dates
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut rows = Vec::with_capacity(panel.len());
    for d in panel.dates() {
        let i = by_date
            .get(d.as_str())
            .ok_or_else(|| CliError::input(path, format!("no factor row for date '{d}'")))?;
        rows.push(table.rows[*i].clone());
    }
    Ok((table.header[1..].to_vec(), FactorSample::from_rows(&rows)?))
}

fn read_csv_pairs(path: &Path, key: &str, value: &str) -> CliResult<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::input(path, e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != key || &header[1] != value {
        return Err(CliError::input(path, format!("header must be `{key},{value}`")));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let v: f64 = rec[1].parse().map_err(|_| CliError::Cell {
            path: path.to_path_buf(),
            row: line,
            column: value.into(),
            message: format!("'{}' is not a number", &rec[1]),
        })?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

/// Rewards `asset,reward`, ordered like the panel's assets.
pub fn read_rewards(path: &Path, panel: &JointPanel) -> CliResult<Vec<f64>> {
    let pairs = read_csv_pairs(path, "asset", "reward")?;
    let map: HashMap<&str, f64> = pairs.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if map.len() != pairs.len() {
        return Err(CliError::input(path, "duplicate asset"));
    }
    panel
        .assets()
        .iter()
        .map(|a| {
            map.get(a.as_str())
                .copied()
                .ok_or_else(|| CliError::input(path, format!("no reward for asset '{a}'")))
        })
        .collect()
}

/// Positions `asset,position`, ordered like the panel's assets; assets not
/// listed get zero.
pub fn read_positions(path: &Path, panel: &JointPanel) -> CliResult<Vec<f64>> {
    let pairs = read_csv_pairs(path, "asset", "position")?;
    let mut h = vec![0.0; panel.n_assets()];
    for (a, v) in pairs {
        let j = panel
            .asset_index(&a)
            .ok_or_else(|| CliError::input(path, format!("unknown asset '{a}'")))?;
        h[j] = v;
    }
    Ok(h)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub measure: String,
    pub limit: f64,
    #[serde(default)]
    pub factor: Option<String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e.to_string()))
}

pub fn read_limits(path: &Path) -> CliResult<Vec<LimitSpec>> {
    let limits: Vec<LimitSpec> = read_json(path)?;
    if limits.is_empty() {
        return Err(CliError::input(path, "no limits"));
    }
    Ok(limits)
}

pub fn parse_measure(s: &str) -> CliResult<WeightingMeasure> {
    s.parse()
        .map_err(|e| CliError::Usage(format!("bad measure '{s}': {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeskSpec {
    name: String,
    panel: PathBuf,
    rewards: Vec<f64>,
    allocation: Vec<f64>,
    #[serde(default)]
    bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    positions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FirmSpec {
    limits: Vec<LimitSpec>,
    desks: Vec<DeskSpec>,
    #[serde(default)]
    returns: bool,
}

/// Firm instance from JSON; desk panel paths are relative to the file.
/// Returns the given positions when every desk lists them.
pub fn read_firm(path: &Path) -> CliResult<(FirmInstance, Option<Vec<Vec<f64>>>)> {
    let spec: FirmSpec = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let opts = IngestOptions {
        returns: spec.returns,
        prob_column: None,
    };
    let mut limits = Vec::new();
    for l in &spec.limits {
        if l.factor.is_some() {
            return Err(CliError::input(path, "factor limits are not supported in firm files"));
        }
        limits.push(FirmLimit {
            measure: parse_measure(&l.measure)?,
            limit: l.limit,
        });
    }
    let mut desks = Vec::new();
    let mut allocation = Vec::new();
    let mut positions = Vec::new();
    for d in spec.desks {
        let panel = ingest_panel(&base.join(&d.panel), &opts)?;
        desks.push(Desk {
            name: d.name,
            panel,
            rewards: d.rewards,
            bounds: d.bounds.map(|b| b.iter().map(|[lo, hi]| (*lo, *hi)).collect()),
        });
        allocation.push(d.allocation);
        positions.push(d.positions);
    }
    let firm = FirmInstance {
        desks,
        limits,
        allocation,
    };
    firm.validate()?;
    let given: Option<Vec<Vec<f64>>> = positions.into_iter().collect();
    Ok((firm, given))
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct AnnouncedFile {
    pub scheme: String,
    pub seed: u64,
    pub measure: String,
    pub series_len: usize,
    pub parts: usize,
    pub indices: Vec<Vec<usize>>,
    pub selection: Vec<Vec<usize>>,
}

pub(crate) fn read_announced(path: &Path) -> CliResult<AnnouncedFile> {
    read_json(path)
}
