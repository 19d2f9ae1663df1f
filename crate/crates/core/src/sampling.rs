//! Draw schemes for Monte Carlo estimation from historical series.
//!
//! Random numbers come from counter-based ChaCha8 streams: trial `k` uses
//! stream `k` of the generator keyed by the seed, and part `j` of cell
//! `(k, l)` reads the 64-bit word pair at position `2 (l p + j)`, where `p` is
//! the number of parts per cell. Any cell can therefore be regenerated on
//! its own and results do not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

/// How historical indices are drawn for each cell of the `K × α` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DrawScheme {
    /// Uniform over the `window` most recent periods.
    UniformHistoric { window: usize },
    /// Period `t` (0 = most recent) with probability `∝ λ^t`, truncated to the
    /// available history and renormalized.
    GeometricWeighted { decay: f64 },
    /// Each cell is the sum of `parts` sub-period increments, drawn uniformly
    /// or, with `decay`, geometrically weighted toward recent periods.
    Bootstrap { parts: usize, decay: Option<f64> },
    /// Time-changed bootstrap: each cell sums `round(σ² n)` sub-increments.
    TimeChange { sigma: f64, parts_per_period: usize },
    /// Uniform draw of a standardized increment multiplied by `sigma`.
    Scaling { sigma: f64 },
}

impl DrawScheme {
    /// Number of sub-period indices per cell.
    pub fn parts(&self) -> Result<usize> {
        match *self {
            DrawScheme::UniformHistoric { .. }
            | DrawScheme::GeometricWeighted { .. }
            | DrawScheme::Scaling { .. } => Ok(1),
            DrawScheme::Bootstrap { parts, .. } => Ok(parts),
            DrawScheme::TimeChange {
                sigma,
                parts_per_period,
            } => time_change_parts(sigma, parts_per_period),
        }
    }

    fn validate(&self, series_len: usize) -> Result<()> {
        if series_len == 0 {
            return Err(RiskError::Empty("historical series"));
        }
        match *self {
            DrawScheme::UniformHistoric { window } => {
                if window == 0 || window > series_len {
                    return Err(RiskError::Parameter(format!(
                        "window {window} must be in 1..={series_len}"
                    )));
                }
            }
            DrawScheme::GeometricWeighted { decay } => check_decay(decay)?,
            DrawScheme::Bootstrap { parts, decay } => {
                if parts == 0 {
                    return Err(RiskError::Parameter("bootstrap needs at least one part".into()));
                }
                if let Some(d) = decay {
                    check_decay(d)?;
                }
            }
            DrawScheme::TimeChange { .. } => {
                self.parts()?;
            }
            DrawScheme::Scaling { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(RiskError::Parameter(format!("scaling sigma {sigma} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Probability weights `ν` over the most recent `series_len` periods for
    /// schemes that define one directly.
    pub fn index_probs(&self, series_len: usize) -> Result<Vec<f64>> {
        self.validate(series_len)?;
        match *self {
            DrawScheme::UniformHistoric { window } => {
                let mut p = vec![0.0; series_len];
                p[..window].fill(1.0 / window as f64);
                Ok(p)
            }
            DrawScheme::GeometricWeighted { decay } => Ok(geometric_probs(decay, series_len)),
            _ => Err(RiskError::Parameter(format!(
                "scheme {self} does not define weights over historical periods"
            ))),
        }
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if decay > 0.0 && decay < 1.0 {
        Ok(())
    } else {
        Err(RiskError::Domain {
            name: "decay",
            value: decay,
            range: "(0, 1)",
        })
    }
}

fn time_change_parts(sigma: f64, n: usize) -> Result<usize> {
    if !(sigma > 0.0 && sigma.is_finite()) || n == 0 {
        return Err(RiskError::Parameter(format!(
            "time change needs sigma > 0 and n >= 1, got ({sigma}, {n})"
        )));
    }
    let m = (sigma * sigma * n as f64).round();
    if m < 1.0 {
        return Err(RiskError::Parameter(format!(
            "sigma^2 * n = {} rounds to zero sub-increments",
            sigma * sigma * n as f64
        )));
    }
    Ok(m as usize)
}

/// Truncated geometric weights `(1-λ) λ^t / (1 - λ^L)`.
pub fn geometric_probs(decay: f64, len: usize) -> Vec<f64> {
    let norm = 1.0 - decay.powi(len as i32);
    (0..len)
        .map(|t| (1.0 - decay) * decay.powi(t as i32) / norm)
        .collect()
}

impl fmt::Display for DrawScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DrawScheme::UniformHistoric { window } => write!(f, "uniform:{window}"),
            DrawScheme::GeometricWeighted { decay } => write!(f, "geometric:{decay}"),
            DrawScheme::Bootstrap { parts, decay: None } => write!(f, "bootstrap:{parts}"),
            DrawScheme::Bootstrap {
                parts,
                decay: Some(d),
            } => write!(f, "bootstrap:{parts},{d}"),
            DrawScheme::TimeChange {
                sigma,
                parts_per_period,
            } => write!(f, "timechange:{sigma},{parts_per_period}"),
            DrawScheme::Scaling { sigma } => write!(f, "scaling:{sigma}"),
        }
    }
}

impl FromStr for DrawScheme {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| RiskError::Parameter(format!("{msg} in scheme '{s}'"));
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        let float = |t: &str| t.parse::<f64>().map_err(|_| bad(&format!("bad number '{t}'")));
        let int = |t: &str| t.parse::<usize>().map_err(|_| bad(&format!("bad integer '{t}'")));
        let scheme = match (kind.trim(), args.as_slice()) {
            ("uniform", [w]) => DrawScheme::UniformHistoric { window: int(w)? },
            ("geometric", [d]) => DrawScheme::GeometricWeighted { decay: float(d)? },
            ("bootstrap", [n]) => DrawScheme::Bootstrap {
                parts: int(n)?,
                decay: None,
            },
            ("bootstrap", [n, d]) => DrawScheme::Bootstrap {
                parts: int(n)?,
                decay: Some(float(d)?),
            },
            ("timechange", [s, n]) => DrawScheme::TimeChange {
                sigma: float(s)?,
                parts_per_period: int(n)?,
            },
            ("scaling", [s]) => DrawScheme::Scaling { sigma: float(s)? },
            _ => return Err(bad("unknown scheme or wrong argument count")),
        };
        Ok(scheme)
    }
}

/// Generator for trial `k` under `seed`, positioned at the start of row `k`.
pub fn trial_stream(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Uniform in `[0, 1)` from the top 53 bits of one word pair.
pub fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..n` by multiply-shift (one word pair per index).
fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Index under truncated geometric weights, by inversion.
fn geometric_index(rng: &mut ChaCha8Rng, decay: f64, len: usize) -> usize {
    let u = unit_f64(rng);
    let tail = 1.0 - decay.powi(len as i32);
    let t = ((-u * tail).ln_1p() / decay.ln()).floor();
    (t.max(0.0) as usize).min(len - 1)
}

/// Historical indices for every cell of a `K × α` draw matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMatrix {
    pub scheme: DrawScheme,
    pub trials: usize,
    pub order: usize,
    pub parts: usize,
    pub seed: u64,
    /// Row-major: cell `(k, l)` owns `indices[(k α + l) p .. (k α + l + 1) p]`.
    pub indices: Vec<usize>,
}

fn draw_part(scheme: &DrawScheme, rng: &mut ChaCha8Rng, series_len: usize) -> usize {
    match *scheme {
        DrawScheme::UniformHistoric { window } => uniform_index(rng, window),
        DrawScheme::GeometricWeighted { decay } => geometric_index(rng, decay, series_len),
        DrawScheme::Bootstrap { decay: Some(d), .. } => geometric_index(rng, d, series_len),
        DrawScheme::Bootstrap { decay: None, .. }
        | DrawScheme::TimeChange { .. }
        | DrawScheme::Scaling { .. } => uniform_index(rng, series_len),
    }
}

/// Draws the index matrix for `trials × order` cells.
pub fn generate_draws(
    scheme: &DrawScheme,
    series_len: usize,
    trials: usize,
    order: usize,
    seed: u64,
) -> Result<DrawMatrix> {
    scheme.validate(series_len)?;
    if trials == 0 || order == 0 {
        return Err(RiskError::Parameter("trials and order must be positive".into()));
    }
    let parts = scheme.parts()?;
    let row_len = order * parts;
    let mut indices = vec![0usize; trials * row_len];
    indices
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(k, row)| {
            let mut rng = trial_stream(seed, k as u64);
            for slot in row.iter_mut() {
                *slot = draw_part(scheme, &mut rng, series_len);
            }
        });
    Ok(DrawMatrix {
        scheme: *scheme,
        trials,
        order,
        parts,
        seed,
        indices,
    })
}

/// Regenerates the indices of a single cell directly from its counter position.
pub fn cell_indices(
    scheme: &DrawScheme,
    series_len: usize,
    order: usize,
    seed: u64,
    trial: usize,
    column: usize,
) -> Result<Vec<usize>> {
    scheme.validate(series_len)?;
    let parts = scheme.parts()?;
    if column >= order {
        return Err(RiskError::Parameter(format!("column {column} >= order {order}")));
    }
    let mut rng = trial_stream(seed, trial as u64);
    rng.set_word_pos(2 * (column * parts) as u128);
    Ok((0..parts).map(|_| draw_part(scheme, &mut rng, series_len)).collect())
}

impl DrawMatrix {
    /// Indices of cell `(k, l)`.
    pub fn cell(&self, k: usize, l: usize) -> &[usize] {
        let start = (k * self.order + l) * self.parts;
        &self.indices[start..start + self.parts]
    }

    /// Cell values from a series (index 0 = most recent): the sum of the
    /// series over the cell's indices, times `σ` for the scaling scheme.
    pub fn realize(&self, series: &[f64]) -> Result<DrawValues> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= series.len()) {
            return Err(RiskError::Parameter(format!(
                "draw index {bad} exceeds series length {}",
                series.len()
            )));
        }
        let factor = match self.scheme {
            DrawScheme::Scaling { sigma } => sigma,
            _ => 1.0,
        };
        let cells = self
            .indices
            .chunks_exact(self.parts)
            .map(|c| factor * c.iter().map(|&i| series[i]).sum::<f64>())
            .collect();
        Ok(DrawValues {
            order: self.order,
            cells,
        })
    }
}

/// Realized cell values `x_{kl}` as a row-major `K × α` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawValues {
    order: usize,
    cells: Vec<f64>,
}

impl DrawValues {
    pub fn from_flat(order: usize, cells: Vec<f64>) -> Result<Self> {
        if order == 0 || cells.is_empty() || cells.len() % order != 0 {
            return Err(RiskError::Shape {
                context: "draw values row length",
                expected: order,
                found: cells.len(),
            });
        }
        Ok(Self { order, cells })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let order = rows.first().map(|r| r.len()).ok_or(RiskError::Empty("draw rows"))?;
        if let Some(r) = rows.iter().find(|r| r.len() != order) {
            return Err(RiskError::Shape {
                context: "draw values row length",
                expected: order,
                found: r.len(),
            });
        }
        Self::from_flat(order, rows.concat())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn trials(&self) -> usize {
        self.cells.len() / self.order
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.cells[k * self.order..(k + 1) * self.order]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.cells.chunks_exact(self.order)
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Element-wise `a x + b y`.
    pub fn combine(&self, a: f64, other: &DrawValues, b: f64) -> Result<DrawValues> {
        if self.order != other.order || self.cells.len() != other.cells.len() {
            return Err(RiskError::Shape {
                context: "draw values",
                expected: self.cells.len(),
                found: other.cells.len(),
            });
        }
        Ok(DrawValues {
            order: self.order,
            cells: self.cells.iter().zip(&other.cells).map(|(x, y)| a * x + b * y).collect(),
        })
    }
}

/// Rolling volatility settings used to standardize increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaConfig {
    pub decay: f64,
    pub warmup: usize,
}

impl Default for EwmaConfig {
    fn default() -> Self {
        Self {
            decay: 0.94,
            warmup: 20,
        }
    }
}

/// Standardizes a most-recent-first series by an exponentially weighted
/// volatility estimate that only uses past observations.
///
/// The variance starts at the mean square of the `warmup` oldest values,
/// which are consumed and not returned; the output keeps the input order.
pub fn standardize(series: &[f64], cfg: &EwmaConfig) -> Result<Vec<f64>> {
    check_decay(cfg.decay)?;
    if cfg.warmup == 0 || series.len() <= cfg.warmup {
        return Err(RiskError::Parameter(format!(
            "need more than {} observations to standardize, got {}",
            cfg.warmup,
            series.len()
        )));
    }
    let chrono: Vec<f64> = series.iter().rev().copied().collect();
    let mut var = chrono[..cfg.warmup].iter().map(|r| r * r).sum::<f64>() / cfg.warmup as f64;
    let mut out = Vec::with_capacity(chrono.len() - cfg.warmup);
    for &r in &chrono[cfg.warmup..] {
        if !(var > 0.0) {
            return Err(RiskError::Parameter("zero volatility estimate".into()));
        }
        out.push(r / var.sqrt());
        var = cfg.decay * var + (1.0 - cfg.decay) * r * r;
    }
    out.reverse();
    Ok(out)
}

/// Multiplies standardized increments by `σ`.
pub fn scale_series(standardized: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(RiskError::Parameter(format!("sigma {sigma} must be positive")));
    }
    Ok(standardized.iter().map(|z| sigma * z).collect())
}

/// How sub-increments are composed into time-changed increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Composition {
    /// Non-overlapping blocks of consecutive periods, most recent first; an
    /// incomplete block at the old end is dropped.
    Consecutive,
    /// `samples` sums of independently drawn sub-increments.
    Bootstrap { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeChangeConfig {
    pub sigma: f64,
    /// Sub-periods per unit period (`n`).
    pub parts_per_period: usize,
    pub composition: Composition,
    /// Standardize sub-increments before composing.
    pub standardize: Option<EwmaConfig>,
}

/// Increments over stretched windows of length `σ² Δ`, approximated by
/// `m = round(σ² n)` sub-increments of length `Δ / n`.
///
/// `raw` holds `(timestamp, increment)` pairs in any order; the output is
/// most recent first.
pub fn time_change_series(raw: &[(f64, f64)], cfg: &TimeChangeConfig) -> Result<Vec<f64>> {
    let m = time_change_parts(cfg.sigma, cfg.parts_per_period)?;
    if raw.is_empty() {
        return Err(RiskError::Empty("raw increments"));
    }
    let mut sorted = raw.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(RiskError::InvalidDistribution("duplicate timestamps".into()));
    }
    let mut incs: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    if let Some(ewma) = &cfg.standardize {
        incs = standardize(&incs, ewma)?;
    }
    match cfg.composition {
        Composition::Consecutive => {
            if incs.len() < m {
                return Err(RiskError::Parameter(format!(
                    "{} sub-increments cannot form a block of {m}",
                    incs.len()
                )));
            }
            Ok(incs.chunks_exact(m).map(|c| c.iter().sum()).collect())
        }
        Composition::Bootstrap { samples, seed } => {
            let len = incs.len();
            Ok((0..samples)
                .into_par_iter()
                .map(|k| {
                    let mut rng = trial_stream(seed, k as u64);
                    (0..m).map(|_| incs[uniform_index(&mut rng, len)]).sum()
                })
                .collect())
        }
    }
}
