//! Monte Carlo estimators of Alpha/Beta V@R and of their contributions.
//!
//! Each trial `k` is a row of `α` cells. Alpha V@R uses the row minimum;
//! Beta V@R averages the `β` smallest cells. Contributions rank the cells
//! by the reference portfolio `W` and average the position `X` on the
//! selected cells. Ties in `W` go to the lowest column index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contribution::risk_contribution;
use crate::distortion::WeightingMeasure;
use crate::error::{Result, RiskError};
use crate::numeric::mean_and_std_error;
use crate::sampling::DrawValues;

/// Point estimate with its standard error over independent trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl Estimate {
    fn from_trials(per_trial: &[f64]) -> Self {
        let (value, std_error) = mean_and_std_error(per_trial);
        Self {
            value,
            std_error,
            trials: per_trial.len(),
        }
    }
}

/// Cells picked in each row: `β` column indices per trial, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub beta: usize,
    pub columns: Vec<usize>,
}

impl Selection {
    pub fn trials(&self) -> usize {
        self.columns.len() / self.beta.max(1)
    }

    pub fn row(&self, k: usize) -> &[usize] {
        &self.columns[k * self.beta..(k + 1) * self.beta]
    }
}

fn check_beta(x: &DrawValues, beta: usize) -> Result<()> {
    if beta == 0 || beta > x.order() {
        return Err(RiskError::Parameter(format!(
            "beta must be in 1..={}, got {beta}",
            x.order()
        )));
    }
    Ok(())
}

fn check_same_shape(x: &DrawValues, w: &DrawValues) -> Result<()> {
    if x.order() != w.order() || x.trials() != w.trials() {
        return Err(RiskError::Shape {
            context: "draw matrices of position and reference",
            expected: w.cells().len(),
            found: x.cells().len(),
        });
    }
    Ok(())
}

fn smallest_columns(row: &[f64], beta: usize, out: &mut [usize]) {
    if beta == 1 {
        let mut best = 0;
        for (l, v) in row.iter().enumerate().skip(1) {
            if *v < row[best] {
                best = l;
            }
        }
        out[0] = best;
        return;
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    out.copy_from_slice(&idx[..beta]);
}

/// Indices of the `β` smallest cells of each row of `w`.
pub fn select_smallest(w: &DrawValues, beta: usize) -> Result<Selection> {
    check_beta(w, beta)?;
    let order = w.order();
    let mut columns = vec![0usize; w.trials() * beta];
    columns
        .par_chunks_mut(beta)
        .zip(w.cells().par_chunks(order))
        .for_each(|(out, row)| smallest_columns(row, beta, out));
    Ok(Selection { beta, columns })
}

/// Row minimizers `l_k` of `w`.
pub fn argmin_rows(w: &DrawValues) -> Vec<usize> {
    select_smallest(w, 1).expect("beta = 1 is always valid").columns
}

/// `-E min(x_1, ..., x_α)`.
pub fn alpha_var_mc(x: &DrawValues) -> Result<Estimate> {
    beta_var_mc(x, 1)
}

/// `-E[(1/β) Σ_{i ≤ β} x_(i)]`.
pub fn beta_var_mc(x: &DrawValues, beta: usize) -> Result<Estimate> {
    let sel = select_smallest(x, beta)?;
    contribution_from_selection(x, &sel)
}

/// Alpha V@R contribution: `-E x_{k, l_k}` with `l_k` the row argmin of `w`.
pub fn alpha_contribution_mc(x: &DrawValues, w: &DrawValues) -> Result<Estimate> {
    beta_contribution_mc(x, w, 1)
}

/// Beta V@R contribution: `-E[(1/β) Σ x_{k, t_k}]` over the `β` cells where
/// `w` is smallest.
pub fn beta_contribution_mc(x: &DrawValues, w: &DrawValues, beta: usize) -> Result<Estimate> {
    check_same_shape(x, w)?;
    let sel = select_smallest(w, beta)?;
    contribution_from_selection(x, &sel)
}

/// Contribution estimate from a fixed selection of cells, e.g. one that was
/// announced in advance for a reference portfolio.
pub fn contribution_from_selection(x: &DrawValues, sel: &Selection) -> Result<Estimate> {
    if sel.trials() != x.trials() || sel.beta == 0 {
        return Err(RiskError::Shape {
            context: "selection trials",
            expected: x.trials(),
            found: sel.trials(),
        });
    }
    if let Some(&c) = sel.columns.iter().find(|&&c| c >= x.order()) {
        return Err(RiskError::Parameter(format!("selected column {c} >= order {}", x.order())));
    }
    let order = x.order();
    let beta = sel.beta;
    let per_trial: Vec<f64> = x
        .cells()
        .par_chunks(order)
        .zip(sel.columns.par_chunks(beta))
        .map(|(row, cols)| -cols.iter().map(|&c| row[c]).sum::<f64>() / beta as f64)
        .collect();
    Ok(Estimate::from_trials(&per_trial))
}

/// Exact contribution on an empirical scenario set; ties in `w` are merged.
pub fn weighted_contribution_empirical(
    x: &[f64],
    w: &[f64],
    probs: &[f64],
    measure: &WeightingMeasure,
) -> Result<f64> {
    risk_contribution(x, w, probs, measure)
}

/// Standard error of a statistic by batch means: the data index range
/// `0..n` is cut into `batches` consecutive blocks, the statistic is
/// recomputed on each, and the spread of the block values is scaled by
/// `1/sqrt(batches)`.
pub fn batch_standard_error<F>(n: usize, batches: usize, stat: F) -> Result<f64>
where
    F: Fn(std::ops::Range<usize>) -> Result<f64> + Sync,
{
    if batches < 2 || n < batches {
        return Err(RiskError::Parameter(format!(
            "need 2 <= batches <= n, got {batches} batches for {n} points"
        )));
    }
    let values = (0..batches)
        .into_par_iter()
        .map(|b| stat(b * n / batches..(b + 1) * n / batches))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_std_error(&values).1)
}
