//! Joint scenario panels: P&L of several assets over common scenarios.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::numeric::compensated_sum;
use crate::scenario_risk::{ScenarioDistribution, PROB_SUM_TOL};

/// `T × N` matrix of asset P&L, row 0 being the most recent scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPanel {
    dates: Vec<String>,
    assets: Vec<String>,
    data: Vec<f64>,
    probs: Option<Vec<f64>>,
}

impl JointPanel {
    /// Builds a panel from rows; `probs` defaults to equal weights.
    pub fn new(
        dates: Vec<String>,
        assets: Vec<String>,
        rows: Vec<Vec<f64>>,
        probs: Option<Vec<f64>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(RiskError::Empty("panel rows"));
        }
        if assets.is_empty() {
            return Err(RiskError::Empty("panel assets"));
        }
        if dates.len() != rows.len() {
            return Err(RiskError::Shape {
                context: "panel dates",
                expected: rows.len(),
                found: dates.len(),
            });
        }
        let n = assets.len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in &rows {
            if r.len() != n {
                return Err(RiskError::Shape {
                    context: "panel row",
                    expected: n,
                    found: r.len(),
                });
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(RiskError::InvalidDistribution(format!("non-finite panel value {v}")));
            }
            data.extend_from_slice(r);
        }
        if let Some(p) = &probs {
            if p.len() != rows.len() {
                return Err(RiskError::Shape {
                    context: "panel probabilities",
                    expected: rows.len(),
                    found: p.len(),
                });
            }
            let total = compensated_sum(p.iter().copied());
            if p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > PROB_SUM_TOL {
                return Err(RiskError::InvalidDistribution(format!(
                    "panel probabilities must be non-negative and sum to 1 (sum {total})"
                )));
            }
        }
        Ok(Self {
            dates,
            assets,
            data,
            probs,
        })
    }

    /// Panel from asset columns with generated scenario labels.
    pub fn from_columns(assets: Vec<String>, columns: &[Vec<f64>], probs: Option<Vec<f64>>) -> Result<Self> {
        let t = columns.first().map(|c| c.len()).ok_or(RiskError::Empty("panel columns"))?;
        let rows = (0..t).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let dates = (0..t).map(|i| i.to_string()).collect();
        Self::new(dates, assets, rows, probs)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.assets.len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.row(t)[j]).collect()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == name)
    }

    /// Scenario probabilities (equal weights unless given).
    pub fn probs(&self) -> Vec<f64> {
        match &self.probs {
            Some(p) => p.clone(),
            None => vec![1.0 / self.len() as f64; self.len()],
        }
    }

    pub fn has_explicit_probs(&self) -> bool {
        self.probs.is_some()
    }

    /// P&L of the position `h` in each scenario.
    pub fn portfolio(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.n_assets() {
            return Err(RiskError::Shape {
                context: "position vector",
                expected: self.n_assets(),
                found: h.len(),
            });
        }
        Ok((0..self.len())
            .map(|t| compensated_sum(self.row(t).iter().zip(h).map(|(x, w)| x * w)))
            .collect())
    }

    /// Law of `⟨h, X⟩` under the panel probabilities.
    pub fn distribution(&self, h: &[f64]) -> Result<ScenarioDistribution> {
        ScenarioDistribution::new(self.portfolio(h)?, self.probs())
    }

    /// Expected P&L of each asset under the panel probabilities.
    pub fn means(&self) -> Vec<f64> {
        let p = self.probs();
        (0..self.n_assets())
            .map(|j| compensated_sum((0..self.len()).map(|t| p[t] * self.row(t)[j])))
            .collect()
    }

    /// The most recent `t` scenarios, keeping weights renormalized.
    pub fn head(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.len() {
            return Err(RiskError::Parameter(format!("window {t} must be in 1..={}", self.len())));
        }
        let rows = (0..t).map(|i| self.row(i).to_vec()).collect();
        let probs = self.probs.as_ref().map(|p| {
            let s = compensated_sum(p[..t].iter().copied());
            p[..t].iter().map(|x| x / s).collect()
        });
        Self::new(self.dates[..t].to_vec(), self.assets.clone(), rows, probs)
    }

    /// Same scenarios with new probabilities.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        let rows = (0..self.len()).map(|i| self.row(i).to_vec()).collect();
        Self::new(self.dates.clone(), self.assets.clone(), rows, Some(probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portfolio_and_means() {
        let p = JointPanel::from_columns(
            vec!["a".into(), "b".into()],
            &[vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 1.0]],
            None,
        )
        .unwrap();
        assert_eq!(p.portfolio(&[1.0, 2.0]).unwrap(), vec![1.0, 0.0, 5.0]);
        assert!((p.means()[0] - 2.0).abs() < 1e-15);
        assert_eq!(p.column(1), vec![0.0, -1.0, 1.0]);
        assert!(p.portfolio(&[1.0]).is_err());
        assert_eq!(p.head(2).unwrap().len(), 2);
    }
}
