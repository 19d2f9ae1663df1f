//! Risk contributions, capital allocation and the tail dependence
//! coefficient κ.
//!
//! The contribution of a position `X` to a reference portfolio `W` is the
//! expectation of `-X` under the extreme measure of `W`: the scenario
//! weights that attain `u(W)` when scenarios are ranked by `W`.

use serde::{Deserialize, Serialize};

use crate::distortion::WeightingMeasure;
use crate::error::{Result, RiskError};
use crate::numeric::compensated_sum;
use crate::scenario_risk::{cumulative, weighted_utility, ScenarioDistribution};

/// Scenario weights of the extreme measure of a reference portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeMeasure {
    /// `Q_t`, one per input scenario, summing to one.
    pub weights: Vec<f64>,
    /// Fingerprint of the reference portfolio the weights were built from.
    pub anchor: u64,
}

impl ExtremeMeasure {
    /// `E_Q X`.
    pub fn expectation(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(RiskError::Shape {
                context: "extreme measure expectation",
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(compensated_sum(self.weights.iter().zip(x).map(|(q, v)| q * v)))
    }
}

/// FNV-1a over the bit patterns of values and probabilities.
pub fn fingerprint(values: &[f64], probs: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values.iter().chain(probs) {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Extreme measure `Q_μ(W)`: scenario `t` in rank block `[z_{i-1}, z_i)` of
/// `W` gets `∫_{z_{i-1}}^{z_i} ψ`. Tied values of `W` form one block whose
/// weight is shared in proportion to the scenario probabilities.
pub fn extreme_measure(w: &ScenarioDistribution, measure: &WeightingMeasure) -> Result<ExtremeMeasure> {
    measure.check_estimable()?;
    let values = w.values();
    let probs = w.probs();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    // Blocks of tied values in rank order.
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || values[order[i]] != values[order[start]] {
            blocks.push((start, i));
            start = i;
        }
    }
    let block_mass: Vec<f64> = blocks
        .iter()
        .map(|&(s, e)| compensated_sum(order[s..e].iter().map(|&t| probs[t])))
        .collect();
    let z = cumulative(block_mass.iter().copied());

    let mut weights = vec![0.0; values.len()];
    let mut prev = 0.0_f64;
    for (b, &(s, e)) in blocks.iter().enumerate() {
        let cur = measure.big_psi(z[b])?;
        let mass = block_mass[b];
        if mass > 0.0 {
            let share = (cur - prev) / mass;
            for &t in &order[s..e] {
                weights[t] = share * probs[t];
            }
        }
        prev = cur;
    }
    Ok(ExtremeMeasure {
        weights,
        anchor: fingerprint(values, probs),
    })
}

fn distribution(w: &[f64], probs: &[f64]) -> Result<ScenarioDistribution> {
    ScenarioDistribution::new(w.to_vec(), probs.to_vec())
}

/// Risk contribution `ρ^c(X; W) = -E_{Q_μ(W)} X`.
pub fn risk_contribution(x: &[f64], w: &[f64], probs: &[f64], measure: &WeightingMeasure) -> Result<f64> {
    if x.len() != w.len() {
        return Err(RiskError::Shape {
            context: "contribution position",
            expected: w.len(),
            found: x.len(),
        });
    }
    let q = extreme_measure(&distribution(w, probs)?, measure)?;
    Ok(-q.expectation(x)?)
}

/// Contributions of a set of components to their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub contributions: Vec<f64>,
    pub total_risk: f64,
    /// `Σ contributions - total_risk`.
    pub residual: f64,
}

/// Allocates `ρ(Σ W^n)` to the components `W^n` (each a scenario vector).
pub fn capital_allocation(
    components: &[Vec<f64>],
    probs: &[f64],
    measure: &WeightingMeasure,
) -> Result<Allocation> {
    let first = components.first().ok_or(RiskError::Empty("allocation components"))?;
    let t = first.len();
    for c in components {
        if c.len() != t {
            return Err(RiskError::Shape {
                context: "allocation component",
                expected: t,
                found: c.len(),
            });
        }
    }
    let total: Vec<f64> = (0..t)
        .map(|s| compensated_sum(components.iter().map(|c| c[s])))
        .collect();
    let d = distribution(&total, probs)?;
    let q = extreme_measure(&d, measure)?;
    let contributions = components
        .iter()
        .map(|c| q.expectation(c).map(|e| -e))
        .collect::<Result<Vec<_>>>()?;
    let total_risk = -weighted_utility(&d, measure)?;
    let residual = compensated_sum(contributions.iter().copied()) - total_risk;
    Ok(Allocation {
        contributions,
        total_risk,
        residual,
    })
}

/// `κ_μ(X; W) = u^c(X; W) / u(X)`; requires `u(X) < 0`.
pub fn tail_kappa(x: &[f64], w: &[f64], probs: &[f64], measure: &WeightingMeasure) -> Result<f64> {
    let ux = weighted_utility(&distribution(x, probs)?, measure)?;
    if !(ux < 0.0) {
        return Err(RiskError::NonNegativeUtility(ux));
    }
    let uc = -risk_contribution(x, w, probs, measure)?;
    Ok(uc / ux)
}

/// Contribution utility for jointly Gaussian `(X, W)`:
/// `u^c = E X - γ cov(X, W) / sd(W)`.
pub fn gaussian_contribution(mean_x: f64, cov_xw: f64, var_w: f64, gamma: f64) -> Result<f64> {
    if !(var_w > 0.0) {
        return Err(RiskError::Parameter(format!("variance of W must be positive, got {var_w}")));
    }
    Ok(mean_x - gamma * cov_xw / var_w.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_risk::weighted_var;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn self_contribution_is_total_risk() {
        let w = vec![0.4, -1.3, 2.2, -0.1, 0.9, -2.5];
        let p = uniform(6);
        let m = WeightingMeasure::beta(5.0, 2.0).unwrap();
        let c = risk_contribution(&w, &w, &p, &m).unwrap();
        let r = weighted_var(&ScenarioDistribution::new(w.clone(), p).unwrap(), &m).unwrap();
        assert!((c - r).abs() < 1e-14);
    }

    #[test]
    fn tied_reference_values_share_weight() {
        // W ties between scenarios 0 and 1; X differs there.
        let w = vec![-1.0, -1.0, 3.0, 5.0];
        let x = vec![2.0, -4.0, 1.0, 0.0];
        let p = vec![0.25; 4];
        let m = WeightingMeasure::tail(0.25).unwrap();
        // The tied block has mass 0.5 and gets Ψ(0.5) = 1 of weight, split evenly.
        let c = risk_contribution(&x, &w, &p, &m).unwrap();
        assert!((c - 1.0).abs() < 1e-15, "{c}");
        let q = extreme_measure(&ScenarioDistribution::new(w, p).unwrap(), &m).unwrap();
        assert_eq!(q.weights, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn allocation_example() {
        let a = capital_allocation(
            &[vec![1.0, -1.0], vec![-1.0, 1.0], vec![0.5, -2.0]],
            &[0.5, 0.5],
            &WeightingMeasure::tail(0.5).unwrap(),
        )
        .unwrap();
        assert!(a.residual.abs() < 1e-15);
        assert!((a.total_risk - 2.0).abs() < 1e-15);
        assert_eq!(a.contributions, vec![1.0, -1.0, 2.0]);
    }

    #[test]
    fn kappa_errors_on_nonnegative_utility() {
        let m = WeightingMeasure::tail(0.5).unwrap();
        let x = vec![1.0, 2.0];
        assert!(matches!(
            tail_kappa(&x, &x, &[0.5, 0.5], &m),
            Err(RiskError::NonNegativeUtility(_))
        ));
    }

    #[test]
    fn derivative_identity() {
        // ρ^c(X; W) = d/dε ρ(W + εX) at 0 when W has distinct values.
        let w: Vec<f64> = (0..40).map(|i| ((i * 37) % 41) as f64 - 20.0).collect();
        let x: Vec<f64> = (0..40).map(|i| ((i * 13) % 7) as f64 * 0.3 - 1.0).collect();
        let p = uniform(40);
        let m = WeightingMeasure::beta(6.0, 2.0).unwrap();
        let rho = |e: f64| {
            let v: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a + e * b).collect();
            weighted_var(&ScenarioDistribution::new(v, p.clone()).unwrap(), &m).unwrap()
        };
        let h = 1e-3;
        let d1 = (rho(h) - rho(-h)) / (2.0 * h);
        let d2 = (rho(h / 2.0) - rho(-h / 2.0)) / h;
        let richardson = (4.0 * d2 - d1) / 3.0;
        let c = risk_contribution(&x, &w, &p, &m).unwrap();
        assert!((richardson - c).abs() < 1e-6, "{richardson} vs {c}");
    }

    #[test]
    fn gaussian_contribution_formula() {
        let u = gaussian_contribution(0.1, 0.5, 4.0, 2.0).unwrap();
        assert!((u - (0.1 - 0.5)).abs() < 1e-15);
        assert!(gaussian_contribution(0.0, 1.0, 0.0, 1.0).is_err());
    }
}
