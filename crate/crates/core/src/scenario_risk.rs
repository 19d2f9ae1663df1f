//! Scenario distributions and exact risk evaluation on them.

use serde::{Deserialize, Serialize};

use crate::distortion::WeightingMeasure;
use crate::error::{Result, RiskError};
use crate::numeric::{binomial_pmf, compensated_sum};

/// Probability tolerance when validating that scenario weights sum to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// A finite distribution: P&L `values[t]` with probability `probs[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl ScenarioDistribution {
    /// Builds a distribution, checking lengths, signs and the unit sum.
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(RiskError::Empty("scenario values"));
        }
        if values.len() != probs.len() {
            return Err(RiskError::Shape {
                context: "scenario probabilities",
                expected: values.len(),
                found: probs.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(RiskError::InvalidDistribution(format!("non-finite value {v}")));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(RiskError::InvalidDistribution(format!("invalid probability {p}")));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(RiskError::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { values, probs })
    }

    /// Equally likely scenarios.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0 / n.max(1) as f64; n])
    }

    /// Scenarios with non-negative weights rescaled to sum to one.
    pub fn weighted(values: Vec<f64>, weights: &[f64]) -> Result<Self> {
        let total = compensated_sum(weights.iter().copied());
        if !(total > 0.0) {
            return Err(RiskError::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(values, weights.iter().map(|w| w / total).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Expectation under the scenario probabilities.
    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().zip(&self.probs).map(|(v, p)| v * p))
    }

    /// Atoms of the law: distinct values in increasing order with their total
    /// probability. Sorting uses `(value, prob)` so the result does not
    /// depend on the input order.
    pub fn law(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self
            .values
            .iter()
            .copied()
            .zip(self.probs.iter().copied())
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => out.push((v, p)),
            }
        }
        out
    }
}

/// Cumulative probabilities `z_t` at the right end of each atom, with the
/// last one pinned to exactly 1.
pub(crate) fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut out: Vec<f64> = probs
        .map(|p| {
            let y = p - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            sum.clamp(0.0, 1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// Right quantile `q_λ = inf { x : F(x) ≥ λ }` for `λ ∈ (0, 1]`.
pub fn quantile(d: &ScenarioDistribution, level: f64) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(RiskError::Domain {
            name: "level",
            value: level,
            range: "(0, 1]",
        });
    }
    let law = d.law();
    let z = cumulative(law.iter().map(|a| a.1));
    for (i, &(v, _)) in law.iter().enumerate() {
        if z[i] >= level {
            return Ok(v);
        }
    }
    Ok(law[law.len() - 1].0)
}

/// Tail V@R `ρ_λ(X) = -λ⁻¹ ∫_0^λ q_x dx`, with the atom at the quantile
/// split so that exactly mass `λ` is used.
pub fn tail_var(d: &ScenarioDistribution, level: f64) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(RiskError::Domain {
            name: "level",
            value: level,
            range: "(0, 1]",
        });
    }
    let law = d.law();
    let mut acc = Vec::with_capacity(law.len());
    let mut used = 0.0_f64;
    for (v, p) in law {
        let take = p.min(level - used);
        if take <= 0.0 {
            break;
        }
        acc.push(take * v);
        used += take;
    }
    Ok(-compensated_sum(acc) / level)
}

/// Weighted V@R `ρ_μ(X) = -Σ_t x_(t) [Ψ(z_t) - Ψ(z_{t-1})]`.
pub fn weighted_var(d: &ScenarioDistribution, measure: &WeightingMeasure) -> Result<f64> {
    Ok(-weighted_utility(d, measure)?)
}

/// Utility `u_μ = -ρ_μ`.
pub fn weighted_utility(d: &ScenarioDistribution, measure: &WeightingMeasure) -> Result<f64> {
    measure.check_estimable()?;
    let law = d.law();
    let z = cumulative(law.iter().map(|a| a.1));
    let mut terms = Vec::with_capacity(law.len());
    let mut prev = 0.0_f64;
    for (i, &(v, _)) in law.iter().enumerate() {
        let cur = measure.big_psi(z[i])?;
        terms.push(v * (cur - prev));
        prev = cur;
    }
    Ok(compensated_sum(terms))
}

/// Beta V@R from the order-statistic identity:
/// `ρ = -E[(1/β) Σ_{i ≤ β} X_(i)]` over `α` independent draws from `d`.
///
/// Evaluated with binomial sums, independently of the distortion route.
pub fn beta_var_exact(d: &ScenarioDistribution, alpha: usize, beta: usize) -> Result<f64> {
    if alpha == 0 || beta == 0 || beta > alpha {
        return Err(RiskError::Parameter(format!(
            "need 1 <= beta <= alpha, got alpha = {alpha}, beta = {beta}"
        )));
    }
    if beta == alpha {
        return Ok(-d.mean());
    }
    let law = d.law();
    let z = cumulative(law.iter().map(|a| a.1));
    // G(u) = P(ξ ≤ u) where ξ is a uniformly chosen one of the β smallest
    // of α uniforms: (1/β) Σ_j min(j, β) P(Bin(α, u) = j).
    let g = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let s = compensated_sum(
            (1..=alpha as u64).map(|j| j.min(beta as u64) as f64 * binomial_pmf(alpha as u64, j, u)),
        );
        s / beta as f64
    };
    let mut terms = Vec::with_capacity(law.len());
    let mut prev = 0.0;
    for (i, &(v, _)) in law.iter().enumerate() {
        let cur = g(z[i]);
        terms.push(v * (cur - prev));
        prev = cur;
    }
    Ok(-compensated_sum(terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(values: &[f64], probs: &[f64]) -> ScenarioDistribution {
        ScenarioDistribution::new(values.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(ScenarioDistribution::new(vec![], vec![]).is_err());
        assert!(ScenarioDistribution::new(vec![1.0], vec![0.5]).is_err());
        assert!(ScenarioDistribution::new(vec![1.0, 2.0], vec![0.5]).is_err());
        assert!(ScenarioDistribution::new(vec![1.0, 2.0], vec![1.5, -0.5]).is_err());
        assert!(ScenarioDistribution::uniform((0..100_000).map(|i| i as f64).collect()).is_ok());
    }

    #[test]
    fn fixed_examples() {
        let d = dist(&[-1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]);
        assert_eq!(quantile(&d, 0.25).unwrap(), -1.0);
        assert_eq!(quantile(&d, 0.5).unwrap(), 0.0);
        assert!((tail_var(&d, 0.25).unwrap() - 1.0).abs() < 1e-15);
        assert!((tail_var(&d, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let two = dist(&[0.0, 1.0], &[0.5, 0.5]);
        let b = beta_var_exact(&two, 2, 1).unwrap();
        assert!((b + 0.25).abs() < 1e-14, "{b}");
    }

    #[test]
    fn constant_and_mean() {
        let c = dist(&[3.0, 3.0, 3.0], &[0.2, 0.3, 0.5]);
        let m = WeightingMeasure::beta(7.0, 2.0).unwrap();
        assert!((weighted_var(&c, &m).unwrap() + 3.0).abs() < 1e-13);
        let d = dist(&[-2.0, 0.5, 4.0], &[0.3, 0.3, 0.4]);
        let mean = WeightingMeasure::tail(1.0).unwrap();
        assert!((weighted_var(&d, &mean).unwrap() + d.mean()).abs() < 1e-15);
    }

    #[test]
    fn tail_routes_agree() {
        let d = dist(&[5.0, -3.0, 2.0, -3.0, 0.0], &[0.1, 0.15, 0.3, 0.05, 0.4]);
        for &l in &[0.05, 0.1, 0.2, 0.21, 0.5, 0.99, 1.0] {
            let a = tail_var(&d, l).unwrap();
            let b = weighted_var(&d, &WeightingMeasure::tail(l).unwrap()).unwrap();
            assert!((a - b).abs() < 1e-12, "λ = {l}: {a} vs {b}");
        }
    }

    #[test]
    fn permutation_gives_identical_bits() {
        let v = vec![0.3, -1.2, 0.3, 2.5, -0.7];
        let p = vec![0.1, 0.2, 0.3, 0.15, 0.25];
        let d1 = dist(&v, &p);
        let order = [4, 2, 0, 3, 1];
        let d2 = dist(
            &order.iter().map(|&i| v[i]).collect::<Vec<_>>(),
            &order.iter().map(|&i| p[i]).collect::<Vec<_>>(),
        );
        let m = WeightingMeasure::beta(9.0, 3.0).unwrap();
        assert_eq!(
            weighted_var(&d1, &m).unwrap().to_bits(),
            weighted_var(&d2, &m).unwrap().to_bits()
        );
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let d = dist(&[0.0, 1.0], &[0.5, 0.5]);
        let m = WeightingMeasure::beta(-0.5, -0.7).unwrap();
        assert!(weighted_var(&d, &m).is_err());
    }
}
