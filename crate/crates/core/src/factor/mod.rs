//! Factor risk `ρ^f(X; Y) = ρ(E(X | Y))` and factor contributions.

pub mod regression;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use regression::{fit, FactorSample, FittedRegression, Regression};

use crate::contribution::risk_contribution;
use crate::distortion::WeightingMeasure;
use crate::error::{Result, RiskError};
use crate::sampling::trial_stream;
use crate::scenario_risk::{weighted_utility, ScenarioDistribution};

/// Factor risk together with the fitted projection it was computed from.
#[derive(Debug, Clone)]
pub struct FactorRisk {
    pub risk: f64,
    /// `E(X | Y)` at every scenario.
    pub projection: Vec<f64>,
    pub method: String,
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(RiskError::Shape {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// `ρ^f(X; Y) = ρ_μ(E(X | Y))` on a scenario set.
pub fn factor_risk(
    x: &[f64],
    factors: &FactorSample,
    probs: &[f64],
    measure: &WeightingMeasure,
    method: &Regression,
) -> Result<FactorRisk> {
    check_len("factor risk position", factors.len(), x.len())?;
    let fitted = fit(x, factors, probs, method)?;
    let projection = fitted.predict_all(factors)?;
    let d = ScenarioDistribution::new(projection.clone(), probs.to_vec())?;
    Ok(FactorRisk {
        risk: -weighted_utility(&d, measure)?,
        projection,
        method: fitted.method(),
    })
}

/// Factor contribution `ρ^{fc}(X; W, Y) = ρ^c(E(X | Y); E(W | Y))`.
pub fn factor_contribution(
    x: &[f64],
    w: &[f64],
    factors: &FactorSample,
    probs: &[f64],
    measure: &WeightingMeasure,
    method: &Regression,
) -> Result<f64> {
    check_len("factor contribution position", factors.len(), x.len())?;
    check_len("factor contribution reference", factors.len(), w.len())?;
    let fx = fit(x, factors, probs, method)?.predict_all(factors)?;
    let fw = fit(w, factors, probs, method)?.predict_all(factors)?;
    risk_contribution(&fx, &fw, probs, measure)
}

/// `⟨C⁺ a, b⟩` with `C⁺` the pseudo-inverse, after checking that `a` and
/// `b` lie in the range of `C`.
fn pseudo_inverse_form(a: &[f64], b: &[f64], cov: &[Vec<f64>]) -> Result<f64> {
    let m = a.len();
    check_len("factor covariance", m, cov.len())?;
    check_len("factor covariance vector", m, b.len())?;
    for row in cov {
        check_len("factor covariance row", m, row.len())?;
    }
    let c = DMatrix::from_fn(m, m, |i, j| 0.5 * (cov[i][j] + cov[j][i]));
    let eig = SymmetricEigen::new(c);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(lmax > 0.0) {
        return Err(RiskError::Parameter("factor covariance is zero".into()));
    }
    let tol = 1e-12 * lmax;
    let av = DVector::from_column_slice(a);
    let bv = DVector::from_column_slice(b);
    let mut form = 0.0;
    let mut res_a = av.clone();
    let mut res_b = bv.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(RiskError::Parameter(format!(
                "factor covariance has negative eigenvalue {lambda}"
            )));
        }
        if lambda <= tol {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let pa = v.dot(&av);
        let pb = v.dot(&bv);
        form += pa * pb / lambda;
        res_a -= v * pa;
        res_b -= v * pb;
    }
    let worst = (res_a.norm() / av.norm().max(1.0)).max(res_b.norm() / bv.norm().max(1.0));
    if worst > 1e-8 {
        return Err(RiskError::NotInRange(worst));
    }
    Ok(form)
}

/// Gaussian factor utility `u^f = E X - γ ⟨C⁻¹ a, a⟩^{1/2}` with
/// `a = cov(X, Y)` and `C = cov(Y)`.
pub fn gaussian_factor_risk(mean_x: f64, a: &[f64], cov: &[Vec<f64>], gamma: f64) -> Result<f64> {
    let q = pseudo_inverse_form(a, a, cov)?;
    Ok(mean_x - gamma * q.max(0.0).sqrt())
}

/// Gaussian factor contribution utility
/// `u^{fc} = E X - γ ⟨C⁻¹ a, b⟩ / ⟨C⁻¹ b, b⟩^{1/2}` with `b = cov(W, Y)`.
pub fn gaussian_factor_contribution(
    mean_x: f64,
    a: &[f64],
    b: &[f64],
    cov: &[Vec<f64>],
    gamma: f64,
) -> Result<f64> {
    let ab = pseudo_inverse_form(a, b, cov)?;
    let bb = pseudo_inverse_form(b, b, cov)?;
    if !(bb > 0.0) {
        return Err(RiskError::Parameter("reference has no factor exposure".into()));
    }
    Ok(mean_x - gamma * ab / bb.sqrt())
}

/// Linear factor model `X^k = Σ_j B_kj F_j + σ_k ε_k` with independent
/// standard normal `ε_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub loadings: Vec<Vec<f64>>,
    pub idiosyncratic_vol: Vec<f64>,
}

/// Outcome of [`factor_model_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorDiagnostic {
    /// `u^f(Σ X^k; F) / u(Σ X^k)`, at most one.
    pub ratio: f64,
    pub factor_utility: f64,
    pub total_utility: f64,
}

/// Measures how much of the risk of `Σ_k X^k` the factors explain.
///
/// The idiosyncratic part of the sum is exactly `N(0, Σ σ_k²)` given the
/// factors, so it is drawn once per scenario. Every factor scenario carries
/// an antithetic pair `±η`, which makes `E(Σ X^k | F)` exact on the
/// simulated scenario set.
pub fn factor_model_diagnostic(
    model: &FactorModel,
    factors: &FactorSample,
    probs: &[f64],
    measure: &WeightingMeasure,
    seed: u64,
) -> Result<FactorDiagnostic> {
    let m = factors.dim();
    check_len("factor model vols", model.loadings.len(), model.idiosyncratic_vol.len())?;
    check_len("factor diagnostic probabilities", factors.len(), probs.len())?;
    if model.loadings.is_empty() {
        return Err(RiskError::Empty("factor model positions"));
    }
    let mut b = vec![0.0; m];
    for row in &model.loadings {
        check_len("factor loadings", m, row.len())?;
        for (acc, v) in b.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if model.idiosyncratic_vol.iter().any(|s| !(*s >= 0.0)) {
        return Err(RiskError::Parameter("idiosyncratic vols must be non-negative".into()));
    }
    let s = model.idiosyncratic_vol.iter().map(|v| v * v).sum::<f64>().sqrt();
    let systematic: Vec<f64> = factors
        .rows()
        .map(|r| r.iter().zip(&b).map(|(f, w)| f * w).sum())
        .collect();
    let mut proj = Vec::with_capacity(2 * systematic.len());
    let mut total = Vec::with_capacity(2 * systematic.len());
    let mut pp = Vec::with_capacity(2 * systematic.len());
    for (t, (&sys, &p)) in systematic.iter().zip(probs).enumerate() {
        let eta: f64 = StandardNormal.sample(&mut trial_stream(seed, t as u64));
        for sign in [1.0, -1.0] {
            proj.push(sys);
            total.push(sys + sign * s * eta);
            pp.push(0.5 * p);
        }
    }
    let factor_utility = weighted_utility(&ScenarioDistribution::new(proj, pp.clone())?, measure)?;
    let total_utility = weighted_utility(&ScenarioDistribution::new(total, pp)?, measure)?;
    if !(total_utility < 0.0) {
        return Err(RiskError::NonNegativeUtility(total_utility));
    }
    Ok(FactorDiagnostic {
        ratio: factor_utility / total_utility,
        factor_utility,
        total_utility,
    })
}
