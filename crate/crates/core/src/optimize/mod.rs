//! Maximizing expected reward under several Weighted V@R limits.
//!
//! `max ⟨h, E⟩` subject to `ρ^m(⟨h, X^m⟩) ≤ c^m` is solved on the slice
//! `⟨h, E⟩ = 1` by maximizing the concave function
//! `f(h) = min_m u^m(⟨h, X^m⟩) / c^m` with projected supergradient ascent
//! and then rescaling the maximizer so that the tightest limit binds.

pub mod geometry;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use geometry::{geometric_solution, hull_facets, Facet, GeometricSolution};

use crate::contribution::extreme_measure;
use crate::distortion::WeightingMeasure;
use crate::error::{Result, RiskError};
use crate::factor::{fit, FactorSample, Regression};
use crate::numeric::compensated_sum;
use crate::panel::JointPanel;
use crate::scenario_risk::ScenarioDistribution;

/// One risk limit `ρ_μ(⟨h, X⟩) ≤ limit`.
#[derive(Debug, Clone)]
pub struct RiskLimit {
    pub measure: WeightingMeasure,
    pub limit: f64,
    /// Scenario panel the limit is measured on, when it differs from the
    /// problem panel (for example the factor projection `E(X | Y^m)`).
    pub panel: Option<JointPanel>,
}

impl RiskLimit {
    pub fn new(measure: WeightingMeasure, limit: f64) -> Self {
        Self {
            measure,
            limit,
            panel: None,
        }
    }

    /// A limit on the factor risk: the panel is replaced by `E(X_i | Y)`
    /// for each asset, which turns `ρ(E(⟨h, X⟩ | Y))` into a limit on the
    /// projected panel because conditional expectation is linear.
    pub fn on_factors(
        measure: WeightingMeasure,
        limit: f64,
        panel: &JointPanel,
        factors: &FactorSample,
        method: &Regression,
    ) -> Result<Self> {
        Ok(Self {
            measure,
            limit,
            panel: Some(project_panel(panel, factors, method)?),
        })
    }
}

/// Replaces every asset column by its fitted conditional expectation.
pub fn project_panel(panel: &JointPanel, factors: &FactorSample, method: &Regression) -> Result<JointPanel> {
    if factors.len() != panel.len() {
        return Err(RiskError::Shape {
            context: "factor sample length",
            expected: panel.len(),
            found: factors.len(),
        });
    }
    let probs = panel.probs();
    let columns = (0..panel.n_assets())
        .map(|j| fit(&panel.column(j), factors, &probs, method)?.predict_all(factors))
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..panel.len())
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    JointPanel::new(
        panel.dates().to_vec(),
        panel.assets().to_vec(),
        rows,
        panel.has_explicit_probs().then_some(probs),
    )
}

/// Reward vector, scenario panel and risk limits.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub panel: JointPanel,
    pub rewards: Vec<f64>,
    pub constraints: Vec<RiskLimit>,
}

/// Utility and supergradient of `h ↦ u_μ(⟨h, X⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub value: f64,
    /// `E_Q X` under the extreme measure of `⟨h, X⟩`.
    pub supergradient: Vec<f64>,
}

/// `u_μ(⟨h, X⟩) = min_{Q} E_Q ⟨h, X⟩` with a supergradient `E_Q X`.
///
/// At `h = 0` all scenarios tie and `Q = P`, so the supergradient is `E_P X`.
pub fn support_value(panel: &JointPanel, h: &[f64], measure: &WeightingMeasure) -> Result<Support> {
    let pnl = panel.portfolio(h)?;
    let d = ScenarioDistribution::new(pnl.clone(), panel.probs())?;
    let q = extreme_measure(&d, measure)?;
    let value = q.expectation(&pnl)?;
    let supergradient = (0..panel.n_assets())
        .map(|j| compensated_sum((0..panel.len()).map(|t| q.weights[t] * panel.row(t)[j])))
        .collect();
    Ok(Support {
        value,
        supergradient,
    })
}

/// Settings of the supergradient ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub restarts: usize,
    pub iterations: usize,
    /// Step length `a / (b + k)` in units of `1 / |E|`.
    pub step_a: f64,
    pub step_b: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            iterations: 1500,
            step_a: 1.0,
            step_b: 10.0,
            seed: 0,
        }
    }
}

/// Optimal positions and the risk of each limit at the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub positions: Vec<f64>,
    pub objective: f64,
    pub risks: Vec<f64>,
    pub binding: Vec<bool>,
    /// Best value of `min_m u^m / c^m` on the slice `⟨h, E⟩ = 1`.
    pub slice_value: f64,
    pub iterations: usize,
}

struct Prepared<'a> {
    panels: Vec<&'a JointPanel>,
    measures: Vec<&'a WeightingMeasure>,
    limits: Vec<f64>,
}

impl Prepared<'_> {
    /// `f(h)` and a supergradient of it.
    fn eval(&self, h: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for m in 0..self.limits.len() {
            let s = support_value(self.panels[m], h, self.measures[m])?;
            let v = s.value / self.limits[m];
            if best.as_ref().is_none_or(|b| v < b.0) {
                let g = s.supergradient.iter().map(|x| x / self.limits[m]).collect();
                best = Some((v, g));
            }
        }
        best.ok_or(RiskError::Empty("risk limits"))
    }
}

fn validate(problem: &OptimizationProblem) -> Result<Prepared<'_>> {
    let d = problem.panel.n_assets();
    if problem.rewards.len() != d {
        return Err(RiskError::Shape {
            context: "reward vector",
            expected: d,
            found: problem.rewards.len(),
        });
    }
    if problem.constraints.is_empty() {
        return Err(RiskError::Empty("risk limits"));
    }
    let mut prepared = Prepared {
        panels: Vec::new(),
        measures: Vec::new(),
        limits: Vec::new(),
    };
    for c in &problem.constraints {
        if !(c.limit > 0.0 && c.limit.is_finite()) {
            return Err(RiskError::Parameter(format!("risk limit {} must be positive", c.limit)));
        }
        c.measure.check_estimable()?;
        let panel = c.panel.as_ref().unwrap_or(&problem.panel);
        if panel.n_assets() != d {
            return Err(RiskError::Shape {
                context: "limit panel assets",
                expected: d,
                found: panel.n_assets(),
            });
        }
        prepared.panels.push(panel);
        prepared.measures.push(&c.measure);
        prepared.limits.push(c.limit);
    }
    Ok(prepared)
}

fn project_onto_slice(g: &[f64], e: &[f64], e2: f64) -> Vec<f64> {
    let ge: f64 = g.iter().zip(e).map(|(a, b)| a * b).sum();
    g.iter().zip(e).map(|(a, b)| a - ge / e2 * b).collect()
}

/// Solves the risk-limited reward maximization.
///
/// Fails when positive reward can be earned without risk (the problem is
/// unbounded) or when the rewards vanish.
pub fn solve_portfolio(problem: &OptimizationProblem, opts: &SolverOptions) -> Result<PortfolioSolution> {
    let prepared = validate(problem)?;
    let e = &problem.rewards;
    let d = e.len();
    let e2: f64 = e.iter().map(|v| v * v).sum();
    if !(e2 > 0.0) {
        return Err(RiskError::Parameter("reward vector is zero".into()));
    }
    let r0 = 1.0 / e2.sqrt();
    let h0: Vec<f64> = e.iter().map(|v| v / e2).collect();

    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            if r == 0 {
                return h0.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = project_onto_slice(&z, e, e2);
            let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            h0.iter().zip(&p).map(|(a, b)| a + 2.0 * r0 * b / pn).collect()
        })
        .collect();

    let runs = starts
        .par_iter()
        .map(|start| -> Result<(f64, Vec<f64>)> {
            let mut h = start.clone();
            let (mut best_v, _) = prepared.eval(&h)?;
            let mut best_h = h.clone();
            for k in 0..opts.iterations {
                let (v, g) = prepared.eval(&h)?;
                if v > best_v {
                    best_v = v;
                    best_h = h.clone();
                }
                let p = project_onto_slice(&g, e, e2);
                let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(pn > 1e-15 * r0.recip()) {
                    break;
                }
                let step = opts.step_a / (opts.step_b + k as f64) * r0;
                for (hi, pi) in h.iter_mut().zip(&p) {
                    *hi += step * pi / pn;
                }
            }
            let (v, _) = prepared.eval(&h)?;
            if v > best_v {
                best_v = v;
                best_h = h;
            }
            Ok((best_v, best_h))
        })
        .collect::<Result<Vec<_>>>()?;
    let (slice_value, h) = runs
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one restart");
    if !slice_value.is_finite() {
        return Err(RiskError::Divergence("objective became non-finite".into()));
    }
    if slice_value >= -1e-12 {
        return Err(RiskError::Infeasible(
            "positive reward is attainable without risk; the problem is unbounded".into(),
        ));
    }
    let positions: Vec<f64> = h.iter().map(|v| v / -slice_value).collect();
    let risks = (0..prepared.limits.len())
        .map(|m| support_value(prepared.panels[m], &positions, prepared.measures[m]).map(|s| -s.value))
        .collect::<Result<Vec<f64>>>()?;
    let binding = risks
        .iter()
        .zip(&prepared.limits)
        .map(|(r, c)| *r >= c * (1.0 - 1e-6))
        .collect();
    Ok(PortfolioSolution {
        objective: positions.iter().zip(e).map(|(a, b)| a * b).sum(),
        positions,
        risks,
        binding,
        slice_value,
        iterations: opts.iterations,
    })
}

/// Points `E_Q X / c^m` on the boundary of each scaled generator set,
/// sampled at `directions` positions on the unit circle (two assets only).
pub fn sample_generator_points(problem: &OptimizationProblem, directions: usize) -> Result<Vec<Vec<f64>>> {
    let prepared = validate(problem)?;
    if problem.panel.n_assets() != 2 {
        return Err(RiskError::Parameter("generator sampling is implemented for two assets".into()));
    }
    let mut out = Vec::new();
    for k in 0..directions {
        let a = 2.0 * std::f64::consts::PI * k as f64 / directions as f64;
        let h = [a.cos(), a.sin()];
        for m in 0..prepared.limits.len() {
            let s = support_value(prepared.panels[m], &h, prepared.measures[m])?;
            out.push(s.supergradient.iter().map(|v| v / prepared.limits[m]).collect());
        }
    }
    Ok(out)
}
