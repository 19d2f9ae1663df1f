//! Sharing firm-wide risk limits between desks.
//!
//! Each firm limit `m` has a price `α^m ≥ 0`. At the firm optimum the reward
//! vector is a non-negative combination of the contribution gradients,
//! `E^n = -Σ_m α^m E_{Q^m} X^n`, with `Q^m` the extreme measure of the firm
//! P&L. Desks trade limits `a^{nm}` at these prices; trades net to zero
//! across desks and leave every desk at its own optimum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::contribution::{extreme_measure, ExtremeMeasure};
use crate::distortion::WeightingMeasure;
use crate::error::{Result, RiskError};
use crate::numeric::{compensated_sum, nnls};
use crate::optimize::{solve_portfolio, OptimizationProblem, RiskLimit, SolverOptions};
use crate::panel::JointPanel;
use crate::scenario_risk::{weighted_utility, ScenarioDistribution};

/// A desk: its assets as a panel over the firm's common scenarios.
#[derive(Debug, Clone)]
pub struct Desk {
    pub name: String,
    pub panel: JointPanel,
    pub rewards: Vec<f64>,
    /// Optional per-asset position bounds `(lo, hi)`.
    pub bounds: Option<Vec<(f64, f64)>>,
}

/// A firm-wide limit `ρ_μ(W) ≤ limit` on the total P&L `W`.
#[derive(Debug, Clone)]
pub struct FirmLimit {
    pub measure: WeightingMeasure,
    pub limit: f64,
}

/// Desks, firm limits and the initial split `c^{nm}` of each limit.
#[derive(Debug, Clone)]
pub struct FirmInstance {
    pub desks: Vec<Desk>,
    pub limits: Vec<FirmLimit>,
    /// `allocation[n][m] = c^{nm}`, with `Σ_n c^{nm} = c^m`.
    pub allocation: Vec<Vec<f64>>,
}

/// Tolerances used to classify constraints and judge the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumTolerances {
    /// A limit binds when `ρ^m ≥ c^m (1 - binding)`.
    pub binding: f64,
    /// Largest accepted first-order residual, relative to `max |E|`.
    pub residual: f64,
    /// Largest accepted per-desk improvement, relative to the firm objective.
    pub improvement: f64,
    /// Accepted imbalance of trade columns and excess of risk over limits.
    pub balance: f64,
}

impl Default for EquilibriumTolerances {
    fn default() -> Self {
        Self {
            binding: 1e-2,
            residual: 1e-3,
            improvement: 5e-3,
            balance: 1e-9,
        }
    }
}

impl FirmInstance {
    /// Checks shapes, a common scenario set and that allocations add up.
    pub fn validate(&self) -> Result<()> {
        let first = self.desks.first().ok_or(RiskError::Empty("desks"))?;
        if self.limits.is_empty() {
            return Err(RiskError::Empty("firm limits"));
        }
        let t = first.panel.len();
        let probs = first.panel.probs();
        for d in &self.desks {
            if d.panel.len() != t {
                return Err(RiskError::Shape {
                    context: "desk scenario count",
                    expected: t,
                    found: d.panel.len(),
                });
            }
            if d.panel.probs() != probs {
                return Err(RiskError::InvalidDistribution(format!(
                    "desk '{}' uses different scenario probabilities",
                    d.name
                )));
            }
            if d.rewards.len() != d.panel.n_assets() {
                return Err(RiskError::Shape {
                    context: "desk rewards",
                    expected: d.panel.n_assets(),
                    found: d.rewards.len(),
                });
            }
            if let Some(b) = &d.bounds {
                if b.len() != d.panel.n_assets() || b.iter().any(|(lo, hi)| !(lo <= hi)) {
                    return Err(RiskError::Parameter(format!("bad position bounds for desk '{}'", d.name)));
                }
            }
        }
        if self.allocation.len() != self.desks.len() {
            return Err(RiskError::Shape {
                context: "allocation rows",
                expected: self.desks.len(),
                found: self.allocation.len(),
            });
        }
        for (m, l) in self.limits.iter().enumerate() {
            if !(l.limit > 0.0) {
                return Err(RiskError::Parameter(format!("firm limit {m} must be positive")));
            }
            l.measure.check_estimable()?;
            let mut col = Vec::with_capacity(self.desks.len());
            for row in &self.allocation {
                if row.len() != self.limits.len() {
                    return Err(RiskError::Shape {
                        context: "allocation columns",
                        expected: self.limits.len(),
                        found: row.len(),
                    });
                }
                col.push(row[m]);
            }
            let s = compensated_sum(col);
            if (s - l.limit).abs() > 1e-12 * l.limit.max(1.0) {
                return Err(RiskError::Parameter(format!(
                    "allocations of limit {m} sum to {s}, expected {}",
                    l.limit
                )));
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> Vec<f64> {
        self.desks[0].panel.probs()
    }

    /// Firm P&L `W = Σ_n ⟨h^n, X^n⟩` per scenario.
    pub fn firm_pnl(&self, positions: &[Vec<f64>]) -> Result<Vec<f64>> {
        if positions.len() != self.desks.len() {
            return Err(RiskError::Shape {
                context: "desk positions",
                expected: self.desks.len(),
                found: positions.len(),
            });
        }
        let parts = self
            .desks
            .iter()
            .zip(positions)
            .map(|(d, h)| d.panel.portfolio(h))
            .collect::<Result<Vec<_>>>()?;
        let t = self.desks[0].panel.len();
        Ok((0..t).map(|s| compensated_sum(parts.iter().map(|p| p[s]))).collect())
    }

    /// All desks' assets side by side.
    pub fn stacked_panel(&self) -> Result<JointPanel> {
        let first = &self.desks[0].panel;
        let mut assets = Vec::new();
        for d in &self.desks {
            assets.extend(d.panel.assets().iter().map(|a| format!("{}/{}", d.name, a)));
        }
        let rows = (0..first.len())
            .map(|t| self.desks.iter().flat_map(|d| d.panel.row(t).to_vec()).collect())
            .collect();
        JointPanel::new(
            first.dates().to_vec(),
            assets,
            rows,
            first.has_explicit_probs().then(|| first.probs()),
        )
    }

    pub fn stacked_rewards(&self) -> Vec<f64> {
        self.desks.iter().flat_map(|d| d.rewards.clone()).collect()
    }

    fn split(&self, stacked: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.desks.len());
        let mut at = 0;
        for d in &self.desks {
            out.push(stacked[at..at + d.panel.n_assets()].to_vec());
            at += d.panel.n_assets();
        }
        out
    }
}

/// Firm optimum found by optimizing all desks jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmSolution {
    pub positions: Vec<Vec<f64>>,
    pub objective: f64,
}

/// Solves the joint problem over all desks' assets. Position bounds are not
/// part of the joint problem.
pub fn solve_firm(firm: &FirmInstance, opts: &SolverOptions) -> Result<FirmSolution> {
    firm.validate()?;
    let problem = OptimizationProblem {
        panel: firm.stacked_panel()?,
        rewards: firm.stacked_rewards(),
        constraints: firm
            .limits
            .iter()
            .map(|l| RiskLimit::new(l.measure.clone(), l.limit))
            .collect(),
    };
    let sol = solve_portfolio(&problem, opts)?;
    Ok(FirmSolution {
        positions: firm.split(&sol.positions),
        objective: sol.objective,
    })
}

/// Prices of the firm limits at given positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub alpha: Vec<f64>,
    /// `max |E + Σ_m α^m E_{Q^m} X|` over all assets.
    pub residual: f64,
    pub risks: Vec<f64>,
    pub binding: Vec<bool>,
    pub extreme: Vec<ExtremeMeasure>,
}

/// Solves `E = -Σ_{m binding} α^m E_{Q^m} X` for `α ≥ 0` in least squares;
/// slack limits get a zero price.
pub fn equilibrium_prices(
    firm: &FirmInstance,
    positions: &[Vec<f64>],
    tol: &EquilibriumTolerances,
) -> Result<Prices> {
    firm.validate()?;
    let w = firm.firm_pnl(positions)?;
    let d = ScenarioDistribution::new(w, firm.probs())?;
    let stacked = firm.stacked_panel()?;
    let rewards = firm.stacked_rewards();
    let mut risks = Vec::new();
    let mut binding = Vec::new();
    let mut extreme = Vec::new();
    let mut grads = Vec::new();
    for l in &firm.limits {
        let rho = -weighted_utility(&d, &l.measure)?;
        let q = extreme_measure(&d, &l.measure)?;
        let g: Vec<f64> = (0..stacked.n_assets())
            .map(|j| compensated_sum((0..stacked.len()).map(|t| q.weights[t] * stacked.row(t)[j])))
            .collect();
        binding.push(rho >= l.limit * (1.0 - tol.binding));
        risks.push(rho);
        extreme.push(q);
        grads.push(g);
    }
    let active: Vec<usize> = (0..firm.limits.len()).filter(|&m| binding[m]).collect();
    let columns: Vec<Vec<f64>> = active
        .iter()
        .map(|&m| grads[m].iter().map(|v| -v).collect())
        .collect();
    let sol = nnls(&columns, &rewards)?;
    let mut alpha = vec![0.0; firm.limits.len()];
    for (k, &m) in active.iter().enumerate() {
        alpha[m] = sol[k];
    }
    let residual = (0..rewards.len())
        .map(|j| {
            let v = rewards[j] + compensated_sum((0..alpha.len()).map(|m| alpha[m] * grads[m][j]));
            v.abs()
        })
        .fold(0.0, f64::max);
    Ok(Prices {
        alpha,
        residual,
        risks,
        binding,
        extreme,
    })
}

/// Contributions `r^{nm} = -E_{Q^m} ⟨h^n, X^n⟩` of each desk to each limit.
pub fn desk_contributions(firm: &FirmInstance, positions: &[Vec<f64>], prices: &Prices) -> Result<Vec<Vec<f64>>> {
    firm.desks
        .iter()
        .zip(positions)
        .map(|(d, h)| {
            let pnl = d.panel.portfolio(h)?;
            prices
                .extreme
                .iter()
                .map(|q| q.expectation(&pnl).map(|e| -e))
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Limit trades `a^{nm} = r^{nm} - c^{nm} + s^m c^{nm} / c^m`, where
/// `s^m = c^m - Σ_n r^{nm}` is the unused part of limit `m`. Columns sum to
/// zero; the last desk absorbs rounding.
pub fn limit_trades(firm: &FirmInstance, positions: &[Vec<f64>], prices: &Prices) -> Result<Vec<Vec<f64>>> {
    let r = desk_contributions(firm, positions, prices)?;
    trades_from_contributions(firm, &r)
}

fn trades_from_contributions(firm: &FirmInstance, r: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = firm.desks.len();
    let mut a = vec![vec![0.0; firm.limits.len()]; n];
    for (m, l) in firm.limits.iter().enumerate() {
        let used = compensated_sum((0..n).map(|k| r[k][m]));
        let slack = l.limit - used;
        if slack < -1e-9 * l.limit.max(1.0) {
            return Err(RiskError::Infeasible(format!(
                "limit {m} is exceeded: risk {used} > {}",
                l.limit
            )));
        }
        for k in 0..n.saturating_sub(1) {
            let c = firm.allocation[k][m];
            a[k][m] = r[k][m] - c + slack.max(0.0) * c / l.limit;
        }
        a[n - 1][m] = -compensated_sum((0..n - 1).map(|k| a[k][m]));
    }
    Ok(a)
}

/// Solves the trades from explicit contributions, e.g. reported by desks.
pub fn limit_trades_from_contributions(firm: &FirmInstance, contributions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    firm.validate()?;
    if contributions.len() != firm.desks.len() || contributions.iter().any(|r| r.len() != firm.limits.len()) {
        return Err(RiskError::Shape {
            context: "contribution matrix",
            expected: firm.desks.len(),
            found: contributions.len(),
        });
    }
    trades_from_contributions(firm, contributions)
}

/// Result of checking the four equilibrium conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// `Σ_n a^{nm}` for each limit.
    pub trade_column_sums: Vec<f64>,
    pub risks: Vec<f64>,
    pub limits: Vec<f64>,
    pub binding: Vec<bool>,
    pub feasible: bool,
    /// Largest price on a slack limit.
    pub slack_price: f64,
    pub residual: f64,
    /// Best reward gain found for each desk within a ball of radius `|h^n|`.
    pub desk_improvement: Vec<f64>,
    /// Largest desk gain relative to the firm objective.
    pub max_relative_improvement: f64,
    /// Desks with a position on one of its bounds.
    pub boundary_contact: Vec<bool>,
    pub firm_objective: f64,
    /// `Σ_n (⟨h^n, E^n⟩ - ⟨a^n, α⟩)`.
    pub total_net_reward: f64,
    pub passed: bool,
}

/// Checks trades netting to zero, firm feasibility with a binding limit,
/// complementary slackness and per-desk optimality at the given prices.
///
/// With `Q^m` frozen, a desk's objective `⟨h, E^n⟩ - ⟨a, α⟩` with its
/// cheapest limit purchase is linear in `h` with gradient
/// `E^n + Σ_m α^m E_{Q^m} X^n`; the gain over a ball of radius `|h^n|`
/// (clipped to the desk's bounds) measures how far the desk is from its
/// optimum.
pub fn verify_equilibrium(
    firm: &FirmInstance,
    positions: &[Vec<f64>],
    trades: &[Vec<f64>],
    prices: &Prices,
    tol: &EquilibriumTolerances,
) -> Result<EquilibriumReport> {
    firm.validate()?;
    let n = firm.desks.len();
    let m = firm.limits.len();
    let trade_column_sums: Vec<f64> = (0..m)
        .map(|k| compensated_sum(trades.iter().map(|row| row[k])))
        .collect();
    let limits: Vec<f64> = firm.limits.iter().map(|l| l.limit).collect();
    let feasible = prices
        .risks
        .iter()
        .zip(&limits)
        .all(|(r, c)| *r <= c * (1.0 + tol.balance.max(1e-9)) + tol.balance);
    let slack_price = (0..m)
        .filter(|&k| !prices.binding[k])
        .map(|k| prices.alpha[k])
        .fold(0.0, f64::max);
    let firm_objective = compensated_sum(
        firm.desks
            .iter()
            .zip(positions)
            .flat_map(|(d, h)| d.rewards.iter().zip(h).map(|(e, x)| e * x)),
    );
    let mut desk_improvement = Vec::with_capacity(n);
    let mut boundary_contact = Vec::with_capacity(n);
    let mut net = Vec::with_capacity(n);
    for (k, (desk, h)) in firm.desks.iter().zip(positions).enumerate() {
        let grads: Vec<Vec<f64>> = prices
            .extreme
            .iter()
            .map(|q| {
                (0..desk.panel.n_assets())
                    .map(|j| q.expectation(&desk.panel.column(j)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let g: Vec<f64> = (0..desk.panel.n_assets())
            .map(|j| desk.rewards[j] + compensated_sum((0..m).map(|l| prices.alpha[l] * grads[l][j])))
            .collect();
        let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = if hn > 0.0 { hn } else { 1.0 };
        let (gain, contact) = ball_box_gain(h, &g, radius, desk.bounds.as_deref());
        desk_improvement.push(gain);
        boundary_contact.push(contact);
        let reward = compensated_sum(desk.rewards.iter().zip(h).map(|(e, x)| e * x));
        net.push(reward - compensated_sum(trades[k].iter().zip(&prices.alpha).map(|(a, p)| a * p)));
    }
    let scale = firm_objective.abs().max(f64::MIN_POSITIVE);
    let max_relative_improvement = desk_improvement.iter().fold(0.0_f64, |a, g| a.max(*g)) / scale;
    let emax = firm
        .stacked_rewards()
        .iter()
        .fold(0.0_f64, |a, e| a.max(e.abs()));
    let balanced = trade_column_sums
        .iter()
        .zip(&limits)
        .all(|(s, c)| s.abs() <= tol.balance * c.max(1.0));
    let any_binding = prices.binding.iter().any(|&b| b) || emax == 0.0;
    let passed = balanced
        && feasible
        && any_binding
        && slack_price == 0.0
        && prices.residual <= tol.residual * emax.max(f64::MIN_POSITIVE)
        && (firm_objective == 0.0 || max_relative_improvement <= tol.improvement);
    Ok(EquilibriumReport {
        trade_column_sums,
        risks: prices.risks.clone(),
        limits,
        binding: prices.binding.clone(),
        feasible,
        slack_price,
        residual: prices.residual,
        desk_improvement,
        max_relative_improvement,
        boundary_contact,
        firm_objective,
        total_net_reward: compensated_sum(net),
        passed,
    })
}

/// Largest `⟨Δ, g⟩` over `|Δ| ≤ radius` keeping `h + Δ` inside the bounds,
/// found by stepping along the admissible part of `g` and clipping.
fn ball_box_gain(h: &[f64], g: &[f64], radius: f64, bounds: Option<&[(f64, f64)]>) -> (f64, bool) {
    let mut dir = g.to_vec();
    let mut contact = false;
    if let Some(b) = bounds {
        for (i, &(lo, hi)) in b.iter().enumerate() {
            let eps = 1e-9 * (1.0 + h[i].abs());
            let at_lo = h[i] <= lo + eps;
            let at_hi = h[i] >= hi - eps;
            contact |= at_lo || at_hi;
            if (at_hi && dir[i] > 0.0) || (at_lo && dir[i] < 0.0) {
                dir[i] = 0.0;
            }
        }
    }
    let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dn == 0.0 {
        return (0.0, contact);
    }
    let mut gain = 0.0;
    for i in 0..h.len() {
        let mut target = h[i] + radius * dir[i] / dn;
        if let Some(b) = bounds {
            target = target.clamp(b[i].0, b[i].1);
        }
        gain += (target - h[i]) * g[i];
    }
    (gain.max(0.0), contact)
}

/// Positions, prices, trades and the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub positions: Vec<Vec<f64>>,
    pub prices: Prices,
    pub trades: Vec<Vec<f64>>,
    pub report: EquilibriumReport,
}

/// Computes prices and trades at `positions`, or at the firm optimum when
/// no positions are given, and verifies the result.
pub fn compute_equilibrium(
    firm: &FirmInstance,
    positions: Option<Vec<Vec<f64>>>,
    opts: &SolverOptions,
    tol: &EquilibriumTolerances,
) -> Result<Equilibrium> {
    let positions = match positions {
        Some(p) => p,
        None => solve_firm(firm, opts)?.positions,
    };
    let prices = equilibrium_prices(firm, &positions, tol)?;
    let trades = limit_trades(firm, &positions, &prices)?;
    let report = verify_equilibrium(firm, &positions, &trades, &prices, tol)?;
    Ok(Equilibrium {
        positions,
        prices,
        trades,
        report,
    })
}

/// Outcome of letting desks optimize alone under a decentralized rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecentralizedReport {
    /// Each desk's own optimum (`None` when its problem is unbounded).
    pub desk_positions: Vec<Option<Vec<f64>>>,
    pub decentralized_objective: f64,
    pub global_objective: f64,
    /// `global_objective - decentralized_objective`.
    pub gap: f64,
    /// `1 - cos` between each desk's own optimum and its part of the firm
    /// optimum.
    pub direction_mismatch: Vec<f64>,
}

fn mismatch(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Each desk maximizes its reward under its share `c^{nm}` of every limit,
/// measured on its own P&L.
pub fn decentralize_outstanding(firm: &FirmInstance, opts: &SolverOptions) -> Result<DecentralizedReport> {
    let global = solve_firm(firm, opts)?;
    let mut desk_positions = Vec::new();
    let mut total = 0.0;
    let mut mis = Vec::new();
    for (k, d) in firm.desks.iter().enumerate() {
        let constraints = firm
            .limits
            .iter()
            .zip(&firm.allocation[k])
            .map(|(l, &c)| {
                if c > 0.0 {
                    Ok(RiskLimit::new(l.measure.clone(), c))
                } else {
                    Err(RiskError::Parameter(format!("desk '{}' has a non-positive allocation", d.name)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let sol = solve_portfolio(
            &OptimizationProblem {
                panel: d.panel.clone(),
                rewards: d.rewards.clone(),
                constraints,
            },
            opts,
        )?;
        total += sol.objective;
        mis.push(mismatch(&sol.positions, &global.positions[k]));
        desk_positions.push(Some(sol.positions));
    }
    Ok(DecentralizedReport {
        desk_positions,
        decentralized_objective: total,
        global_objective: global.objective,
        gap: global.objective - total,
        direction_mismatch: mis,
    })
}

/// Each desk maximizes its reward under a fixed limit on its contribution,
/// set at the contributions of the reference positions `h_ref`, with the
/// extreme measures frozen at `h_ref`.
pub fn decentralize_fixed_contributions(
    firm: &FirmInstance,
    reference: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<DecentralizedReport> {
    let global = solve_firm(firm, opts)?;
    let w = firm.firm_pnl(reference)?;
    let d = ScenarioDistribution::new(w, firm.probs())?;
    let qs = firm
        .limits
        .iter()
        .map(|l| extreme_measure(&d, &l.measure))
        .collect::<Result<Vec<_>>>()?;
    let mut desk_positions = Vec::new();
    let mut total = 0.0;
    let mut mis = Vec::new();
    for (k, desk) in firm.desks.iter().enumerate() {
        let h_ref = &reference[k];
        // Contribution gradients g^m = -E_{Q^m} X^n and budgets c^m = ⟨g^m, h_ref⟩.
        let grads: Vec<Vec<f64>> = qs
            .iter()
            .map(|q| {
                (0..desk.panel.n_assets())
                    .map(|j| q.expectation(&desk.panel.column(j)).map(|e| -e))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let budgets: Vec<f64> = grads
            .iter()
            .map(|g| g.iter().zip(h_ref).map(|(a, b)| a * b).sum())
            .collect();
        // The linear program max ⟨h, E⟩ s.t. ⟨g^m, h⟩ ≤ c^m is bounded exactly
        // when E is a non-negative combination of the g^m; then h_ref is a
        // maximizer if it satisfies the active constraints with equality.
        let weights = nnls(&grads, &desk.rewards)?;
        let fit: Vec<f64> = (0..desk.rewards.len())
            .map(|j| desk.rewards[j] - (0..grads.len()).map(|m| weights[m] * grads[m][j]).sum::<f64>())
            .collect();
        let bounded = fit.iter().all(|v| v.abs() <= 1e-9 * (1.0 + desk.rewards.iter().map(|e| e.abs()).fold(0.0, f64::max)));
        if bounded {
            let value: f64 = weights.iter().zip(&budgets).map(|(a, c)| a * c).sum();
            total += value;
            mis.push(mismatch(h_ref, &global.positions[k]));
            desk_positions.push(Some(h_ref.clone()));
        } else {
            total = f64::INFINITY;
            mis.push(1.0);
            desk_positions.push(None);
        }
    }
    Ok(DecentralizedReport {
        desk_positions,
        decentralized_objective: total,
        global_objective: global.objective,
        gap: global.objective - total,
        direction_mismatch: mis,
    })
}

/// `count` random splits of each firm limit between the desks.
pub fn random_allocations(firm: &FirmInstance, count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let n = firm.desks.len();
    let unit = Uniform::new(0.05, 1.0).expect("valid range");
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut alloc = vec![vec![0.0; firm.limits.len()]; n];
            for (m, l) in firm.limits.iter().enumerate() {
                let raw: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
                let s: f64 = raw.iter().sum();
                let mut acc = 0.0;
                for k in 0..n {
                    let c = if k + 1 == n { l.limit - acc } else { l.limit * raw[k] / s };
                    alloc[k][m] = c;
                    acc += c;
                }
            }
            alloc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_asset_desk(name: &str, values: Vec<f64>, reward: f64) -> Desk {
        Desk {
            name: name.into(),
            panel: JointPanel::from_columns(vec!["x".into()], &[values], None).unwrap(),
            rewards: vec![reward],
            bounds: None,
        }
    }

    fn two_desk_firm(rewards: (f64, f64)) -> FirmInstance {
        FirmInstance {
            desks: vec![
                one_asset_desk("a", vec![1.0, -1.0, 0.5, -0.5], rewards.0),
                one_asset_desk("b", vec![-0.2, 0.3, -1.0, 1.0], rewards.1),
            ],
            limits: vec![FirmLimit {
                measure: WeightingMeasure::tail(0.5).unwrap(),
                limit: 1.0,
            }],
            allocation: vec![vec![0.5], vec![0.5]],
        }
    }

    #[test]
    fn zero_rewards_at_zero_positions() {
        let firm = two_desk_firm((0.0, 0.0));
        let h = vec![vec![0.0], vec![0.0]];
        let p = equilibrium_prices(&firm, &h, &EquilibriumTolerances::default()).unwrap();
        assert_eq!(p.alpha, vec![0.0]);
        assert_eq!(p.residual, 0.0);
    }

    #[test]
    fn trades_from_given_contributions() {
        let firm = two_desk_firm((1.0, 1.0));
        let a = limit_trades_from_contributions(&firm, &[vec![0.8], vec![0.2]]).unwrap();
        assert!((a[0][0] - 0.3).abs() < 1e-15 && (a[1][0] + 0.3).abs() < 1e-15);
        assert_eq!(a[0][0] + a[1][0], 0.0);
    }

    #[test]
    fn allocation_must_add_up() {
        let mut firm = two_desk_firm((1.0, 1.0));
        firm.allocation = vec![vec![0.5], vec![0.6]];
        assert!(firm.validate().is_err());
    }

    #[test]
    fn ball_box_gain_respects_bounds() {
        let (g, c) = ball_box_gain(&[1.0, 0.0], &[1.0, 0.0], 1.0, Some(&[(-1.0, 1.0), (-1.0, 1.0)]));
        assert_eq!(g, 0.0);
        assert!(c);
        let (g, _) = ball_box_gain(&[0.0, 0.0], &[3.0, 4.0], 2.0, None);
        assert!((g - 10.0).abs() < 1e-12);
    }
}
