//! Weighting measures on (0, 1] and their distortion functions.
//!
//! A weighting measure `μ` is either a finite mixture of Tail V@R levels or a
//! Beta-type density. All risk measures in the crate are built from the three
//! derived functions
//!
//! * `ψ(x) = ∫_{[x,1]} λ⁻¹ μ(dλ)` (non-increasing),
//! * `Ψ(x) = ∫_0^x ψ` (concave, `Ψ(1) = 1`),
//! * `Φ(x) = sup_y Ψ(y) - x y` (its Fenchel transform).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Result, RiskError};
use crate::numeric::{
    beta_reg, beta_reg_upper, compensated_sum, integrate, integrate_singular, ln_beta,
    normal_pdf, normal_quantile,
};

const QUAD_REL_TOL: f64 = 1e-8;

/// One point mass of a mixture: weight `weight` at level `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub level: f64,
    pub weight: f64,
}

/// Internal representation of a weighting measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeasureKind {
    /// Finite mixture of Tail V@R levels, sorted by level, weights summing to 1.
    Mixture(Vec<Atom>),
    /// Density `B(β+1, α-β)⁻¹ x^β (1-x)^{α-β-1}` on (0, 1).
    Beta { alpha: f64, beta: f64 },
}

/// A probability measure on (0, 1] defining a Weighted V@R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingMeasure {
    kind: MeasureKind,
}

impl WeightingMeasure {
    /// Tail V@R at level `λ ∈ (0, 1]`.
    pub fn tail(level: f64) -> Result<Self> {
        Self::mixture(vec![Atom { level, weight: 1.0 }])
    }

    /// Finite mixture of Tail V@R levels. Weights must be non-negative and
    /// sum to one; equal levels are merged and zero weights dropped.
    pub fn mixture(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(RiskError::InvalidMeasure("mixture has no atoms".into()));
        }
        for a in &atoms {
            if !(a.level > 0.0 && a.level <= 1.0) {
                return Err(RiskError::InvalidMeasure(format!(
                    "level {} is outside (0, 1]",
                    a.level
                )));
            }
            if !(a.weight >= 0.0 && a.weight.is_finite()) {
                return Err(RiskError::InvalidMeasure(format!("weight {} is negative", a.weight)));
            }
        }
        let total = compensated_sum(atoms.iter().map(|a| a.weight));
        if (total - 1.0).abs() > 1e-12 {
            return Err(RiskError::InvalidMeasure(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let mut atoms: Vec<Atom> = atoms.into_iter().filter(|a| a.weight > 0.0).collect();
        atoms.sort_by(|a, b| a.level.total_cmp(&b.level));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.level == a.level => last.weight += a.weight,
                _ => merged.push(a),
            }
        }
        Ok(Self {
            kind: MeasureKind::Mixture(merged),
        })
    }

    /// Beta V@R with parameters `α > -1`, `-1 < β < α`. `β = α` degenerates to
    /// the negative mean and is stored as `Tail(1)`.
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(RiskError::InvalidMeasure("non-finite beta parameters".into()));
        }
        if beta == alpha {
            return Self::tail(1.0);
        }
        if !(alpha > -1.0 && beta > -1.0 && beta < alpha) {
            return Err(RiskError::InvalidMeasure(format!(
                "beta parameters need alpha > -1 and -1 < beta < alpha, got ({alpha}, {beta})"
            )));
        }
        Ok(Self {
            kind: MeasureKind::Beta { alpha, beta },
        })
    }

    /// Alpha V@R: the expected minimum of `α` independent copies, i.e. `Beta(α, 1)`.
    pub fn alpha(alpha: f64) -> Result<Self> {
        if !(alpha >= 1.0) {
            return Err(RiskError::InvalidMeasure(format!("alpha must be >= 1, got {alpha}")));
        }
        Self::beta(alpha, 1.0)
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    /// Integer `(α, β)` pair when this is a Beta measure with integer parameters.
    pub fn integer_beta(&self) -> Option<(usize, usize)> {
        match self.kind {
            MeasureKind::Beta { alpha, beta }
                if alpha.fract() == 0.0 && beta.fract() == 0.0 && beta >= 1.0 =>
            {
                Some((alpha as usize, beta as usize))
            }
            _ => None,
        }
    }

    /// Rejects parameter ranges that the scenario estimators do not support.
    pub(crate) fn check_estimable(&self) -> Result<()> {
        match self.kind {
            MeasureKind::Beta { alpha, .. } if alpha <= 0.0 => Err(RiskError::InvalidMeasure(
                format!("beta measure with alpha = {alpha} <= 0 is not supported"),
            )),
            _ => Ok(()),
        }
    }

    /// `ψ(x)` for `x ∈ (0, 1]`.
    pub fn psi(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(RiskError::Domain {
                name: "x",
                value: x,
                range: "(0, 1]",
            });
        }
        match &self.kind {
            MeasureKind::Mixture(atoms) => Ok(compensated_sum(
                atoms.iter().filter(|a| a.level >= x).map(|a| a.weight / a.level),
            )),
            &MeasureKind::Beta { alpha, beta } => beta_psi(alpha, beta, x),
        }
    }

    /// `ψ(0+) = ∫ λ⁻¹ μ(dλ)`, possibly infinite.
    pub fn psi_at_zero(&self) -> f64 {
        match &self.kind {
            MeasureKind::Mixture(atoms) => compensated_sum(atoms.iter().map(|a| a.weight / a.level)),
            &MeasureKind::Beta { alpha, beta } => {
                if beta > 0.0 {
                    alpha / beta
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `Ψ(x)` for `x ∈ [0, 1]`.
    pub fn big_psi(&self, x: f64) -> Result<f64> {
        check_unit_interval("x", x)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        if x == 1.0 {
            return Ok(1.0);
        }
        match &self.kind {
            MeasureKind::Mixture(atoms) => Ok(compensated_sum(
                atoms.iter().map(|a| a.weight * (x / a.level).min(1.0)),
            )),
            &MeasureKind::Beta { alpha, beta } => {
                // Ψ(x) = x ψ(x) + μ((0, x)).
                let v = x * beta_psi(alpha, beta, x)? + beta_reg(beta + 1.0, alpha - beta, x);
                Ok(v.clamp(0.0, 1.0))
            }
        }
    }

    /// `Φ(x) = sup_{y ∈ [0,1]} Ψ(y) - x y` for `x ≥ 0`.
    pub fn big_phi(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) || x.is_nan() {
            return Err(RiskError::Domain {
                name: "x",
                value: x,
                range: "[0, inf)",
            });
        }
        if x >= self.psi_at_zero() {
            return Ok(0.0);
        }
        match &self.kind {
            MeasureKind::Mixture(atoms) => {
                // Ψ is piecewise linear with kinks at the levels.
                let mut best = 0.0_f64;
                for a in atoms {
                    best = best.max(self.big_psi(a.level)? - x * a.level);
                }
                Ok(best)
            }
            MeasureKind::Beta { .. } => {
                // ψ is continuous and decreasing: locate ψ(y*) = x by bisection.
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.psi(mid)? >= x {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let cands = [lo, hi];
                let mut best = 0.0_f64;
                for y in cands {
                    best = best.max(self.big_psi(y)? - x * y);
                }
                Ok(best.max(1.0 - x))
            }
        }
    }

    /// Gaussian constant `γ(μ)`: the risk of a standard normal variable.
    pub fn gamma_gaussian(&self) -> Result<f64> {
        match &self.kind {
            MeasureKind::Mixture(atoms) => {
                Ok(compensated_sum(atoms.iter().map(|a| a.weight * tail_gamma(a.level))))
            }
            &MeasureKind::Beta { alpha, beta } => {
                self.check_estimable()?;
                // γ(μ) = ∫ γ(λ) μ(dλ) with γ(λ) = φ(q_λ) / λ.
                let c = alpha - beta;
                let lb = ln_beta(beta + 1.0, c);
                let f = |l: f64| {
                    if l <= 0.0 || l >= 1.0 {
                        return 0.0;
                    }
                    let dens = (beta * l.ln() + (c - 1.0) * (-l).ln_1p() - lb).exp();
                    dens * tail_gamma(l)
                };
                let left = beta.min(1.0) - 1e-9;
                let right = c.min(1.0) - 1e-9;
                integrate_singular(f, 0.0, 1.0, left.max(-0.999), right.max(-0.999), QUAD_REL_TOL, 1e-14)
            }
        }
    }
}

/// Gaussian Tail V@R constant `γ(λ) = φ(q_λ) / λ`.
pub fn tail_gamma(level: f64) -> f64 {
    if level >= 1.0 {
        return 0.0;
    }
    normal_pdf(normal_quantile(level)) / level
}

fn beta_psi(alpha: f64, beta: f64, x: f64) -> Result<f64> {
    let c = alpha - beta;
    if beta > 0.0 {
        return Ok(alpha / beta * beta_reg_upper(beta, c, x));
    }
    if x >= 1.0 {
        return Ok(0.0);
    }
    // ψ(x) = B(β+1, c)⁻¹ ∫_x^1 λ^{β-1} (1-λ)^{c-1} dλ, integrated in s = ln λ.
    let lb = ln_beta(beta + 1.0, c);
    let g = move |s: f64| {
        let l = s.exp();
        if l >= 1.0 {
            return 0.0;
        }
        (beta * s + (c - 1.0) * (-l).ln_1p() - lb).exp()
    };
    let lo = x.ln();
    let right = (c - 1.0).min(1.0);
    if right >= 0.0 {
        integrate(g, lo, 0.0, QUAD_REL_TOL * 1e-2, 1e-15)
    } else {
        integrate_singular(g, lo, 0.0, 0.0, right, QUAD_REL_TOL * 1e-2, 1e-15)
    }
}

impl fmt::Display for WeightingMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MeasureKind::Mixture(atoms) if atoms.len() == 1 => write!(f, "tail:{}", atoms[0].level),
            MeasureKind::Mixture(atoms) => {
                write!(f, "mix:")?;
                for (i, a) in atoms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}@{}", a.weight, a.level)?;
                }
                Ok(())
            }
            MeasureKind::Beta { alpha, beta } if *beta == 1.0 => write!(f, "alpha:{alpha}"),
            MeasureKind::Beta { alpha, beta } => write!(f, "beta:{alpha},{beta}"),
        }
    }
}

impl FromStr for WeightingMeasure {
    type Err = RiskError;

    /// Parses `tail:λ`, `alpha:α`, `beta:α,β` or `mix:w@λ,w@λ,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| RiskError::InvalidMeasure(format!("{msg} in '{s}'"));
        let num = |t: &str| -> Result<f64> {
            t.trim().parse::<f64>().map_err(|_| bad(&format!("bad number '{t}'")))
        };
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        match kind.trim() {
            "tail" => Self::tail(num(args)?),
            "alpha" => Self::alpha(num(args)?),
            "beta" => {
                let (a, b) = args.split_once(',').ok_or_else(|| bad("beta needs 'alpha,beta'"))?;
                Self::beta(num(a)?, num(b)?)
            }
            "mix" => {
                let atoms = args
                    .split(',')
                    .map(|part| {
                        let (w, l) = part.split_once('@').ok_or_else(|| bad("mix atom needs 'weight@level'"))?;
                        Ok(Atom {
                            level: num(l)?,
                            weight: num(w)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::mixture(atoms)
            }
            other => Err(bad(&format!("unknown measure kind '{other}'"))),
        }
    }
}
