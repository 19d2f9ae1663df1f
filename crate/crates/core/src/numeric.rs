//! Numerical helpers: compensated and pairwise summation, adaptive
//! Gauss–Kronrod quadrature, special functions and a small NNLS solver.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, RiskError};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Pairwise (tree) sum. The reduction order depends only on the length,
/// so results do not depend on how the inputs were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean and standard error of the mean of a sample (`n - 1` denominator).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let centered: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&centered) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    statrs::function::beta::beta_reg(a, b, x)
}

/// Upper tail `1 - I_x(a, b)` without cancellation.
pub fn beta_reg_upper(a: f64, b: f64, x: f64) -> f64 {
    beta_reg(b, a, 1.0 - x)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    statrs::function::beta::ln_beta(a, b)
}

/// `ln Γ(x)`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Binomial probability mass `P(Bin(n, p) = k)` computed in log space.
pub fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (nf, kf) = (n as f64, k as f64);
    let ln_c = ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0);
    (ln_c + kf * p.ln() + (nf - kf) * (-p).ln_1p()).exp()
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
///
/// Stops when the estimated absolute error is below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    const MAX_PIECES: usize = 20_000;
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&f, a, b);
    if !v.is_finite() {
        return Err(RiskError::Divergence(format!("non-finite integrand on [{a}, {b}]")));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value: v, err: e });
    let mut total = v;
    let mut total_err = e;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if heap.len() >= MAX_PIECES {
            return Err(RiskError::Divergence(format!(
                "quadrature on [{a}, {b}] stalled at error {total_err:e}"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(Piece { err: 0.0, ..worst });
            total_err = heap.iter().map(|p| p.err).sum();
            if total_err == 0.0 {
                break;
            }
            continue;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(RiskError::Divergence("non-finite integrand".into()));
        }
        heap.push(Piece { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, err: e2 });
        // Recompute from scratch to avoid drift in the running sums.
        total = compensated_sum(heap.iter().map(|p| p.value));
        total_err = heap.iter().map(|p| p.err).sum();
    }
    Ok(compensated_sum(heap.iter().map(|p| p.value)))
}

/// Quadrature for integrands that behave like `(x - a)^p` near `a` and
/// `(b - x)^q` near `b`, with `p, q > -1`.
///
/// Each half of the interval is mapped through a power substitution that
/// removes the algebraic singularity before adaptive integration.
pub fn integrate_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    left_exp: f64,
    right_exp: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if left_exp <= -1.0 || right_exp <= -1.0 {
        return Err(RiskError::Parameter("endpoint exponents must exceed -1".into()));
    }
    let power = |e: f64| -> i32 {
        if e >= 1.0 {
            1
        } else {
            (2.0 / (1.0 + e)).ceil().min(40.0) as i32
        }
    };
    let m = 0.5 * (a + b);
    let (kl, kr) = (power(left_exp), power(right_exp));
    let hl = m - a;
    let hr = b - m;
    let left = integrate(
        |u: f64| {
            if kl == 1 {
                return f(a + hl * u);
            }
            let x = a + hl * u.powi(kl);
            if x <= a {
                return 0.0;
            }
            f(x) * hl * kl as f64 * u.powi(kl - 1)
        },
        0.0,
        1.0,
        rel_tol,
        0.5 * abs_tol,
    )?;
    let right = integrate(
        |u: f64| {
            if kr == 1 {
                return f(b - hr * u);
            }
            let x = b - hr * u.powi(kr);
            if x >= b {
                return 0.0;
            }
            f(x) * hr * kr as f64 * u.powi(kr - 1)
        },
        0.0,
        1.0,
        rel_tol,
        0.5 * abs_tol,
    )?;
    Ok(left + right)
}

/// Non-negative least squares `min ||A x - b||` subject to `x >= 0`
/// (Lawson–Hanson active set). `a` is column-major: `a[j]` is column `j`.
pub fn nnls(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    use nalgebra::{DMatrix, DVector};
    let n = a.len();
    let m = b.len();
    for col in a {
        if col.len() != m {
            return Err(RiskError::Shape {
                context: "nnls column",
                expected: m,
                found: col.len(),
            });
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let am = DMatrix::from_fn(m, n, |i, j| a[j][i]);
    let bv = DVector::from_column_slice(b);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let scale = am.norm().max(1.0) * bv.norm().max(1.0);
    let tol = 1e-12 * scale;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(m, idx.len(), |i, k| am[(i, idx[k])]);
        let z = sub
            .clone()
            .svd(true, true)
            .solve(&bv, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = z[k];
        }
        full
    };

    for _outer in 0..(3 * n + 10) {
        let w = am.transpose() * (&bv - &am * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else {
            return Ok(x.iter().copied().collect());
        };
        passive[t] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut step = 1.0_f64;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        step = step.min(x[j] / denom);
                    } else {
                        step = 0.0;
                    }
                }
            }
            x = &x + (&z - &x) * step;
            for j in 0..n {
                if passive[j] && x[j] <= tol.min(1e-15) {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Err(RiskError::Divergence("nnls active set did not settle".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_smooth_and_singular() {
        let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12, 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        // ∫_0^1 x^{-0.9} dx = 10
        let s = integrate_singular(|x: f64| x.powf(-0.9), 0.0, 1.0, -0.9, 0.0, 1e-10, 0.0).unwrap();
        assert!((s - 10.0).abs() < 1e-8, "{s}");
        // ∫_0^1 (1-x)^{-0.5} dx = 2
        let r = integrate_singular(|x: f64| (1.0 - x).powf(-0.5), 0.0, 1.0, 0.0, -0.5, 1e-10, 0.0).unwrap();
        assert!((r - 2.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn pairwise_matches_compensated() {
        let v: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
        assert!((pairwise_sum(&v) - compensated_sum(v.iter().copied())).abs() < 1e-9);
    }

    #[test]
    fn nnls_small_cases() {
        // Unconstrained solution is feasible.
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let x = nnls(&a, &[2.0, 3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
        // Negative component is clamped.
        let x = nnls(&a, &[2.0, -3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && x[1] == 0.0);
        // Collinear columns.
        let a = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let x = nnls(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] + 2.0 * x[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let s: f64 = (0..=40).map(|k| binomial_pmf(40, k, 0.3)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
