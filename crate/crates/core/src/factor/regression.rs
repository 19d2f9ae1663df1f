//! Conditional expectation estimators `y ↦ E(X | Y = y)`.
//!
//! The kernel estimator is a local-linear fit with a Gaussian product kernel.
//! Small samples are evaluated directly; larger ones are linearly binned on a
//! grid and the kernel sums are computed by separable convolution, then the
//! fitted grid is interpolated multilinearly.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, RiskError};
use crate::numeric::compensated_sum;

/// Samples above this size use the binned kernel evaluation.
pub const DIRECT_LIMIT: usize = 2000;
/// Largest factor dimension handled by the kernel estimator under `Auto`.
pub const KERNEL_MAX_DIM: usize = 3;
/// Largest factor dimension accepted by any non-analytic estimator.
pub const MAX_DIM: usize = 5;

/// Factor observations: `T` rows of dimension `M`, aligned with the scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSample {
    dim: usize,
    data: Vec<f64>,
}

impl FactorSample {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(RiskError::Shape {
                context: "factor sample row length",
                expected: dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::InvalidDistribution("non-finite factor value".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or(RiskError::Empty("factor rows"))?;
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(RiskError::Shape {
                context: "factor row",
                expected: dim,
                found: r.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    /// One-dimensional sample.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    /// Selected factor columns.
    pub fn select(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() || cols.iter().any(|&c| c >= self.dim) {
            return Err(RiskError::Parameter(format!("bad factor column selection {cols:?}")));
        }
        let data = (0..self.len())
            .flat_map(|t| cols.iter().map(move |&c| (t, c)))
            .map(|(t, c)| self.row(t)[c])
            .collect();
        Self::new(cols.len(), data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
}

/// Closed-form conditional expectation supplied by the caller.
pub type AnalyticFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Choice of conditional expectation estimator.
#[derive(Clone)]
pub enum Regression {
    /// Kernel for up to three factors, nearest neighbours up to five.
    Auto,
    /// Local-linear Gaussian kernel; `None` selects the Silverman bandwidth.
    Kernel { bandwidth: Option<f64> },
    /// Average of the `k` nearest samples in standardized coordinates.
    KNearest { k: usize },
    /// Known conditional expectation.
    Analytic(AnalyticFn),
}

impl fmt::Debug for Regression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regression::Auto => write!(f, "Auto"),
            Regression::Kernel { bandwidth } => write!(f, "Kernel {{ bandwidth: {bandwidth:?} }}"),
            Regression::KNearest { k } => write!(f, "KNearest {{ k: {k} }}"),
            Regression::Analytic(_) => write!(f, "Analytic"),
        }
    }
}

impl FromStr for Regression {
    type Err = RiskError;

    /// `auto`, `kernel`, `kernel:<bw>` or `knn:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || RiskError::Parameter(format!("unknown regression '{s}'"));
        match s.split_once(':') {
            None if s == "auto" => Ok(Regression::Auto),
            None if s == "kernel" => Ok(Regression::Kernel { bandwidth: None }),
            Some(("kernel", bw)) => {
                let h: f64 = bw.parse().map_err(|_| bad())?;
                if !(h > 0.0 && h.is_finite()) {
                    return Err(RiskError::Parameter(format!("bandwidth {h} must be positive")));
                }
                Ok(Regression::Kernel { bandwidth: Some(h) })
            }
            Some(("knn", k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(RiskError::Parameter("knn needs k >= 1".into()));
                }
                Ok(Regression::KNearest { k })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone)]
struct Training {
    /// Active (non-constant) factor columns.
    active: Vec<usize>,
    /// Row-major samples restricted to the active columns.
    y: Vec<f64>,
    x: Vec<f64>,
    p: Vec<f64>,
}

impl Training {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&c| y[c]).collect()
    }

    fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.y[i * d..(i + 1) * d]
    }

    /// Nearest training sample in units of `scale`; ties go to the lowest index.
    fn nearest(&self, q: &[f64], scale: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..self.x.len() {
            let d2: f64 = self
                .sample(i)
                .iter()
                .zip(q)
                .zip(scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        self.x[best.1]
    }
}

#[derive(Clone)]
enum Fitted {
    Constant(f64),
    Analytic(AnalyticFn),
    Direct { train: Training, h: Vec<f64> },
    Binned { train: Training, h: Vec<f64>, grid: Grid },
    Knn { train: Training, k: usize, scale: Vec<f64> },
}

/// A fitted conditional expectation.
#[derive(Clone)]
pub struct FittedRegression {
    fitted: Fitted,
    dim: usize,
}

impl fmt::Debug for FittedRegression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FittedRegression({})", self.method())
    }
}

fn weighted_sd(values: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let mean = compensated_sum(values.clone().map(|(v, p)| v * p));
    compensated_sum(values.map(|(v, p)| p * (v - mean) * (v - mean))).max(0.0).sqrt()
}

/// Fits `E(X | Y)` from aligned samples `x[t]`, `y.row(t)` with weights `probs`.
pub fn fit(x: &[f64], y: &FactorSample, probs: &[f64], method: &Regression) -> Result<FittedRegression> {
    let n = y.len();
    if x.len() != n || probs.len() != n {
        return Err(RiskError::Shape {
            context: "regression sample",
            expected: n,
            found: if x.len() != n { x.len() } else { probs.len() },
        });
    }
    let dim = y.dim();
    if let Regression::Analytic(f) = method {
        return Ok(FittedRegression {
            fitted: Fitted::Analytic(f.clone()),
            dim,
        });
    }
    if dim > MAX_DIM {
        return Err(RiskError::Parameter(format!(
            "factor dimension {dim} exceeds {MAX_DIM}; supply an analytic conditional expectation"
        )));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Ok(FittedRegression {
            fitted: Fitted::Constant(x[0]),
            dim,
        });
    }
    let total = compensated_sum(probs.iter().copied());
    if !(total > 0.0) {
        return Err(RiskError::InvalidDistribution("regression weights sum to zero".into()));
    }
    let p: Vec<f64> = probs.iter().map(|q| q / total).collect();
    let sds: Vec<f64> = (0..dim)
        .map(|j| weighted_sd((0..n).map(|t| (y.row(t)[j], p[t]))))
        .collect();
    let active: Vec<usize> = (0..dim).filter(|&j| sds[j] > 0.0).collect();
    if active.is_empty() {
        // All factors constant: the conditional expectation is the mean.
        let mean = compensated_sum(x.iter().zip(&p).map(|(a, b)| a * b));
        return Ok(FittedRegression {
            fitted: Fitted::Constant(mean),
            dim,
        });
    }
    let train = Training {
        y: (0..n).flat_map(|t| active.iter().map(move |&c| (t, c))).map(|(t, c)| y.row(t)[c]).collect(),
        active: active.clone(),
        x: x.to_vec(),
        p: p.clone(),
    };
    let scale: Vec<f64> = active.iter().map(|&c| sds[c]).collect();
    let d = active.len();
    let resolved = match method {
        Regression::Auto if d <= KERNEL_MAX_DIM => Regression::Kernel { bandwidth: None },
        Regression::Auto => Regression::KNearest {
            k: ((n as f64).sqrt().round() as usize).max(1),
        },
        other => other.clone(),
    };
    let fitted = match resolved {
        Regression::Kernel { bandwidth } => {
            if d > KERNEL_MAX_DIM {
                return Err(RiskError::Parameter(format!(
                    "kernel regression supports at most {KERNEL_MAX_DIM} varying factors, got {d}"
                )));
            }
            let h: Vec<f64> = match bandwidth {
                Some(b) => vec![b; d],
                None => {
                    let n_eff = 1.0 / p.iter().map(|q| q * q).sum::<f64>();
                    let factor = (4.0 / ((d as f64 + 2.0) * n_eff)).powf(1.0 / (d as f64 + 4.0));
                    scale.iter().map(|s| s * factor).collect()
                }
            };
            if n <= DIRECT_LIMIT {
                Fitted::Direct { train, h }
            } else {
                let grid = Grid::build(&train, &h)?;
                Fitted::Binned { train, h, grid }
            }
        }
        Regression::KNearest { k } => {
            if k == 0 {
                return Err(RiskError::Parameter("knn needs k >= 1".into()));
            }
            Fitted::Knn {
                train,
                k: k.min(n),
                scale,
            }
        }
        Regression::Auto | Regression::Analytic(_) => unreachable!("resolved above"),
    };
    Ok(FittedRegression { fitted, dim })
}

impl FittedRegression {
    /// Short method label for reports.
    pub fn method(&self) -> String {
        match &self.fitted {
            Fitted::Constant(_) => "constant".into(),
            Fitted::Analytic(_) => "analytic".into(),
            Fitted::Direct { .. } | Fitted::Binned { .. } => "kernel".into(),
            Fitted::Knn { k, .. } => format!("knn:{k}"),
        }
    }

    /// Bandwidths per varying factor, for kernel fits.
    pub fn bandwidth(&self) -> Option<&[f64]> {
        match &self.fitted {
            Fitted::Direct { h, .. } | Fitted::Binned { h, .. } => Some(h),
            _ => None,
        }
    }

    /// Predicted `E(X | Y = y)`; defined for every `y`.
    pub fn predict(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.dim);
        match &self.fitted {
            Fitted::Constant(c) => *c,
            Fitted::Analytic(f) => f(y),
            Fitted::Direct { train, h } => {
                let q = train.project(y);
                local_linear_direct(train, h, &q).unwrap_or_else(|| train.nearest(&q, h))
            }
            Fitted::Binned { train, h, grid } => {
                let q = train.project(y);
                grid.interpolate(&q).unwrap_or_else(|| train.nearest(&q, h))
            }
            Fitted::Knn { train, k, scale } => knn_predict(train, *k, scale, &train.project(y)),
        }
    }

    /// Predictions at every row of `y`.
    pub fn predict_all(&self, y: &FactorSample) -> Result<Vec<f64>> {
        if y.dim() != self.dim {
            return Err(RiskError::Shape {
                context: "factor dimension",
                expected: self.dim,
                found: y.dim(),
            });
        }
        let rows: Vec<&[f64]> = y.rows().collect();
        Ok(rows.par_iter().map(|r| self.predict(r)).collect())
    }
}

/// Solves a small dense system in place by Gaussian elimination with
/// partial pivoting; `None` when a pivot falls below `tol`.
fn solve_small(a: &mut [f64], b: &mut [f64], n: usize, tol: f64) -> Option<()> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() <= tol {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col * n + k] * b[k];
        }
        b[col] = s / a[col * n + col];
    }
    Some(())
}

/// Local-linear estimate from kernel moments `A` (`(d+1)²`) and `b` (`d+1`),
/// falling back to the local-constant value when `A` is near singular.
fn local_linear_from_moments(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<f64> {
    let n = b.len();
    let s0 = a[0];
    if !(s0 > 1e-300) {
        return None;
    }
    let nw = b[0] / s0;
    if solve_small(&mut a, &mut b, n, 1e-6 * s0).is_some() && b[0].is_finite() {
        Some(b[0])
    } else {
        Some(nw)
    }
}

fn local_linear_direct(train: &Training, h: &[f64], q: &[f64]) -> Option<f64> {
    let d = train.dim();
    let m = d + 1;
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    let mut z = vec![0.0; m];
    z[0] = 1.0;
    for i in 0..train.x.len() {
        let s = train.sample(i);
        let mut e = 0.0;
        for k in 0..d {
            let u = (s[k] - q[k]) / h[k];
            z[k + 1] = u;
            e += u * u;
        }
        let w = train.p[i] * (-0.5 * e).exp();
        if w == 0.0 {
            continue;
        }
        for r in 0..m {
            b[r] += w * z[r] * train.x[i];
            for c in 0..m {
                a[r * m + c] += w * z[r] * z[c];
            }
        }
    }
    local_linear_from_moments(a, b)
}

fn knn_predict(train: &Training, k: usize, scale: &[f64], q: &[f64]) -> f64 {
    let mut dist: Vec<(f64, usize)> = (0..train.x.len())
        .map(|i| {
            let d2 = train
                .sample(i)
                .iter()
                .zip(q)
                .zip(scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum::<f64>();
            (d2, i)
        })
        .collect();
    let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, key);
        dist.truncate(k);
    }
    dist.sort_by(key);
    let wsum = compensated_sum(dist.iter().map(|&(_, i)| train.p[i]));
    if wsum > 0.0 {
        compensated_sum(dist.iter().map(|&(_, i)| train.p[i] * train.x[i])) / wsum
    } else {
        compensated_sum(dist.iter().map(|&(_, i)| train.x[i])) / dist.len() as f64
    }
}

/// Local-linear fit evaluated on a regular grid.
#[derive(Clone)]
struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    step: Vec<f64>,
    size: Vec<usize>,
    /// Fitted value per node, `None` where no sample is within reach.
    values: Vec<Option<f64>>,
}

const GRID_CAP: [usize; 4] = [0, 16_384, 512, 96];
const KERNEL_REACH: f64 = 6.0;

impl Grid {
    fn build(train: &Training, h: &[f64]) -> Result<Self> {
        let d = train.dim();
        let n = train.x.len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..n {
            for (k, v) in train.sample(i).iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        let size: Vec<usize> = (0..d)
            .map(|k| {
                let want = ((hi[k] - lo[k]) / (h[k] / 8.0)).ceil() as usize + 1;
                want.clamp(16, GRID_CAP[d])
            })
            .collect();
        let step: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (size[k] - 1) as f64).collect();
        let total: usize = size.iter().product();
        let strides = strides(&size);

        // Linear binning of mass and mass-weighted response.
        // Offsets from the node are kept so the moments use exact positions.
        let mut mass = vec![0.0; total];
        let mut resp = vec![0.0; total];
        let mut off = vec![vec![0.0; total]; d];
        let mut off_resp = vec![vec![0.0; total]; d];
        let mut off_two = vec![vec![vec![0.0; total]; d]; d];
        for i in 0..n {
            let s = train.sample(i);
            let mut base = vec![0usize; d];
            let mut frac = vec![0.0; d];
            let mut frac_node = vec![0.0; d];
            for k in 0..d {
                let pos = ((s[k] - lo[k]) / step[k]).clamp(0.0, (size[k] - 1) as f64);
                let j = (pos.floor() as usize).min(size[k] - 2);
                base[k] = j;
                frac[k] = pos - j as f64;
            }
            for corner in 0..(1usize << d) {
                let mut w = train.p[i];
                let mut idx = 0;
                for k in 0..d {
                    let up = (corner >> k) & 1 == 1;
                    w *= if up { frac[k] } else { 1.0 - frac[k] };
                    idx += (base[k] + up as usize) * strides[k];
                }
                mass[idx] += w;
                resp[idx] += w * train.x[i];
                for k in 0..d {
                    let up = (corner >> k) & 1 == 1;
                    frac_node[k] = s[k] - (lo[k] + (base[k] + up as usize) as f64 * step[k]);
                }
                for k in 0..d {
                    off[k][idx] += w * frac_node[k];
                    off_resp[k][idx] += w * frac_node[k] * train.x[i];
                    for l in k..d {
                        off_two[k][l][idx] += w * frac_node[k] * frac_node[l];
                    }
                }
            }
        }

        // Moments needed by the local-linear normal equations.
        let unit = |k: usize| {
            let mut e = vec![0u8; d];
            e[k] = 1;
            e
        };
        let conv = |src: &[f64], e: &[u8]| convolve_separable(src, &size, &strides, &step, h, e);
        let zero = vec![0u8; d];
        let add = |a: &mut Vec<f64>, b: Vec<f64>, scale: f64| a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        let s_zero = conv(&mass, &zero);
        let s_one: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                let mut m = conv(&mass, &unit(k));
                add(&mut m, conv(&off[k], &zero), 1.0 / h[k]);
                m
            })
            .collect();
        let mut s_two = vec![vec![Vec::new(); d]; d];
        for k in 0..d {
            for l in k..d {
                let mut e = vec![0u8; d];
                e[k] += 1;
                e[l] += 1;
                let mut m = conv(&mass, &e);
                add(&mut m, conv(&off[l], &unit(k)), 1.0 / h[l]);
                add(&mut m, conv(&off[k], &unit(l)), 1.0 / h[k]);
                add(&mut m, conv(&off_two[k][l], &zero), 1.0 / (h[k] * h[l]));
                s_two[l][k] = m.clone();
                s_two[k][l] = m;
            }
        }
        let t_zero = conv(&resp, &zero);
        let t_one: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                let mut m = conv(&resp, &unit(k));
                add(&mut m, conv(&off_resp[k], &zero), 1.0 / h[k]);
                m
            })
            .collect();

        let m = d + 1;
        let values = (0..total)
            .into_par_iter()
            .map(|node| {
                let mut a = vec![0.0; m * m];
                let mut b = vec![0.0; m];
                a[0] = s_zero[node];
                b[0] = t_zero[node];
                for k in 0..d {
                    a[k + 1] = s_one[k][node];
                    a[(k + 1) * m] = s_one[k][node];
                    b[k + 1] = t_one[k][node];
                    for l in 0..d {
                        a[(k + 1) * m + l + 1] = s_two[k][l][node];
                    }
                }
                local_linear_from_moments(a, b)
            })
            .collect();
        Ok(Self {
            lo,
            hi,
            step,
            size,
            values,
        })
    }

    fn interpolate(&self, q: &[f64]) -> Option<f64> {
        let d = q.len();
        let strides = strides(&self.size);
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            if !(q[k] >= self.lo[k] && q[k] <= self.hi[k]) {
                return None;
            }
            let pos = (q[k] - self.lo[k]) / self.step[k];
            let j = (pos.floor() as usize).min(self.size[k] - 2);
            base[k] = j;
            frac[k] = (pos - j as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + up as usize) * strides[k];
            }
            if w == 0.0 {
                continue;
            }
            acc += w * self.values[idx]?;
        }
        Some(acc)
    }
}

fn strides(size: &[usize]) -> Vec<usize> {
    let d = size.len();
    let mut s = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        s[k] = s[k + 1] * size[k + 1];
    }
    s
}

/// `out[j] = Σ_m src[j + m] K(u_m) u_m^{e_k}` applied along each axis `k`,
/// with `u_m = m δ_k / h_k` and `K` the standard Gaussian shape.
fn convolve_separable(
    src: &[f64],
    size: &[usize],
    strides: &[usize],
    step: &[f64],
    h: &[f64],
    e: &[u8],
) -> Vec<f64> {
    let mut cur = src.to_vec();
    for k in 0..size.len() {
        let reach = ((KERNEL_REACH * h[k] / step[k]).ceil() as usize).min(size[k] - 1);
        let kernel: Vec<f64> = (-(reach as i64)..=reach as i64)
            .map(|m| {
                let u = m as f64 * step[k] / h[k];
                (-0.5 * u * u).exp() * u.powi(e[k] as i32)
            })
            .collect();
        let mut next = vec![0.0; cur.len()];
        let len = size[k];
        let stride = strides[k];
        for start in line_starts(size, strides, k) {
            for j in 0..len {
                let lo = j.saturating_sub(reach);
                let hi = (j + reach).min(len - 1);
                let mut s = 0.0;
                for g in lo..=hi {
                    let v = cur[start + g * stride];
                    if v != 0.0 {
                        s += v * kernel[g + reach - j];
                    }
                }
                next[start + j * stride] = s;
            }
        }
        cur = next;
    }
    cur
}

/// Offsets of the first element of every 1-D line along axis `axis`.
fn line_starts(size: &[usize], strides: &[usize], axis: usize) -> Vec<usize> {
    let total: usize = size.iter().product();
    (0..total)
        .filter(|&flat| (flat / strides[axis]) % size[axis] == 0)
        .collect()
}
