//! Nonparametric regression smoothers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A fitted regression function. Immutable once fitted.
pub trait Regressor: Send + Sync + std::fmt::Debug {
    fn predict(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherKind {
    LocalLinear,
    Knn,
    RidgeSpline,
}

/// Smoother choice plus optional tuning overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub kind: SmootherKind,
    /// Multiplies the rule-of-thumb bandwidth of the local-linear smoother.
    #[serde(default = "one")]
    pub bandwidth_scale: f64,
    /// Neighbour count override for k-NN.
    #[serde(default)]
    pub k: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl Smoother {
    pub fn new(kind: SmootherKind) -> Self {
        Self {
            kind,
            bandwidth_scale: 1.0,
            k: None,
        }
    }

    /// Local-linear in one or two dimensions, additive ridge splines beyond.
    pub fn default_for_dim(dim: usize) -> Self {
        if dim <= 2 {
            Self::new(SmootherKind::LocalLinear)
        } else {
            Self::new(SmootherKind::RidgeSpline)
        }
    }

    /// Fits on row-major `x` (`y.len()` rows of width `dim`).
    pub fn fit(&self, x: &[f64], dim: usize, y: &[f64]) -> Result<Box<dyn Regressor>> {
        let n = y.len();
        if n == 0 || x.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: x.len(),
            });
        }
        if !(self.bandwidth_scale > 0.0) {
            return Err(Error::Config("bandwidth_scale must be positive".into()));
        }
        Ok(match self.kind {
            SmootherKind::LocalLinear => Box::new(LocalLinear::fit(x, dim, y, self.bandwidth_scale)),
            SmootherKind::Knn => Box::new(Knn::fit(x, dim, y, self.k)),
            SmootherKind::RidgeSpline => Box::new(RidgeSpline::fit(x, dim, y)?),
        })
    }
}

fn column_sd(x: &[f64], dim: usize, j: usize) -> f64 {
    let n = x.len() / dim;
    let mean = (0..n).map(|i| x[i * dim + j]).sum::<f64>() / n as f64;
    let ss = (0..n).map(|i| (x[i * dim + j] - mean).powi(2)).sum::<f64>();
    if n > 1 {
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    }
}

/// Local-linear regression with a Gaussian product kernel and bandwidth
/// `1.06 sd n^(-1/5)` per coordinate. Falls back to the local-constant fit
/// when the local design is degenerate.
#[derive(Debug, Clone)]
pub struct LocalLinear {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    /// `None` for coordinates without spread; they are ignored.
    bandwidth: Vec<Option<f64>>,
}

impl LocalLinear {
    pub fn fit(x: &[f64], dim: usize, y: &[f64], scale: f64) -> Self {
        let n = y.len();
        let factor = scale * 1.06 * (n as f64).powf(-0.2);
        let bandwidth = (0..dim)
            .map(|j| {
                let sd = column_sd(x, dim, j);
                (sd > 0.0).then_some(factor * sd)
            })
            .collect();
        Self {
            dim,
            x: x.to_vec(),
            y: y.to_vec(),
            bandwidth,
        }
    }

    pub fn bandwidth(&self) -> &[Option<f64>] {
        &self.bandwidth
    }
}

impl Regressor for LocalLinear {
    fn predict(&self, x0: &[f64]) -> f64 {
        let n = self.y.len();
        let active: Vec<(usize, f64)> = self
            .bandwidth
            .iter()
            .enumerate()
            .filter_map(|(j, h)| h.map(|h| (j, h)))
            .collect();
        let p = active.len() + 1;
        let mut logw = Vec::with_capacity(n);
        for i in 0..n {
            let row = &self.x[i * self.dim..(i + 1) * self.dim];
            let mut s = 0.0;
            for &(j, h) in &active {
                let u = (row[j] - x0[j]) / h;
                s -= 0.5 * u * u;
            }
            logw.push(s);
        }
        let shift = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwy = DVector::<f64>::zeros(p);
        let mut sw = 0.0;
        let mut sw2 = 0.0;
        let mut swy = 0.0;
        let mut design = vec![0.0; p];
        design[0] = 1.0;
        for i in 0..n {
            let w = (logw[i] - shift).exp();
            if w == 0.0 {
                continue;
            }
            sw += w;
            sw2 += w * w;
            swy += w * self.y[i];
            let row = &self.x[i * self.dim..(i + 1) * self.dim];
            for (c, &(j, h)) in active.iter().enumerate() {
                design[c + 1] = (row[j] - x0[j]) / h;
            }
            for a in 0..p {
                xtwy[a] += w * design[a] * self.y[i];
                for b in 0..=a {
                    xtwx[(a, b)] += w * design[a] * design[b];
                }
            }
        }
        let local_constant = swy / sw;
        let ess = sw * sw / sw2;
        if ess < (p + 1) as f64 {
            return local_constant;
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let xtwx = xtwx / sw;
        let xtwy = xtwy / sw;
        match xtwx.clone().cholesky() {
            Some(ch) => {
                let l = ch.l();
                let diag_min = (0..p).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
                let diag_max = (0..p).map(|i| l[(i, i)]).fold(0.0, f64::max);
                if diag_min <= 1e-6 * diag_max {
                    return local_constant;
                }
                let beta = ch.solve(&xtwy);
                if beta[0].is_finite() {
                    beta[0]
                } else {
                    local_constant
                }
            }
            None => local_constant,
        }
    }
}

/// k-nearest-neighbour average in standardised coordinates with
/// `k = ceil(n^(4/5))` by default.
#[derive(Debug, Clone)]
pub struct Knn {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    inv_scale: Vec<f64>,
    k: usize,
}

impl Knn {
    pub fn fit(x: &[f64], dim: usize, y: &[f64], k: Option<usize>) -> Self {
        let n = y.len();
        let k = k.unwrap_or_else(|| (n as f64).powf(0.8).ceil() as usize).clamp(1, n);
        let inv_scale = (0..dim)
            .map(|j| {
                let sd = column_sd(x, dim, j);
                if sd > 0.0 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            dim,
            x: x.to_vec(),
            y: y.to_vec(),
            inv_scale,
            k,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl Regressor for Knn {
    fn predict(&self, x0: &[f64]) -> f64 {
        let n = self.y.len();
        let mut d: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let row = &self.x[i * self.dim..(i + 1) * self.dim];
                let s: f64 = row
                    .iter()
                    .zip(x0)
                    .zip(&self.inv_scale)
                    .map(|((a, b), s)| ((a - b) * s).powi(2))
                    .sum();
                (s, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < n {
            d.select_nth_unstable_by(self.k - 1, cmp);
        }
        d[..self.k].iter().map(|(_, i)| self.y[*i]).sum::<f64>() / self.k as f64
    }
}

const SPLINE_KNOT_QUANTILES: [f64; 5] = [0.05, 0.275, 0.5, 0.725, 0.95];

/// Additive restricted cubic splines (linear beyond the boundary knots) with
/// a ridge penalty chosen by generalised cross-validation.
#[derive(Debug, Clone)]
pub struct RidgeSpline {
    dim: usize,
    knots: Vec<Vec<f64>>,
    col_mean: Vec<f64>,
    col_scale: Vec<f64>,
    beta: Vec<f64>,
    intercept: f64,
    lambda: f64,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn rcs_terms(u: f64, knots: &[f64], out: &mut Vec<f64>) {
    out.push(u);
    let m = knots.len();
    if m < 3 {
        return;
    }
    let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let (tk, tk1) = (knots[m - 1], knots[m - 2]);
    let norm = (tk - knots[0]).powi(2);
    for &kj in &knots[..m - 2] {
        let term = cube(u - kj) - cube(u - tk1) * (tk - kj) / (tk - tk1) + cube(u - tk) * (tk1 - kj) / (tk - tk1);
        out.push(term / norm);
    }
}

impl RidgeSpline {
    pub fn fit(x: &[f64], dim: usize, y: &[f64]) -> Result<Self> {
        let n = y.len();
        let mut knots = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut col: Vec<f64> = (0..n).map(|i| x[i * dim + j]).collect();
            col.sort_by(f64::total_cmp);
            let mut k: Vec<f64> = SPLINE_KNOT_QUANTILES.iter().map(|q| quantile_sorted(&col, *q)).collect();
            k.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
            if col[0] == col[n - 1] {
                k.clear();
            }
            knots.push(k);
        }
        let mut raw = Vec::new();
        let mut row = Vec::new();
        for i in 0..n {
            row.clear();
            Self::expand(&x[i * dim..(i + 1) * dim], &knots, &mut row);
            raw.extend_from_slice(&row);
        }
        let p = row.len().max(Self::width(&knots));
        let mut col_mean = vec![0.0; p];
        let mut col_scale = vec![1.0; p];
        for c in 0..p {
            let mean = (0..n).map(|i| raw[i * p + c]).sum::<f64>() / n as f64;
            let sd = ((0..n).map(|i| (raw[i * p + c] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            col_mean[c] = mean;
            col_scale[c] = if sd > 1e-12 { sd } else { 0.0 };
        }
        let ybar = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
        let mut a = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for c in 0..p {
                if col_scale[c] > 0.0 {
                    a[(i, c)] = (raw[i * p + c] - col_mean[c]) / col_scale[c];
                }
            }
        }
        if p == 0 || col_scale.iter().all(|s| *s == 0.0) {
            return Ok(Self {
                dim,
                knots,
                col_mean,
                col_scale,
                beta: vec![0.0; p],
                intercept: ybar,
                lambda: f64::INFINITY,
            });
        }
        let svd = a.svd(true, true);
        let u = svd.u.as_ref().ok_or_else(|| Error::Singular("spline SVD failed".into()))?;
        let vt = svd.v_t.as_ref().ok_or_else(|| Error::Singular("spline SVD failed".into()))?;
        let s = &svd.singular_values;
        let c = u.transpose() * &yc;
        let total = yc.norm_squared();
        let explained = c.norm_squared();
        let mut best = (f64::INFINITY, 1.0);
        for step in 0..=48 {
            let lambda = 10f64.powf(-8.0 + 0.25 * step as f64);
            let mut rss = total - explained;
            let mut df = 1.0;
            for r in 0..s.len() {
                let f = s[r] * s[r] / (s[r] * s[r] + lambda);
                rss += ((1.0 - f) * c[r]).powi(2);
                df += f;
            }
            let denom = n as f64 - df;
            if denom <= 0.0 {
                continue;
            }
            let gcv = n as f64 * rss.max(0.0) / (denom * denom);
            if gcv < best.0 {
                best = (gcv, lambda);
            }
        }
        let lambda = best.1;
        let mut coef = DVector::<f64>::zeros(s.len());
        for r in 0..s.len() {
            coef[r] = s[r] * c[r] / (s[r] * s[r] + lambda);
        }
        let beta = vt.transpose() * coef;
        Ok(Self {
            dim,
            knots,
            col_mean,
            col_scale,
            beta: beta.iter().copied().collect(),
            intercept: ybar,
            lambda,
        })
    }

    fn width(knots: &[Vec<f64>]) -> usize {
        knots.iter().map(|k| 1 + k.len().saturating_sub(2)).sum()
    }

    fn expand(x: &[f64], knots: &[Vec<f64>], out: &mut Vec<f64>) {
        for (xj, kj) in x.iter().zip(knots) {
            rcs_terms(*xj, kj, out);
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Regressor for RidgeSpline {
    fn predict(&self, x0: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.beta.len());
        Self::expand(&x0[..self.dim], &self.knots, &mut row);
        let mut out = self.intercept;
        for c in 0..self.beta.len() {
            if self.col_scale[c] > 0.0 {
                out += self.beta[c] * (row[c] - self.col_mean[c]) / self.col_scale[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn local_linear_reproduces_lines() {
        let x = grid(200);
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let f = Smoother::new(SmootherKind::LocalLinear).fit(&x, 1, &y).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (f.predict(&[*a]) - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_covariate_predicts_mean() {
        let x = vec![1.5; 20];
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        for kind in [SmootherKind::LocalLinear, SmootherKind::Knn, SmootherKind::RidgeSpline] {
            let f = Smoother {
                kind,
                bandwidth_scale: 1.0,
                k: Some(20),
            }
            .fit(&x, 1, &y)
            .unwrap();
            assert!((f.predict(&[1.5]) - 9.5).abs() < 1e-9, "{kind:?}");
        }
    }

    #[test]
    fn ridge_spline_fits_additive_lines() {
        let n = 300;
        let x: Vec<f64> = (0..n * 3).map(|i| ((i * 7919) % 1000) as f64 / 250.0 - 2.0).collect();
        let y: Vec<f64> = (0..n).map(|i| x[3 * i] + x[3 * i + 1] + x[3 * i + 2]).collect();
        let f = RidgeSpline::fit(&x, 3, &y).unwrap();
        let err = (0..n).map(|i| (f.predict(&x[3 * i..3 * i + 3]) - y[i]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn knn_default_neighbour_count() {
        let x = grid(100);
        let f = Knn::fit(&x, 1, &x, None);
        assert_eq!(f.k(), 40);
    }
}
