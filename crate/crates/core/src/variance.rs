//! Asymptotic covariances, information functions and covariate samples.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dgp::{CovariateLaw, DgpSpec, Estimand};
use crate::linalg::{spd_inverse, symmetrize};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Scalarisation of an information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PsiKind {
    /// `-tr(M^-1)`.
    #[default]
    AOpt,
    /// `log det M`.
    DOpt,
}

/// Value of an information function; singular matrices map to `NegInfinity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PsiValue {
    Finite(f64),
    NegInfinity,
}

impl PsiValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, PsiValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            PsiValue::Finite(v) => Some(*v),
            PsiValue::NegInfinity => None,
        }
    }

    /// `self >= other + slack` in the extended order.
    pub fn at_least(&self, other: &PsiValue, slack: f64) -> bool {
        match (self, other) {
            (_, PsiValue::NegInfinity) => true,
            (PsiValue::NegInfinity, PsiValue::Finite(_)) => false,
            (PsiValue::Finite(a), PsiValue::Finite(b)) => *a >= b + slack,
        }
    }
}

const SINGULAR_RTOL: f64 = 1e-13;

fn eigen_sym(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
}

fn is_singular(ev: &[f64]) -> bool {
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ev.iter().any(|&l| !(l > SINGULAR_RTOL * max.max(f64::MIN_POSITIVE)))
}

pub fn psi_value(kind: PsiKind, m: &DMatrix<f64>) -> PsiValue {
    if m.iter().any(|v| !v.is_finite()) {
        return PsiValue::NegInfinity;
    }
    let ev: Vec<f64> = eigen_sym(m).eigenvalues.iter().copied().collect();
    if is_singular(&ev) {
        return PsiValue::NegInfinity;
    }
    PsiValue::Finite(match kind {
        PsiKind::AOpt => -ev.iter().map(|l| 1.0 / l).sum::<f64>(),
        PsiKind::DOpt => ev.iter().map(|l| l.ln()).sum(),
    })
}

/// Value and gradient (`M^-2` for A-optimality, `M^-1` for D-optimality).
pub fn psi_value_and_grad(kind: PsiKind, m: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let eig = eigen_sym(m);
    let ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if m.iter().any(|v| !v.is_finite()) || is_singular(&ev) {
        return Err(Error::Singular("information function gradient at a singular matrix".into()));
    }
    let q = &eig.eigenvectors;
    let (value, scale): (f64, Vec<f64>) = match kind {
        PsiKind::AOpt => (
            -ev.iter().map(|l| 1.0 / l).sum::<f64>(),
            ev.iter().map(|l| 1.0 / (l * l)).collect(),
        ),
        PsiKind::DOpt => (ev.iter().map(|l| l.ln()).sum(), ev.iter().map(|l| 1.0 / l).collect()),
    };
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(scale));
    let mut g = q * d * q.transpose();
    symmetrize(&mut g);
    Ok((value, g))
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = mf * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        nodes[i] = mid - half * z;
        nodes[m - 1 - i] = mid + half * z;
        weights[i] = half * w;
        weights[m - 1 - i] = half * w;
    }
    (nodes, weights)
}

/// Weighted covariate points approximating expectations under `P_0`, with
/// optional per-batch density ratios `dP_t / dP_0` at each point.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSample {
    pub dim: usize,
    /// Row-major `m x dim`.
    pub points: Vec<f64>,
    /// Nonnegative, summing to one.
    pub weights: Vec<f64>,
    pub ratios: Option<Vec<Vec<f64>>>,
}

/// Default quadrature size in one dimension.
pub const QUADRATURE_NODES: usize = 2048;
/// Default Monte Carlo size in more than one dimension.
pub const MONTE_CARLO_POINTS: usize = 100_000;

impl CovariateSample {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Gauss-Legendre rule in the probit scale for a standard normal covariate.
    pub fn gaussian_probit(m: usize) -> Self {
        let (u, w) = gauss_legendre(m, 0.0, 1.0);
        let n = Normal::new(0.0, 1.0).expect("standard normal");
        Self {
            dim: 1,
            points: u.iter().map(|&p| n.inverse_cdf(p)).collect(),
            weights: w,
            ratios: None,
        }
    }

    /// Gauss-Legendre rule on `(0, 1)` for a covariate with the given density.
    pub fn unit_interval(m: usize, density: impl Fn(f64) -> f64) -> Self {
        let (x, w) = gauss_legendre(m, 0.0, 1.0);
        let mut weights: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| wi * density(*xi)).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= s);
        Self {
            dim: 1,
            points: x,
            weights,
            ratios: None,
        }
    }

    /// Covariate-shift sample on `(0, 1)`: batch `t` has density `densities[t]`
    /// and `P_0` is their `kappa`-mixture.
    pub fn unit_interval_shift(m: usize, densities: &[&dyn Fn(f64) -> f64], kappa: &[f64]) -> Result<Self> {
        if densities.len() != kappa.len() || densities.is_empty() {
            return Err(Error::InvalidSpec("one density per batch weight is required".into()));
        }
        let ksum: f64 = kappa.iter().sum();
        let (x, w) = gauss_legendre(m, 0.0, 1.0);
        let mut weights = Vec::with_capacity(m);
        let mut ratios = vec![Vec::with_capacity(m); densities.len()];
        for (xi, wi) in x.iter().zip(&w) {
            let pt: Vec<f64> = densities.iter().map(|d| d(*xi)).collect();
            let p0: f64 = pt.iter().zip(kappa).map(|(p, k)| p * k).sum::<f64>() / ksum;
            weights.push(wi * p0);
            for (r, p) in ratios.iter_mut().zip(&pt) {
                r.push(if p0 > 0.0 { p / p0 } else { 0.0 });
            }
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= s);
        Ok(Self {
            dim: 1,
            points: x,
            weights,
            ratios: Some(ratios),
        })
    }

    pub fn monte_carlo(spec: &DgpSpec, m: usize, seed: u64) -> Self {
        let mut rng = stream(seed, 0, Purpose::Quadrature);
        let points = spec.sample_covariates(m, &mut rng);
        Self {
            dim: spec.dim,
            points,
            weights: vec![1.0 / m as f64; m],
            ratios: None,
        }
    }

    /// Quadrature in one dimension, Monte Carlo otherwise.
    pub fn for_spec(spec: &DgpSpec, seed: u64) -> Self {
        if spec.dim == 1 {
            match spec.covariate_law {
                CovariateLaw::StandardGaussian => Self::gaussian_probit(QUADRATURE_NODES),
                CovariateLaw::UniformUnitInterval => Self::unit_interval(QUADRATURE_NODES, |_| 1.0),
                CovariateLaw::Density2xOnUnitInterval => Self::unit_interval(QUADRATURE_NODES, |x| 2.0 * x),
            }
        } else {
            Self::monte_carlo(spec, MONTE_CARLO_POINTS, seed)
        }
    }

    /// Reproducible deterministic sample for a seeded `rand` generator, for tests.
    pub fn from_points(dim: usize, points: Vec<f64>) -> Self {
        let m = points.len() / dim;
        Self {
            dim,
            points,
            weights: vec![1.0 / m as f64; m],
            ratios: None,
        }
    }

    /// Weights for expectations under batch `t` (or `P_0` when `None`).
    pub fn batch_weights(&self, batch: Option<usize>) -> Result<Vec<f64>> {
        match (batch, &self.ratios) {
            (None, _) | (Some(_), None) => Ok(self.weights.clone()),
            (Some(t), Some(r)) => {
                let rt = r.get(t).ok_or_else(|| Error::InvalidSpec(format!("no density ratio for batch {t}")))?;
                Ok(self.weights.iter().zip(rt).map(|(w, r)| w * r).collect())
            }
        }
    }
}

fn guard_prob(e: f64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::DivisionGuard { value: e });
    }
    Ok(e)
}

/// AIPW integrand `-(v1 / e + v0 / (1 - e))` of the design objective.
pub fn aipw_integrand(e: f64, v0: f64, v1: f64) -> f64 {
    -(v1 / e + v0 / (1.0 - e))
}

/// Efficient partially-linear weight `e (1 - e) / (v0 e + v1 (1 - e))`.
pub fn epl_integrand(e: f64, v0: f64, v1: f64) -> f64 {
    e * (1.0 - e) / (v0 * e + v1 * (1.0 - e))
}

/// Derivative of [`epl_integrand`] in `e`.
pub fn epl_integrand_derivative(e: f64, v0: f64, v1: f64) -> f64 {
    let den = v0 * e + v1 * (1.0 - e);
    ((1.0 - 2.0 * e) * den - e * (1.0 - e) * (v0 - v1)) / (den * den)
}

/// `E[v1/e + v0/(1-e) + tau_sq]` from per-point values.
pub fn v0_aipw_values(e: &[f64], v0: &[f64], v1: &[f64], tau_sq: &[f64], weights: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..weights.len() {
        let ei = guard_prob(e[i])?;
        s += weights[i] * (v1[i] / ei + v0[i] / (1.0 - ei) + tau_sq[i]);
    }
    Ok(s)
}

/// Efficient partially-linear information `E[g(e) psi psi']` from per-point values.
pub fn epl_information_values(
    e: &[f64],
    v0: &[f64],
    v1: &[f64],
    psi: &[f64],
    p: usize,
    weights: &[f64],
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(p, p);
    for i in 0..weights.len() {
        let ei = e[i];
        if !(0.0..=1.0).contains(&ei) {
            return Err(Error::DivisionGuard { value: ei });
        }
        if !(v0[i] > 0.0 && v1[i] > 0.0) {
            return Err(Error::NonPositiveVariance { value: v0[i].min(v1[i]) });
        }
        let g = weights[i] * epl_integrand(ei, v0[i], v1[i]);
        let row = &psi[i * p..(i + 1) * p];
        for a in 0..p {
            for b in a..p {
                m[(a, b)] += g * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    Ok(m)
}

/// Basis `psi(x) = (1, x')'`.
pub fn linear_basis(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 1);
    out.push(1.0);
    out.extend_from_slice(x);
    out
}

/// Evaluates the pieces of a variance formula on a sample.
pub struct Integrands<'a> {
    pub e: &'a dyn Fn(&[f64]) -> f64,
    pub v: &'a dyn Fn(u8, &[f64]) -> f64,
    /// `(m(1, x) - m(0, x) - theta)^2`, only used for the ATE.
    pub tau_sq: &'a dyn Fn(&[f64]) -> f64,
}

fn tabulate(f: &Integrands<'_>, sample: &CovariateSample) -> [Vec<f64>; 4] {
    let m = sample.len();
    let (mut e, mut v0, mut v1, mut t) = (
        Vec::with_capacity(m),
        Vec::with_capacity(m),
        Vec::with_capacity(m),
        Vec::with_capacity(m),
    );
    for i in 0..m {
        let x = sample.point(i);
        e.push((f.e)(x));
        v0.push((f.v)(0, x));
        v1.push((f.v)(1, x));
        t.push((f.tau_sq)(x));
    }
    [e, v0, v1, t]
}

fn basis_rows(sample: &CovariateSample) -> Vec<f64> {
    (0..sample.len()).flat_map(|i| linear_basis(sample.point(i))).collect()
}

/// Pooled AIPW asymptotic variance.
pub fn v0_aipw(f: &Integrands<'_>, sample: &CovariateSample) -> Result<f64> {
    let [e, v0, v1, t] = tabulate(f, sample);
    v0_aipw_values(&e, &v0, &v1, &t, &sample.weights)
}

/// Pooled efficient partially-linear asymptotic covariance with `psi = (1, x)`.
pub fn v0_epl(f: &Integrands<'_>, sample: &CovariateSample) -> Result<DMatrix<f64>> {
    let [e, v0, v1, _] = tabulate(f, sample);
    let p = sample.dim + 1;
    let info = epl_information_values(&e, &v0, &v1, &basis_rows(sample), p, &sample.weights)?;
    spd_inverse(&info).map_err(|_| Error::Singular("partially linear information matrix".into()))
}

/// Asymptotic covariance of the single-batch estimator of batch `batch`
/// (expectations under `P_t` when the sample carries density ratios).
pub fn per_batch_variance(
    estimand: Estimand,
    f: &Integrands<'_>,
    sample: &CovariateSample,
    batch: Option<usize>,
) -> Result<DMatrix<f64>> {
    let [e, v0, v1, t] = tabulate(f, sample);
    let w = sample.batch_weights(batch)?;
    match estimand {
        Estimand::Ate => Ok(DMatrix::from_element(1, 1, v0_aipw_values(&e, &v0, &v1, &t, &w)?)),
        Estimand::Pl => {
            let p = sample.dim + 1;
            let info = epl_information_values(&e, &v0, &v1, &basis_rows(sample), p, &w)?;
            spd_inverse(&info).map_err(|_| Error::Singular("partially linear information matrix".into()))
        }
    }
}

/// Pooled covariance for either estimand.
pub fn pooled_variance(estimand: Estimand, f: &Integrands<'_>, sample: &CovariateSample) -> Result<DMatrix<f64>> {
    per_batch_variance(estimand, f, sample, None)
}

/// Mixture propensity under covariate shift, `sum kappa_t e_t(x) r_t(x)`, at
/// each sample point.
pub fn mixture_with_shift(e_list: &[&dyn Fn(&[f64]) -> f64], kappa: &[f64], sample: &CovariateSample) -> Result<Vec<f64>> {
    if e_list.len() != kappa.len() {
        return Err(Error::DimensionMismatch {
            expected: e_list.len(),
            got: kappa.len(),
        });
    }
    let ksum: f64 = kappa.iter().sum();
    Ok((0..sample.len())
        .map(|i| {
            let x = sample.point(i);
            e_list
                .iter()
                .zip(kappa)
                .enumerate()
                .map(|(t, (e, k))| {
                    let r = sample.ratios.as_ref().map_or(1.0, |r| r[t][i]);
                    k / ksum * e(x) * r
                })
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlaResult {
    pub matrix: DMatrix<f64>,
    /// True when some per-batch covariance needed a ridge to be inverted.
    pub ridge_applied: bool,
}

/// `(sum kappa_t V_t^-1)^-1`.
pub fn vla(per_batch: &[DMatrix<f64>], kappa: &[f64]) -> Result<VlaResult> {
    if per_batch.is_empty() || per_batch.len() != kappa.len() {
        return Err(Error::DimensionMismatch {
            expected: per_batch.len(),
            got: kappa.len(),
        });
    }
    let p = per_batch[0].nrows();
    let ksum: f64 = kappa.iter().sum();
    let mut acc = DMatrix::zeros(p, p);
    let mut ridge_applied = false;
    for (v, k) in per_batch.iter().zip(kappa) {
        let inv = match spd_inverse(v) {
            Ok(i) => i,
            Err(_) => {
                ridge_applied = true;
                spd_inverse(&(v + DMatrix::identity(p, p) * 1e-8))?
            }
        };
        acc += inv * (k / ksum);
    }
    Ok(VlaResult {
        matrix: spd_inverse(&acc)?,
        ridge_applied,
    })
}

/// Pooled and aggregated AIPW variances for a covariate-shift configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftComparison {
    pub v0_pooled: f64,
    pub v_la: f64,
    pub per_batch: Vec<f64>,
}

/// AIPW variances when batch `t` has covariate density `densities[t]` on (0, 1)
/// and treatment propensity `e_list[t]`.
pub fn aipw_shift_comparison(
    densities: &[&dyn Fn(f64) -> f64],
    kappa: &[f64],
    e_list: &[&dyn Fn(&[f64]) -> f64],
    v: &dyn Fn(u8, &[f64]) -> f64,
    tau_sq: &dyn Fn(&[f64]) -> f64,
    nodes: usize,
) -> Result<ShiftComparison> {
    let sample = CovariateSample::unit_interval_shift(nodes, densities, kappa)?;
    let e0 = mixture_with_shift(e_list, kappa, &sample)?;
    let zero = |_: &[f64]| 0.0;
    let [_, v0, v1, t] = tabulate(&Integrands { e: &zero, v, tau_sq }, &sample);
    let pooled = v0_aipw_values(&e0, &v0, &v1, &t, &sample.weights)?;
    let mut per_batch = Vec::with_capacity(kappa.len());
    for (t, e) in e_list.iter().enumerate() {
        let vt = per_batch_variance(Estimand::Ate, &Integrands { e: *e, v, tau_sq }, &sample, Some(t))?;
        per_batch.push(vt[(0, 0)]);
    }
    let mats: Vec<DMatrix<f64>> = per_batch.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect();
    let la = vla(&mats, kappa)?;
    Ok(ShiftComparison {
        v0_pooled: pooled,
        v_la: la.matrix[(0, 0)],
        per_batch,
    })
}

/// Two batches with covariates `Unif(0,1)` and density `2x`, `v(z, x) = x`,
/// constant propensity 1/2 and equal batch sizes.
pub fn covariate_shift_counterexample() -> Result<ShiftComparison> {
    let uniform = |_: f64| 1.0;
    let linear = |x: f64| 2.0 * x;
    let half = |_: &[f64]| 0.5;
    aipw_shift_comparison(
        &[&uniform, &linear],
        &[0.5, 0.5],
        &[&half, &half],
        &|_, x| x[0],
        &|_| 0.0,
        64,
    )
}

/// Per-cell moments of a binned covariate: cell probabilities, mean effects and
/// outcome variances `Var(Y(z) | S = s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMoments {
    pub prob: Vec<f64>,
    pub tau: Vec<f64>,
    pub var0: Vec<f64>,
    pub var1: Vec<f64>,
}

impl CellMoments {
    pub fn compute(
        cuts: &[f64],
        mean: &dyn Fn(u8, &[f64]) -> f64,
        var: &dyn Fn(u8, &[f64]) -> f64,
        sample: &CovariateSample,
    ) -> Self {
        let nc = cuts.len() + 1;
        let mut prob = vec![0.0; nc];
        let mut m = [vec![0.0; nc], vec![0.0; nc]];
        let mut m2 = [vec![0.0; nc], vec![0.0; nc]];
        for i in 0..sample.len() {
            let x = sample.point(i);
            let s = crate::propensity::bin_of(cuts, crate::propensity::index(x));
            let w = sample.weights[i];
            prob[s] += w;
            for z in 0..2u8 {
                let mu = mean(z, x);
                m[z as usize][s] += w * mu;
                m2[z as usize][s] += w * (var(z, x) + mu * mu);
            }
        }
        let mut tau = vec![0.0; nc];
        let mut var0 = vec![0.0; nc];
        let mut var1 = vec![0.0; nc];
        for s in 0..nc {
            if prob[s] > 0.0 {
                let a0 = m[0][s] / prob[s];
                let a1 = m[1][s] / prob[s];
                tau[s] = a1 - a0;
                var0[s] = m2[0][s] / prob[s] - a0 * a0;
                var1[s] = m2[1][s] / prob[s] - a1 * a1;
            }
        }
        Self { prob, tau, var0, var1 }
    }

    /// Asymptotic variance of the binned AIPW estimator when the design
    /// propensity equals `e_cell[s]` on cell `s`.
    pub fn binned_aipw_variance(&self, e_cell: &[f64]) -> Result<f64> {
        let theta: f64 = self.prob.iter().zip(&self.tau).map(|(p, t)| p * t).sum();
        let mut v = 0.0;
        for s in 0..self.prob.len() {
            if self.prob[s] == 0.0 {
                continue;
            }
            let e = guard_prob(e_cell[s])?;
            v += self.prob[s] * (self.var1[s] / e + self.var0[s] / (1.0 - e) + (self.tau[s] - theta).powi(2));
        }
        Ok(v)
    }
}

/// Deterministic random SPD matrices for property checks.
pub fn random_spd(p: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut m = &a * a.transpose() + DMatrix::identity(p, p) * 0.1;
    symmetrize(&mut m);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(e: f64, v0: f64, v1: f64) -> f64 {
        let s = CovariateSample::gaussian_probit(64);
        let ef = move |_: &[f64]| e;
        let vf = move |z: u8, _: &[f64]| if z == 0 { v0 } else { v1 };
        v0_aipw(&Integrands { e: &ef, v: &vf, tau_sq: &|_| 0.0 }, &s).unwrap()
    }

    #[test]
    fn aipw_constants() {
        assert!((consts(0.5, 1.0, 1.0) - 4.0).abs() < 1e-12);
        assert!((consts(0.2, 1.0, 1.0) - 6.25).abs() < 1e-12);
    }

    #[test]
    fn epl_scalar_constants() {
        let info = epl_information_values(&[0.5], &[1.0], &[1.0], &[1.0], 1, &[1.0]).unwrap();
        assert!((1.0 / info[(0, 0)] - 4.0).abs() < 1e-12);
        let info = epl_information_values(&[0.5], &[1.0], &[2.0], &[1.0], 1, &[1.0]).unwrap();
        assert!((1.0 / info[(0, 0)] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_integrates_moments() {
        let s = CovariateSample::gaussian_probit(QUADRATURE_NODES);
        let m2: f64 = (0..s.len()).map(|i| s.weights[i] * s.points[i].powi(2)).sum();
        let m4: f64 = (0..s.len()).map(|i| s.weights[i] * s.points[i].powi(4)).sum();
        assert!((m2 - 1.0).abs() < 1e-6, "{m2}");
        assert!((m4 - 3.0).abs() < 1e-4, "{m4}");
        let (x, w) = gauss_legendre(5, 0.0, 1.0);
        let i: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(9)).sum();
        assert!((i - 0.1).abs() < 1e-14);
    }

    #[test]
    fn psi_examples() {
        let (v, g) = psi_value_and_grad(PsiKind::AOpt, &DMatrix::identity(2, 2)).unwrap();
        assert!((v + 2.0).abs() < 1e-14);
        assert!((g - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        let (v, g) = psi_value_and_grad(PsiKind::DOpt, &m).unwrap();
        assert!((v - 6f64.ln()).abs() < 1e-14);
        assert!((g[(0, 0)] - 0.5).abs() < 1e-14 && (g[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(psi_value(PsiKind::AOpt, &sing), PsiValue::NegInfinity);
        assert_eq!(psi_value(PsiKind::DOpt, &sing), PsiValue::NegInfinity);
        assert!(psi_value_and_grad(PsiKind::DOpt, &sing).is_err());
    }

    #[test]
    fn vla_reductions() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let one = vla(std::slice::from_ref(&v), &[1.0]).unwrap();
        assert!((one.matrix - &v).abs().max() < 1e-12);
        let two = vla(&[v.clone(), v.clone()], &[0.3, 0.7]).unwrap();
        assert!((two.matrix - &v).abs().max() < 1e-12);
        assert!(!two.ridge_applied);
    }

    #[test]
    fn counterexample_values() {
        let c = covariate_shift_counterexample().unwrap();
        assert!((c.v0_pooled - 7.0 / 3.0).abs() < 1e-10, "{}", c.v0_pooled);
        assert!((c.v_la - 16.0 / 7.0).abs() < 1e-10, "{}", c.v_la);
        assert!((c.per_batch[0] - 2.0).abs() < 1e-10);
        assert!((c.per_batch[1] - 8.0 / 3.0).abs() < 1e-10);
    }
}
