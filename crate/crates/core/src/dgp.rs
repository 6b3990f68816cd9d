//! Synthetic data-generating processes.
//!
//! A [`DgpSpec`] fixes the covariate law, the conditional means `m0(z, x)` and
//! the conditional variances `v0(z, x)`. Potential outcomes are Gaussian
//! around the mean with independent errors across arms.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLaw {
    /// i.i.d. standard normal coordinates.
    #[default]
    StandardGaussian,
    /// i.i.d. uniform coordinates on (0, 1).
    UniformUnitInterval,
    /// i.i.d. coordinates with density `2x` on (0, 1).
    #[serde(rename = "density-2x-on-unit-interval")]
    Density2xOnUnitInterval,
}

impl CovariateLaw {
    fn coordinate_mean(self) -> f64 {
        match self {
            CovariateLaw::StandardGaussian => 0.0,
            CovariateLaw::UniformUnitInterval => 0.5,
            CovariateLaw::Density2xOnUnitInterval => 2.0 / 3.0,
        }
    }

    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            CovariateLaw::StandardGaussian => StandardNormal.sample(rng),
            CovariateLaw::UniformUnitInterval => rng.random::<f64>(),
            CovariateLaw::Density2xOnUnitInterval => rng.random::<f64>().sqrt(),
        }
    }
}

/// Conditional mean specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeanKind {
    /// `m0(0, x) = 1'x` and `m0(1, x) = 1'x + effect + slope'x`.
    Linear {
        #[serde(default)]
        effect: f64,
        #[serde(default)]
        slope: Vec<f64>,
    },
    /// Piecewise-constant means in the index `1'x`, with `breaks.len() + 1` cells.
    Table {
        breaks: Vec<f64>,
        m0: Vec<f64>,
        m1: Vec<f64>,
    },
}

impl Default for MeanKind {
    fn default() -> Self {
        MeanKind::Linear {
            effect: 0.0,
            slope: Vec::new(),
        }
    }
}

/// Conditional variance specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VarKind {
    #[default]
    Homoskedastic,
    /// `v0(0, x) = exp(u / (2 sqrt d))` and `v0(1, x) = 2 v0(0, x)` with `u = 1'x`
    /// clamped to `[-8 sqrt d, 8 sqrt d]`.
    Heteroskedastic,
    /// Piecewise-constant variances in the index `1'x`.
    Table {
        breaks: Vec<f64>,
        v0: Vec<f64>,
        v1: Vec<f64>,
    },
    /// Variance equal to the first coordinate in both arms (used with unit-interval laws).
    FirstCoordinate,
}

/// Clamp applied to the index before the heteroskedastic exponential, in units of `sqrt d`.
pub const HETERO_INDEX_CLAMP: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dim: usize,
    #[serde(default)]
    pub covariate_law: CovariateLaw,
    #[serde(default)]
    pub mean_kind: MeanKind,
    #[serde(default)]
    pub var_kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Estimand {
    #[default]
    Ate,
    Pl,
}

impl Estimand {
    pub fn parameter_dim(self, dim: usize) -> usize {
        match self {
            Estimand::Ate => 1,
            Estimand::Pl => dim + 1,
        }
    }
}

/// Covariates and both potential outcomes for `n` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub dim: usize,
    /// Row-major `n x dim` covariates.
    pub x: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl PotentialTable {
    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

fn cell_of(breaks: &[f64], u: f64) -> usize {
    breaks.partition_point(|b| *b <= u)
}

fn check_table(breaks: &[f64], a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != breaks.len() + 1 || b.len() != breaks.len() + 1 {
        return Err(Error::InvalidSpec(format!(
            "{what} table needs {} cell values per arm",
            breaks.len() + 1
        )));
    }
    if breaks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSpec(format!("{what} table breaks must increase")));
    }
    Ok(())
}

impl DgpSpec {
    /// The default simulation design: Gaussian covariates, `m0(z, x) = 1'x`.
    pub fn standard(dim: usize, heteroskedastic: bool) -> Self {
        Self {
            dim,
            covariate_law: CovariateLaw::StandardGaussian,
            mean_kind: MeanKind::default(),
            var_kind: if heteroskedastic {
                VarKind::Heteroskedastic
            } else {
                VarKind::Homoskedastic
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("dim must be at least 1".into()));
        }
        match &self.mean_kind {
            MeanKind::Linear { slope, .. } if !slope.is_empty() && slope.len() != self.dim => {
                return Err(Error::InvalidSpec(format!(
                    "effect slope has length {}, expected {}",
                    slope.len(),
                    self.dim
                )))
            }
            MeanKind::Table { breaks, m0, m1 } => check_table(breaks, m0, m1, "mean")?,
            _ => {}
        }
        match &self.var_kind {
            VarKind::Table { breaks, v0, v1 } => {
                check_table(breaks, v0, v1, "variance")?;
                if v0.iter().chain(v1).any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidSpec("table variances must be positive".into()));
                }
            }
            VarKind::FirstCoordinate if self.covariate_law == CovariateLaw::StandardGaussian => {
                return Err(Error::InvalidSpec(
                    "first-coordinate variance needs a unit-interval covariate law".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    fn index(x: &[f64]) -> f64 {
        x.iter().sum()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `m0(z, x)` without the dimension check.
    pub fn mean_unchecked(&self, z: u8, x: &[f64]) -> f64 {
        match &self.mean_kind {
            MeanKind::Linear { effect, slope } => {
                let base = Self::index(x);
                if z == 0 {
                    base
                } else {
                    let s: f64 = slope.iter().zip(x).map(|(b, xi)| b * xi).sum();
                    base + effect + s
                }
            }
            MeanKind::Table { breaks, m0, m1 } => {
                let c = cell_of(breaks, Self::index(x));
                if z == 0 {
                    m0[c]
                } else {
                    m1[c]
                }
            }
        }
    }

    /// `v0(z, x)` without the dimension check.
    pub fn var_unchecked(&self, z: u8, x: &[f64]) -> f64 {
        match &self.var_kind {
            VarKind::Homoskedastic => 1.0,
            VarKind::Heteroskedastic => {
                let rd = (self.dim as f64).sqrt();
                let u = Self::index(x).clamp(-HETERO_INDEX_CLAMP * rd, HETERO_INDEX_CLAMP * rd);
                let v = (u / (2.0 * rd)).exp();
                if z == 0 {
                    v
                } else {
                    2.0 * v
                }
            }
            VarKind::Table { breaks, v0, v1 } => {
                let c = cell_of(breaks, Self::index(x));
                if z == 0 {
                    v0[c]
                } else {
                    v1[c]
                }
            }
            VarKind::FirstCoordinate => x[0],
        }
    }

    pub fn mean_fn(&self, z: u8, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.mean_unchecked(z, x))
    }

    pub fn var_fn(&self, z: u8, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.var_unchecked(z, x))
    }

    /// Probability that the index `1'X` is below `b`, when it has a closed form.
    fn index_cdf(&self, b: f64) -> Result<f64> {
        match (self.covariate_law, self.dim) {
            (CovariateLaw::StandardGaussian, d) => {
                let n = Normal::new(0.0, (d as f64).sqrt()).expect("positive sd");
                Ok(n.cdf(b))
            }
            (CovariateLaw::UniformUnitInterval, 1) => Ok(b.clamp(0.0, 1.0)),
            (CovariateLaw::Density2xOnUnitInterval, 1) => Ok(b.clamp(0.0, 1.0).powi(2)),
            _ => Err(Error::InvalidSpec(
                "table means need a Gaussian law or dim = 1 for a closed-form truth".into(),
            )),
        }
    }

    pub fn true_theta(&self, estimand: Estimand) -> Result<Vec<f64>> {
        self.validate()?;
        match (&self.mean_kind, estimand) {
            (MeanKind::Linear { effect, slope }, Estimand::Ate) => {
                let mu = self.covariate_law.coordinate_mean();
                Ok(vec![effect + slope.iter().sum::<f64>() * mu])
            }
            (MeanKind::Linear { effect, slope }, Estimand::Pl) => {
                let mut th = vec![0.0; self.dim + 1];
                th[0] = *effect;
                for (t, s) in th[1..].iter_mut().zip(slope) {
                    *t = *s;
                }
                Ok(th)
            }
            (MeanKind::Table { breaks, m0, m1 }, Estimand::Ate) => {
                let mut prev = 0.0;
                let mut ate = 0.0;
                for c in 0..m0.len() {
                    let cdf = if c < breaks.len() {
                        self.index_cdf(breaks[c])?
                    } else {
                        1.0
                    };
                    ate += (cdf - prev) * (m1[c] - m0[c]);
                    prev = cdf;
                }
                Ok(vec![ate])
            }
            (MeanKind::Table { m0, m1, .. }, Estimand::Pl) => {
                let tau0 = m1[0] - m0[0];
                if m0.iter().zip(m1).any(|(a, b)| ((b - a) - tau0).abs() > 1e-12) {
                    return Err(Error::InvalidSpec(
                        "partially linear estimand needs an effect linear in x".into(),
                    ));
                }
                let mut th = vec![0.0; self.dim + 1];
                th[0] = tau0;
                Ok(th)
            }
        }
    }

    pub fn theta0_ate(&self) -> Result<f64> {
        Ok(self.true_theta(Estimand::Ate)?[0])
    }

    pub fn theta0_pl(&self) -> Result<Vec<f64>> {
        self.true_theta(Estimand::Pl)
    }

    /// Draws covariates only, row-major.
    pub fn sample_covariates<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n * self.dim)
            .map(|_| self.covariate_law.draw(rng))
            .collect()
    }

    /// Draws `n` units with both potential outcomes.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PotentialTable> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidSpec("batch size must be at least 1".into()));
        }
        let mut x = Vec::with_capacity(n * self.dim);
        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        for _ in 0..n {
            let start = x.len();
            for _ in 0..self.dim {
                x.push(self.covariate_law.draw(rng));
            }
            let row = &x[start..];
            let e0: f64 = StandardNormal.sample(rng);
            let e1: f64 = StandardNormal.sample(rng);
            y0.push(self.mean_unchecked(0, row) + self.var_unchecked(0, row).sqrt() * e0);
            y1.push(self.mean_unchecked(1, row) + self.var_unchecked(1, row).sqrt() * e1);
        }
        Ok(PotentialTable {
            dim: self.dim,
            x,
            y0,
            y1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn closed_forms() {
        let h = DgpSpec::standard(4, true);
        assert_eq!(h.var_fn(0, &[0.0; 4]).unwrap(), 1.0);
        assert_eq!(h.var_fn(1, &[0.0; 4]).unwrap(), 2.0);
        let s = DgpSpec::standard(10, false);
        assert_eq!(s.mean_fn(1, &[1.0; 10]).unwrap(), 10.0);
        assert_eq!(s.var_fn(0, &[3.0; 10]).unwrap(), 1.0);
        assert!(matches!(
            s.mean_fn(0, &[1.0; 3]),
            Err(Error::DimensionMismatch { expected: 10, got: 3 })
        ));
    }

    #[test]
    fn truths() {
        assert_eq!(DgpSpec::standard(1, true).theta0_ate().unwrap(), 0.0);
        assert_eq!(DgpSpec::standard(10, false).theta0_pl().unwrap(), vec![0.0; 11]);
        let mut shifted = DgpSpec::standard(3, false);
        shifted.mean_kind = MeanKind::Linear {
            effect: 3.0,
            slope: vec![],
        };
        assert_eq!(shifted.theta0_ate().unwrap(), 3.0);
        let mut nonlinear = DgpSpec::standard(1, false);
        nonlinear.mean_kind = MeanKind::Table {
            breaks: vec![0.0],
            m0: vec![0.0, 0.0],
            m1: vec![1.0, 2.0],
        };
        assert!((nonlinear.theta0_ate().unwrap() - 1.5).abs() < 1e-12);
        assert!(nonlinear.theta0_pl().is_err());
    }

    #[test]
    fn heteroskedastic_ratio_is_two() {
        let spec = DgpSpec::standard(1, true);
        let t = spec.sample_batch(1000, &mut stream(1, 0, Purpose::Other(0))).unwrap();
        for i in 0..t.len() {
            let x = t.row(i);
            assert_eq!(spec.var_unchecked(1, x) / spec.var_unchecked(0, x), 2.0);
        }
    }

    #[test]
    fn heteroskedastic_clamp_bounds_variance() {
        let spec = DgpSpec::standard(1, true);
        let hi = spec.var_unchecked(1, &[1e6]);
        let lo = spec.var_unchecked(0, &[-1e6]);
        assert!((hi - 2.0 * 4f64.exp()).abs() < 1e-12);
        assert!((lo - (-4f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = DgpSpec::standard(2, true);
        let a = spec.sample_batch(1, &mut stream(3, 1, Purpose::Outcomes(0))).unwrap();
        let b = spec.sample_batch(1, &mut stream(3, 1, Purpose::Outcomes(0))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn homoskedastic_residual_variance() {
        let spec = DgpSpec::standard(1, false);
        let n = 1_000_000;
        let t = spec.sample_batch(n, &mut stream(11, 0, Purpose::Other(1))).unwrap();
        let r: Vec<f64> = (0..n).map(|i| t.y0[i] - t.x[i]).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }
}
