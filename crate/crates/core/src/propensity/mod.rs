//! Propensity functions, their shape-constrained families and feasible sets.

mod feasible;
pub mod projection;

pub use feasible::{feasible_set_projection, FeasibleSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Logistic function.
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Sum of coordinates, the one-dimensional index used by binned and hat families.
pub fn index(x: &[f64]) -> f64 {
    x.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInterval {
    pub m_low: f64,
    pub m_high: f64,
}

impl BudgetInterval {
    pub fn new(m_low: f64, m_high: f64) -> Result<Self> {
        if !(0.0 <= m_low && m_low <= m_high && m_high <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "budget interval [{m_low}, {m_high}] must satisfy 0 <= low <= high <= 1"
            )));
        }
        Ok(Self { m_low, m_high })
    }

    pub fn equality(m: f64) -> Result<Self> {
        Self::new(m, m)
    }

    pub fn unconstrained() -> Self {
        Self {
            m_low: 0.0,
            m_high: 1.0,
        }
    }

    pub fn is_equality(&self) -> bool {
        self.m_low == self.m_high
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.m_low + self.m_high)
    }
}

/// Positive batch weights normalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidSpec("mixture needs at least one batch".into()));
        }
        if raw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidSpec("mixture weights must be positive".into()));
        }
        let s: f64 = raw.iter().sum();
        Ok(Self(raw.iter().map(|w| w / s).collect()))
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Self::new(&sizes.iter().map(|&n| n as f64).collect::<Vec<_>>())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Instantiated function family with any data-dependent parameters fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    Constant,
    Monotone,
    Lipschitz {
        l: f64,
    },
    /// Convex combinations (with total weight at most one) of hat functions of
    /// the index `1'x` centred at `knots`.
    ParametricSimplex {
        knots: Vec<f64>,
    },
    /// Convex combinations (with total weight at most one) of
    /// `expit(theta' (1, x))` over a finite list of atoms `theta`.
    ExpitHull {
        atoms: Vec<Vec<f64>>,
    },
    /// Piecewise constant in the index `1'x` with interior cut points `cuts`.
    Binned {
        cuts: Vec<f64>,
    },
}

/// Family selection as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilySpec {
    Constant,
    Monotone,
    Lipschitz {
        #[serde(default = "default_lipschitz")]
        l: f64,
    },
    ParametricSimplex {
        knots: Vec<f64>,
    },
    ExpitHull {
        #[serde(default = "default_atom_grid")]
        grid: Vec<f64>,
        #[serde(default = "default_max_nonzero")]
        max_nonzero: usize,
    },
    Binned {
        #[serde(default = "default_bins")]
        bins: usize,
    },
}

fn default_lipschitz() -> f64 {
    1.0
}

fn default_atom_grid() -> Vec<f64> {
    vec![-2.0, -1.0, 0.0, 1.0, 2.0]
}

fn default_max_nonzero() -> usize {
    2
}

fn default_bins() -> usize {
    4
}

impl FamilySpec {
    /// The family used for the flexible design: Lipschitz(1) in one dimension,
    /// the expit hull otherwise.
    pub fn flexible_default(dim: usize) -> Self {
        if dim == 1 {
            FamilySpec::Lipschitz { l: 1.0 }
        } else {
            FamilySpec::ExpitHull {
                grid: default_atom_grid(),
                max_nonzero: default_max_nonzero(),
            }
        }
    }

    /// Fixes data-dependent parameters. Binned families need `index_sample`
    /// (values of `1'x`) to place their cuts at sample quantiles.
    pub fn instantiate(&self, dim: usize, index_sample: Option<&[f64]>) -> Result<Family> {
        Ok(match self {
            FamilySpec::Constant => Family::Constant,
            FamilySpec::Monotone => Family::Monotone,
            FamilySpec::Lipschitz { l } => {
                if !(*l >= 0.0) {
                    return Err(Error::InvalidSpec("Lipschitz constant must be nonnegative".into()));
                }
                Family::Lipschitz { l: *l }
            }
            FamilySpec::ParametricSimplex { knots } => {
                if knots.is_empty() || knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSpec("hat knots must be nonempty and increasing".into()));
                }
                Family::ParametricSimplex {
                    knots: knots.clone(),
                }
            }
            FamilySpec::ExpitHull { grid, max_nonzero } => Family::ExpitHull {
                atoms: expit_hull_atoms(dim + 1, grid, *max_nonzero),
            },
            FamilySpec::Binned { bins } => {
                if *bins < 1 {
                    return Err(Error::InvalidSpec("need at least one bin".into()));
                }
                let sample = index_sample.ok_or_else(|| {
                    Error::InvalidSpec("binned family needs a covariate sample for its cuts".into())
                })?;
                Family::Binned {
                    cuts: quantile_cuts(sample, *bins),
                }
            }
        })
    }
}

/// All vectors of length `p` with entries from `grid` and at most `max_nonzero`
/// nonzero coordinates.
pub fn expit_hull_atoms(p: usize, grid: &[f64], max_nonzero: usize) -> Vec<Vec<f64>> {
    let nonzero: Vec<f64> = grid.iter().copied().filter(|g| *g != 0.0).collect();
    let mut atoms = Vec::new();
    fn rec(
        start: usize,
        left: usize,
        p: usize,
        cur: &mut Vec<f64>,
        nonzero: &[f64],
        atoms: &mut Vec<Vec<f64>>,
    ) {
        atoms.push(cur.clone());
        if left == 0 {
            return;
        }
        for j in start..p {
            for &v in nonzero {
                cur[j] = v;
                rec(j + 1, left - 1, p, cur, nonzero, atoms);
                cur[j] = 0.0;
            }
        }
    }
    let mut cur = vec![0.0; p];
    rec(0, max_nonzero, p, &mut cur, &nonzero, &mut atoms);
    atoms
}

/// Sample quantiles (linear interpolation between order statistics) at
/// probabilities `j / bins`, `j = 1..bins`.
pub fn quantile_cuts(sample: &[f64], bins: usize) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    (1..bins)
        .map(|j| {
            let p = j as f64 / bins as f64;
            if n == 0 {
                return 0.0;
            }
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        })
        .collect()
}

/// Population quantile cuts of the index `1'X` for Gaussian covariates.
pub fn gaussian_index_cuts(dim: usize, bins: usize) -> Vec<f64> {
    let n = Normal::new(0.0, (dim as f64).sqrt()).expect("positive sd");
    (1..bins)
        .map(|j| n.inverse_cdf(j as f64 / bins as f64))
        .collect()
}

pub fn bin_of(cuts: &[f64], u: f64) -> usize {
    cuts.partition_point(|c| *c <= u)
}

/// Hat-function basis on `knots`, flat beyond the end knots.
pub fn hat_basis(knots: &[f64], u: f64) -> Vec<f64> {
    let p = knots.len();
    let mut out = vec![0.0; p];
    if p == 1 || u <= knots[0] {
        out[0] = 1.0;
        return out;
    }
    if u >= knots[p - 1] {
        out[p - 1] = 1.0;
        return out;
    }
    let j = knots.partition_point(|k| *k <= u) - 1;
    let t = (u - knots[j]) / (knots[j + 1] - knots[j]);
    out[j] = 1.0 - t;
    out[j + 1] = t;
    out
}

/// Family-specific data needed to evaluate a propensity anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Shape {
    Constant {
        value: f64,
    },
    Monotone {
        knots_x: Vec<f64>,
        knots_y: Vec<f64>,
    },
    Lipschitz {
        l: f64,
        knots_x: Vec<f64>,
        knots_y: Vec<f64>,
    },
    ParametricSimplex {
        knots: Vec<f64>,
        weights: Vec<f64>,
    },
    ExpitHull {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Binned {
        cuts: Vec<f64>,
        values: Vec<f64>,
    },
}

/// A propensity score `e(x) = P(Z = 1 | X = x)` from one of the families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFn {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub clip_gamma: f64,
}

impl PropensityFn {
    pub fn constant(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidSpec(format!("constant propensity {value} outside [0,1]")));
        }
        Ok(Self {
            shape: Shape::Constant { value },
            clip_gamma: 0.0,
        })
    }

    pub fn with_clip(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&gamma) {
            return Err(Error::InvalidSpec("clip_gamma must lie in [0, 0.5)".into()));
        }
        self.clip_gamma = gamma;
        Ok(self)
    }

    pub fn family_name(&self) -> &'static str {
        match self.shape {
            Shape::Constant { .. } => "constant",
            Shape::Monotone { .. } => "monotone",
            Shape::Lipschitz { .. } => "lipschitz",
            Shape::ParametricSimplex { .. } => "parametric-simplex",
            Shape::ExpitHull { .. } => "expit-hull",
            Shape::Binned { .. } => "binned",
        }
    }

    /// Covariate dimension required by the function, if it is fixed.
    pub fn required_dim(&self) -> Option<usize> {
        match &self.shape {
            Shape::Monotone { .. } | Shape::Lipschitz { .. } => Some(1),
            Shape::ExpitHull { atoms, .. } => atoms.first().map(|a| a.len() - 1),
            _ => None,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if let Some(d) = self.required_dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        Ok(self.evaluate_unchecked(x))
    }

    pub fn evaluate_unchecked(&self, x: &[f64]) -> f64 {
        let raw = match &self.shape {
            Shape::Constant { value } => *value,
            Shape::Monotone { knots_x, knots_y } => interpolate_flat(knots_x, knots_y, x[0]),
            Shape::Lipschitz { l, knots_x, knots_y } => {
                let mut best = f64::INFINITY;
                for (kx, ky) in knots_x.iter().zip(knots_y) {
                    best = best.min(ky + l * (x[0] - kx).abs());
                }
                best.clamp(0.0, 1.0)
            }
            Shape::ParametricSimplex { knots, weights } => hat_basis(knots, index(x))
                .iter()
                .zip(weights)
                .map(|(b, w)| b * w)
                .sum(),
            Shape::ExpitHull { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .map(|(a, w)| w * expit(a[0] + a[1..].iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>()))
                .sum(),
            Shape::Binned { cuts, values } => values[bin_of(cuts, index(x))],
        };
        raw.clamp(self.clip_gamma, 1.0 - self.clip_gamma)
    }

    /// Builds a family member matching `values` at `points` (row-major,
    /// `values.len()` rows). Coefficient families are built with
    /// [`PropensityFn::from_coefficients`].
    pub fn from_finite_values(family: &Family, points: &[f64], values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 || points.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: points.len(),
            });
        }
        let set = FeasibleSet::new(family, points, points.len() / n, BudgetInterval::unconstrained())?;
        let decision = set.decision_from_values(values)?;
        set.to_propensity(&decision)
    }

    pub fn from_coefficients(family: &Family, weights: &[f64]) -> Result<Self> {
        let (ok, shape) = match family {
            Family::ParametricSimplex { knots } => (
                weights.len() == knots.len(),
                Shape::ParametricSimplex {
                    knots: knots.clone(),
                    weights: weights.to_vec(),
                },
            ),
            Family::ExpitHull { atoms } => (
                weights.len() == atoms.len(),
                Shape::ExpitHull {
                    atoms: atoms.clone(),
                    weights: weights.to_vec(),
                },
            ),
            _ => {
                return Err(Error::InvalidSpec(
                    "coefficients only describe parametric families".into(),
                ))
            }
        };
        if !ok {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| *w < -1e-8) || weights.iter().sum::<f64>() > 1.0 + 1e-8 {
            return Err(Error::NotInFamily("weights must be nonnegative with total at most one".into()));
        }
        Ok(Self {
            shape,
            clip_gamma: 0.0,
        })
    }
}

fn interpolate_flat(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|k| *k <= x) - 1;
    let t = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + t * (ys[j + 1] - ys[j])
}

/// Weighted mixture `sum w_t e_t(x) / sum w_t`.
pub fn mixture(e_list: &[PropensityFn], w: &MixtureWeights, x: &[f64]) -> Result<f64> {
    if e_list.is_empty() {
        return Err(Error::InvalidSpec("mixture of an empty list".into()));
    }
    if e_list.len() != w.as_slice().len() {
        return Err(Error::DimensionMismatch {
            expected: e_list.len(),
            got: w.as_slice().len(),
        });
    }
    let mut s = 0.0;
    for (e, wt) in e_list.iter().zip(w.as_slice()) {
        s += wt * e.evaluate(x)?;
    }
    Ok(s)
}

/// `Z_i = 1` iff `U_i <= e_i`.
pub fn assign_treatments(values: &[f64], uniforms: &[f64]) -> Result<Vec<u8>> {
    if values.len() != uniforms.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: uniforms.len(),
        });
    }
    Ok(values
        .iter()
        .zip(uniforms)
        .map(|(e, u)| u8::from(*u <= *e))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_counts() {
        assert_eq!(expit_hull_atoms(11, &default_atom_grid(), 2).len(), 925);
        assert_eq!(expit_hull_atoms(2, &default_atom_grid(), 2).len(), 25);
    }

    #[test]
    fn basic_evaluations() {
        let c = PropensityFn::constant(0.2).unwrap();
        assert_eq!(c.evaluate(&[3.0, 1.0]).unwrap(), 0.2);
        let m = PropensityFn {
            shape: Shape::Monotone {
                knots_x: vec![0.0, 1.0],
                knots_y: vec![0.1, 0.5],
            },
            clip_gamma: 0.0,
        };
        let v = m.evaluate(&[0.5]).unwrap();
        assert!((0.1..=0.5).contains(&v));
        assert!(m.evaluate(&[0.5, 0.5]).is_err());
        let h = PropensityFn::from_coefficients(
            &Family::ExpitHull {
                atoms: vec![vec![0.0, 0.0]],
            },
            &[1.0],
        )
        .unwrap();
        assert_eq!(h.evaluate(&[7.0]).unwrap(), 0.5);
    }

    #[test]
    fn mixtures() {
        let a = PropensityFn::constant(0.2).unwrap();
        let b = PropensityFn::constant(0.4).unwrap();
        let w = MixtureWeights::new(&[1.0, 1.0]).unwrap();
        assert!((mixture(&[a.clone(), b], &w, &[0.0]).unwrap() - 0.3).abs() < 1e-15);
        let one = MixtureWeights::new(&[5.0]).unwrap();
        assert_eq!(mixture(&[a], &one, &[0.0]).unwrap(), 0.2);
        assert!(mixture(&[], &one, &[0.0]).is_err());
    }

    #[test]
    fn mixture_with_linear_second_batch() {
        let e1 = PropensityFn::constant(0.2).unwrap();
        let e2 = PropensityFn::from_finite_values(&Family::Monotone, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let w = MixtureWeights::from_sizes(&[1000, 1000]).unwrap();
        for x in [0.0, 0.25, 0.6, 1.0] {
            let m = mixture(&[e1.clone(), e2.clone()], &w, &[x]).unwrap();
            assert!((m - (0.1 + x / 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn assignment_extremes() {
        let u = [0.0, 0.3, 0.999];
        assert_eq!(assign_treatments(&[0.0; 3], &[0.1, 0.3, 0.999]).unwrap(), vec![0, 0, 0]);
        assert_eq!(assign_treatments(&[1.0; 3], &u).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn quantile_cuts_match_linear_interpolation() {
        let s: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert_eq!(quantile_cuts(&s, 4), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn hat_basis_is_partition_of_unity() {
        let k = [-1.0, 0.0, 2.0];
        for u in [-3.0, -0.5, 0.0, 1.3, 5.0] {
            assert!((hat_basis(&k, u).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
