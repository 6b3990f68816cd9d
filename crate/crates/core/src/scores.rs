//! Linear scores `s(w; theta) = s_a(w) theta + s_b(w)` for the ATE (AIPW) and
//! the partially linear model (efficient weighted least squares).

use nalgebra::{DMatrix, DVector};

use crate::linalg::condition_number;
use crate::{Error, Result};

/// Variance floor applied to plugged-in conditional variances.
pub const VARIANCE_FLOOR: f64 = 1e-3;
/// Condition number above which the score average is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub z: u8,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParts {
    pub s_a: DMatrix<f64>,
    pub s_b: DVector<f64>,
}

impl ScoreParts {
    /// `s_a theta + s_b`.
    pub fn evaluate(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.s_a * theta + &self.s_b
    }
}

/// Clips a propensity to `[gamma, 1 - gamma]` and rejects values that still
/// leave no room for division.
pub fn clip_propensity(e: f64, gamma: f64) -> Result<f64> {
    let c = e.clamp(gamma, 1.0 - gamma);
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::DivisionGuard { value: e });
    }
    Ok(c)
}

/// The AIPW `s_b` term; `s_a` is identically `-1`.
pub fn aipw_sb(obs: &Observation<'_>, m0: f64, m1: f64, e: f64, gamma: f64) -> Result<f64> {
    let e = clip_propensity(e, gamma)?;
    Ok(if obs.z == 1 {
        m1 - m0 + (obs.y - m1) / e
    } else {
        m1 - m0 - (obs.y - m0) / (1.0 - e)
    })
}

pub fn aipw_parts(obs: &Observation<'_>, m0: f64, m1: f64, e: f64, gamma: f64) -> Result<ScoreParts> {
    Ok(ScoreParts {
        s_a: DMatrix::from_element(1, 1, -1.0),
        s_b: DVector::from_element(1, aipw_sb(obs, m0, m1, e, gamma)?),
    })
}

/// Weight `1 / (v0 e + v1 (1 - e))` with floored variances.
pub fn epl_weight(v0: f64, v1: f64, e: f64) -> Result<f64> {
    if !(v0 > 0.0 && v1 > 0.0) {
        return Err(Error::NonPositiveVariance { value: v0.min(v1) });
    }
    let v0 = v0.max(VARIANCE_FLOOR);
    let v1 = v1.max(VARIANCE_FLOOR);
    Ok(1.0 / (v0 * e + v1 * (1.0 - e)))
}

/// Adds the EPL score parts of one observation into running sums.
#[allow(clippy::too_many_arguments)]
pub fn epl_accumulate(
    sum_a: &mut DMatrix<f64>,
    sum_b: &mut DVector<f64>,
    obs: &Observation<'_>,
    m0: f64,
    v0: f64,
    v1: f64,
    e: f64,
    psi: &[f64],
) -> Result<()> {
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::DivisionGuard { value: e });
    }
    let w = epl_weight(v0, v1, e)?;
    let z = obs.z as f64;
    let resid = z - e;
    let a = w * z * resid;
    let b = w * resid * (obs.y - m0);
    let p = psi.len();
    for i in 0..p {
        sum_b[i] += b * psi[i];
        if a != 0.0 {
            for j in 0..p {
                sum_a[(i, j)] -= a * psi[i] * psi[j];
            }
        }
    }
    Ok(())
}

pub fn epl_parts(obs: &Observation<'_>, m0: f64, v0: f64, v1: f64, e: f64, psi: &[f64]) -> Result<ScoreParts> {
    let p = psi.len();
    let mut s_a = DMatrix::zeros(p, p);
    let mut s_b = DVector::zeros(p);
    epl_accumulate(&mut s_a, &mut s_b, obs, m0, v0, v1, e, psi)?;
    Ok(ScoreParts { s_a, s_b })
}

/// `theta = -sum_sa^-1 sum_sb` with a conditioning check.
pub fn solve_linear_score(sum_sa: &DMatrix<f64>, sum_sb: &DVector<f64>) -> Result<DVector<f64>> {
    let condition = condition_number(sum_sa);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::EstimationFailure {
            condition,
            context: "score average is singular or ill-conditioned".into(),
        });
    }
    let sol = sum_sa
        .clone()
        .lu()
        .solve(sum_sb)
        .ok_or_else(|| Error::EstimationFailure {
            condition,
            context: "LU solve failed".into(),
        })?;
    Ok(-sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aipw_examples() {
        let x = [0.3];
        let obs = Observation { x: &x, z: 1, y: 1.7 };
        assert!((aipw_sb(&obs, 0.2, 1.7, 0.3, 0.01).unwrap() - 1.5).abs() < 1e-15);
        let obs = Observation { x: &x, z: 1, y: 2.0 };
        assert_eq!(aipw_sb(&obs, 0.0, 0.0, 0.5, 0.0).unwrap(), 4.0);
        assert!(aipw_sb(&obs, 0.0, 0.0, 1.0, 0.0).is_err());
        assert_eq!(aipw_parts(&obs, 0.0, 0.0, 0.5, 0.0).unwrap().s_a[(0, 0)], -1.0);
    }

    #[test]
    fn epl_examples() {
        let x = [0.5];
        let psi = [1.0, 0.5];
        let zero = epl_parts(&Observation { x: &x, z: 0, y: 1.0 }, 0.0, 1.0, 1.0, 0.5, &psi).unwrap();
        assert_eq!(zero.s_a, DMatrix::zeros(2, 2));
        let one = epl_parts(&Observation { x: &x, z: 1, y: 1.0 }, 0.0, 1.0, 1.0, 0.5, &psi).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]) * -0.5;
        assert!((one.s_a - expect).abs().max() < 1e-15);
        assert!(epl_parts(&Observation { x: &x, z: 1, y: 1.0 }, 0.0, 0.0, 1.0, 0.5, &psi).is_err());
    }

    #[test]
    fn solver_examples() {
        let t = solve_linear_score(&DMatrix::from_element(1, 1, -1.0), &DVector::from_element(1, 0.7)).unwrap();
        assert!((t[0] - 0.7).abs() < 1e-15);
        let t = solve_linear_score(&-DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 2.0]);
        let err = solve_linear_score(&DMatrix::zeros(2, 2), &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::EstimationFailure { .. }));
    }
}
