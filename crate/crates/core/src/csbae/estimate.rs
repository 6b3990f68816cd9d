//! Pooled, linearly aggregated and binned estimators with sandwich errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ExperimentRecord;
use crate::dgp::Estimand;
use crate::linalg::{condition_number, spd_inverse, symmetrize};
use crate::nuisance::NuisanceSet;
use crate::propensity::{bin_of, index, quantile_cuts};
use crate::scores::{aipw_sb, clip_propensity, epl_weight, solve_linear_score, Observation};
use crate::variance::linear_basis;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    Pooled,
    LinearAggregate,
    BinnedPooled,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    /// Condition number of each score average that was inverted.
    pub condition_numbers: Vec<f64>,
    /// Observations per fold.
    pub fold_counts: Vec<usize>,
    /// Fallbacks that were triggered.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: EstimateMethod,
    pub theta_hat: Vec<f64>,
    pub sandwich_se: Vec<f64>,
    /// Estimated asymptotic covariance (of `sqrt(N) (theta_hat - theta)`), row-major.
    pub covariance: Vec<f64>,
    pub n: usize,
    pub diagnostics: EstimateDiagnostics,
}

impl EstimateReport {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.theta_hat.len();
        DMatrix::from_row_slice(p, p, &self.covariance)
    }
}

/// Per-unit score in the factored form `s_a = -a psi psi'`, `s_b = b psi`.
struct UnitScore {
    a: f64,
    b: f64,
    psi: Vec<f64>,
}

struct Fit {
    theta: DVector<f64>,
    covariance: DMatrix<f64>,
    condition: f64,
}

fn fit_scores(units: &[UnitScore]) -> Result<Fit> {
    let n = units.len();
    if n == 0 {
        return Err(Error::InvalidSpec("no observations to score".into()));
    }
    let p = units[0].psi.len();
    let mut sa = DMatrix::<f64>::zeros(p, p);
    let mut sb = DVector::<f64>::zeros(p);
    for u in units {
        for i in 0..p {
            sb[i] += u.b * u.psi[i];
            for j in 0..p {
                sa[(i, j)] -= u.a * u.psi[i] * u.psi[j];
            }
        }
    }
    sa /= n as f64;
    sb /= n as f64;
    let condition = condition_number(&sa);
    let theta = solve_linear_score(&sa, &sb)?;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for u in units {
        let fitted: f64 = u.psi.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        let s = u.b - u.a * fitted;
        for i in 0..p {
            for j in 0..p {
                meat[(i, j)] += s * s * u.psi[i] * u.psi[j];
            }
        }
    }
    meat /= n as f64;
    let inv = sa.clone().try_inverse().ok_or_else(|| Error::EstimationFailure {
        condition,
        context: "score average is not invertible".into(),
    })?;
    let mut covariance = &inv * meat * inv.transpose();
    symmetrize(&mut covariance);
    Ok(Fit {
        theta,
        covariance,
        condition,
    })
}

fn score_unit(
    estimand: Estimand,
    x: &[f64],
    z: u8,
    y: f64,
    m: [f64; 2],
    v: [f64; 2],
    e: f64,
    gamma: f64,
) -> Result<UnitScore> {
    let obs = Observation { x, z, y };
    Ok(match estimand {
        Estimand::Ate => UnitScore {
            a: 1.0,
            b: aipw_sb(&obs, m[0], m[1], e, gamma)?,
            psi: vec![1.0],
        },
        Estimand::Pl => {
            let e = clip_propensity(e, gamma)?;
            let w = epl_weight(v[0], v[1], e)?;
            let resid = z as f64 - e;
            UnitScore {
                a: w * z as f64 * resid,
                b: w * resid * (y - m[0]),
                psi: linear_basis(x),
            }
        }
    })
}

fn report(method: EstimateMethod, fit: Fit, n: usize, mut diagnostics: EstimateDiagnostics) -> Result<EstimateReport> {
    let p = fit.theta.len();
    diagnostics.condition_numbers.push(fit.condition);
    let se: Vec<f64> = (0..p).map(|i| (fit.covariance[(i, i)] / n as f64).sqrt()).collect();
    if fit.theta.iter().chain(se.iter()).any(|v| !v.is_finite()) {
        return Err(Error::EstimationFailure {
            condition: fit.condition,
            context: "non-finite estimate or standard error".into(),
        });
    }
    let mut covariance = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            covariance.push(fit.covariance[(i, j)]);
        }
    }
    Ok(EstimateReport {
        method,
        theta_hat: fit.theta.iter().copied().collect(),
        sandwich_se: se,
        covariance,
        n,
        diagnostics,
    })
}

fn require_covariates(record: &ExperimentRecord) -> Result<()> {
    if record.has_covariates() {
        Ok(())
    } else {
        Err(Error::Config("record has no covariates; restore them first".into()))
    }
}

fn score_batches(
    record: &ExperimentRecord,
    batches: &[usize],
    estimand: Estimand,
    nuisances: &NuisanceSet,
) -> Result<(Vec<UnitScore>, Vec<usize>)> {
    let mut units = Vec::new();
    let mut counts = vec![0usize; record.k.max(1)];
    for &t in batches {
        let b = &record.batches[t];
        for i in 0..b.len() {
            let k = b.folds[i];
            let f = nuisances.fold(k);
            let x = b.row(i);
            let unit = score_unit(
                estimand,
                x,
                b.z[i],
                b.y[i],
                [f.mean(0, x), f.mean(1, x)],
                [f.variance(0, x), f.variance(1, x)],
                f.propensity(x),
                nuisances.gamma,
            )
            .map_err(|e| e.at_stage(t + 1, k + 1))?;
            units.push(unit);
            let slot = k.min(counts.len() - 1);
            counts[slot] += 1;
        }
    }
    Ok((units, counts))
}

/// Cross-fitted pooled estimator over all batches: fold-`k` observations are
/// scored with fold-`k` nuisances and the mixture propensity.
pub fn pooled_estimate(record: &ExperimentRecord, estimand: Estimand, nuisances: &NuisanceSet) -> Result<EstimateReport> {
    require_covariates(record)?;
    let all: Vec<usize> = (0..record.batches.len()).collect();
    let (units, fold_counts) = score_batches(record, &all, estimand, nuisances)?;
    let fit = fit_scores(&units)?;
    report(
        EstimateMethod::Pooled,
        fit,
        units.len(),
        EstimateDiagnostics {
            fold_counts,
            ..Default::default()
        },
    )
}

/// Inverse-covariance weighted combination of per-batch estimators.
/// `per_batch[t]` holds the nuisances for batch `t` alone.
pub fn aggregated_estimate(
    record: &ExperimentRecord,
    estimand: Estimand,
    per_batch: &[NuisanceSet],
) -> Result<EstimateReport> {
    require_covariates(record)?;
    if per_batch.len() != record.batches.len() {
        return Err(Error::DimensionMismatch {
            expected: record.batches.len(),
            got: per_batch.len(),
        });
    }
    let n_total = record.n_total() as f64;
    let mut diagnostics = EstimateDiagnostics {
        fold_counts: vec![0; record.k.max(1)],
        ..Default::default()
    };
    let mut precision_sum: Option<DMatrix<f64>> = None;
    let mut weighted_theta: Option<DVector<f64>> = None;
    for (t, nuisances) in per_batch.iter().enumerate() {
        let (units, counts) = score_batches(record, &[t], estimand, nuisances)?;
        for (a, c) in diagnostics.fold_counts.iter_mut().zip(counts) {
            *a += c;
        }
        let fit = fit_scores(&units).map_err(|e| e.at_stage(t + 1, 0))?;
        diagnostics.condition_numbers.push(fit.condition);
        let p = fit.theta.len();
        let precision = match spd_inverse(&fit.covariance) {
            Ok(m) => m,
            Err(_) => {
                diagnostics.flags.push(format!("batch {}: ridge added to singular covariance", t + 1));
                spd_inverse(&(&fit.covariance + DMatrix::identity(p, p) * 1e-8))?
            }
        };
        let kappa = units.len() as f64 / n_total;
        let wp = precision * kappa;
        let contribution = &wp * &fit.theta;
        precision_sum = Some(match precision_sum {
            Some(s) => s + wp,
            None => wp,
        });
        weighted_theta = Some(match weighted_theta {
            Some(s) => s + contribution,
            None => contribution,
        });
    }
    let precision_sum = precision_sum.ok_or_else(|| Error::InvalidSpec("record has no batches".into()))?;
    let condition = condition_number(&precision_sum);
    let covariance = spd_inverse(&precision_sum).map_err(|_| Error::EstimationFailure {
        condition,
        context: "aggregated precision is singular".into(),
    })?;
    let theta = &covariance * weighted_theta.expect("set with precision");
    let fit = Fit {
        theta,
        covariance,
        condition,
    };
    report(EstimateMethod::LinearAggregate, fit, record.n_total(), diagnostics)
}

/// AIPW on bin labels of `1'x` (quantile cuts of the pooled covariates),
/// with within-cell sample means as outcome models and no cross-fitting.
pub fn binned_estimate(record: &ExperimentRecord, bins: usize, gamma: f64) -> Result<EstimateReport> {
    require_covariates(record)?;
    if bins < 1 {
        return Err(Error::Config("need at least one bin".into()));
    }
    let idx: Vec<f64> = record
        .batches
        .iter()
        .flat_map(|b| (0..b.len()).map(move |i| index(b.row(i))))
        .collect();
    let cuts = quantile_cuts(&idx, bins);
    let mut sums = vec![[0.0f64; 2]; bins];
    let mut counts = vec![[0usize; 2]; bins];
    let mut arm_sum = [0.0f64; 2];
    let mut arm_count = [0usize; 2];
    let mut pos = 0;
    for b in &record.batches {
        for i in 0..b.len() {
            let c = bin_of(&cuts, idx[pos]);
            pos += 1;
            let z = b.z[i] as usize;
            sums[c][z] += b.y[i];
            counts[c][z] += 1;
            arm_sum[z] += b.y[i];
            arm_count[z] += 1;
        }
    }
    for (arm, c) in arm_count.iter().enumerate() {
        if *c == 0 {
            return Err(Error::EmptyArm { arm: arm as u8 });
        }
    }
    let mut diagnostics = EstimateDiagnostics {
        fold_counts: vec![record.n_total()],
        ..Default::default()
    };
    let mut means = vec![[0.0f64; 2]; bins];
    for c in 0..bins {
        for z in 0..2 {
            means[c][z] = if counts[c][z] > 0 {
                sums[c][z] / counts[c][z] as f64
            } else {
                diagnostics
                    .flags
                    .push(format!("bin {} arm {z} empty; arm mean used", c + 1));
                arm_sum[z] / arm_count[z] as f64
            };
        }
    }
    let weights = record.mixture_weights();
    let mut units = Vec::with_capacity(record.n_total());
    let mut pos = 0;
    for b in &record.batches {
        for i in 0..b.len() {
            let c = bin_of(&cuts, idx[pos]);
            pos += 1;
            let x = b.row(i);
            let fold = b.folds[i];
            let e: f64 = record
                .batches
                .iter()
                .zip(weights.as_slice())
                .map(|(bb, w)| w * bb.propensities[fold.min(bb.propensities.len() - 1)].evaluate_unchecked(x))
                .sum();
            let obs = Observation { x, z: b.z[i], y: b.y[i] };
            units.push(UnitScore {
                a: 1.0,
                b: aipw_sb(&obs, means[c][0], means[c][1], e, gamma)?,
                psi: vec![1.0],
            });
        }
    }
    let fit = fit_scores(&units)?;
    report(EstimateMethod::BinnedPooled, fit, units.len(), diagnostics)
}
