//! Out-of-fold nuisance estimation: outcome means, outcome variances and the
//! mixture propensity, plus an oracle mode that returns the truth.

mod smoothers;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use smoothers::{Knn, LocalLinear, Regressor, RidgeSpline, Smoother, SmootherKind};

use crate::csbae::ExperimentRecord;
use crate::dgp::DgpSpec;
use crate::propensity::{MixtureWeights, PropensityFn};
use crate::scores::VARIANCE_FLOOR;
use crate::{Error, Result};

/// Minimum number of observations per arm for a smoother fit.
pub const MIN_ARM_OBS: usize = 5;

pub type Model = Arc<dyn Regressor>;

/// Pooled training observations (row-major covariates).
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub dim: usize,
    pub x: Vec<f64>,
    pub z: Vec<u8>,
    pub y: Vec<f64>,
}

impl TrainingData {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: &[f64], z: u8, y: f64) {
        self.x.extend_from_slice(x);
        self.z.push(z);
        self.y.push(y);
    }

    /// Observations of batches and folds accepted by `keep(batch, fold)`.
    pub fn from_record(record: &ExperimentRecord, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut out = Self::new(record.dim);
        for (t, b) in record.batches.iter().enumerate() {
            for i in 0..b.len() {
                if keep(t, b.folds[i]) {
                    out.push(b.row(i), b.z[i], b.y[i]);
                }
            }
        }
        out
    }

    fn arm(&self, z: u8) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..self.len() {
            if self.z[i] == z {
                x.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
                y.push(self.y[i]);
            }
        }
        (x, y)
    }
}

fn check_arm(arm: u8, count: usize) -> Result<()> {
    match count {
        0 => Err(Error::EmptyArm { arm }),
        c if c < MIN_ARM_OBS => Err(Error::InsufficientData {
            arm,
            count: c,
            needed: MIN_ARM_OBS,
        }),
        _ => Ok(()),
    }
}

#[derive(Debug)]
struct Fitted(Box<dyn Regressor>);

impl Regressor for Fitted {
    fn predict(&self, x: &[f64]) -> f64 {
        self.0.predict(x)
    }
}

/// `max(inner, floor)`.
#[derive(Debug)]
pub struct Floored<R> {
    inner: R,
    floor: f64,
}

impl<R: Regressor> Regressor for Floored<R> {
    fn predict(&self, x: &[f64]) -> f64 {
        let v = self.inner.predict(x);
        if v.is_nan() {
            self.floor
        } else {
            v.max(self.floor)
        }
    }
}

/// Clamp to `[gamma, 1 - gamma]`.
#[derive(Debug)]
pub struct Clipped<R> {
    inner: R,
    gamma: f64,
}

impl<R: Regressor> Regressor for Clipped<R> {
    fn predict(&self, x: &[f64]) -> f64 {
        let v = self.inner.predict(x);
        if v.is_nan() {
            0.5
        } else {
            v.clamp(self.gamma, 1.0 - self.gamma)
        }
    }
}

/// Fits `m(z, .)` on observations `(x, y)` of arm `arm`.
pub fn fit_mean(x: &[f64], dim: usize, y: &[f64], arm: u8, smoother: &Smoother) -> Result<Model> {
    check_arm(arm, y.len())?;
    Ok(Arc::new(Fitted(smoother.fit(x, dim, y)?)))
}

/// Fits `v(z, .)` on squared residuals from `mean`, floored at the variance floor.
pub fn fit_variance(
    x: &[f64],
    dim: usize,
    y: &[f64],
    arm: u8,
    smoother: &Smoother,
    mean: &dyn Regressor,
) -> Result<Model> {
    check_arm(arm, y.len())?;
    let sq: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, yi)| (yi - mean.predict(&x[i * dim..(i + 1) * dim])).powi(2))
        .collect();
    Ok(Arc::new(Floored {
        inner: Fitted(smoother.fit(x, dim, &sq)?),
        floor: VARIANCE_FLOOR,
    }))
}

/// Mean and variance functions for both arms.
#[derive(Debug, Clone)]
pub struct OutcomeModels {
    pub m: [Model; 2],
    pub v: [Model; 2],
}

pub fn fit_outcome_models(data: &TrainingData, smoother: &Smoother) -> Result<OutcomeModels> {
    let mut m = Vec::with_capacity(2);
    let mut v = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let (x, y) = data.arm(arm);
        let mean = fit_mean(&x, data.dim, &y, arm, smoother)?;
        v.push(fit_variance(&x, data.dim, &y, arm, smoother, mean.as_ref())?);
        m.push(mean);
    }
    Ok(OutcomeModels {
        m: [m[0].clone(), m[1].clone()],
        v: [v[0].clone(), v[1].clone()],
    })
}

#[derive(Debug, Clone, Copy)]
enum Moment {
    Mean,
    Variance,
}

/// Closed-form `m0` or `v0` of a data-generating process.
#[derive(Debug)]
struct TrueMoment {
    spec: DgpSpec,
    z: u8,
    moment: Moment,
}

impl Regressor for TrueMoment {
    fn predict(&self, x: &[f64]) -> f64 {
        match self.moment {
            Moment::Mean => self.spec.mean_unchecked(self.z, x),
            Moment::Variance => self.spec.var_unchecked(self.z, x),
        }
    }
}

pub fn true_outcome_models(spec: &DgpSpec) -> OutcomeModels {
    let make = |z, moment| -> Model {
        Arc::new(TrueMoment {
            spec: spec.clone(),
            z,
            moment,
        })
    };
    OutcomeModels {
        m: [make(0, Moment::Mean), make(1, Moment::Mean)],
        v: [make(0, Moment::Variance), make(1, Moment::Variance)],
    }
}

/// `sum_j w_j e_j(x)`, clipped to `[gamma, 1 - gamma]`.
#[derive(Debug, Clone)]
pub struct DesignMixture {
    parts: Vec<(f64, PropensityFn)>,
    gamma: f64,
}

impl DesignMixture {
    pub fn new(parts: Vec<(f64, PropensityFn)>, gamma: f64) -> Self {
        Self { parts, gamma }
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        self.parts.iter().map(|(w, e)| w * e.evaluate_unchecked(x)).sum()
    }
}

impl Regressor for DesignMixture {
    fn predict(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(self.gamma, 1.0 - self.gamma)
    }
}

/// Nuisance functions used to score the observations of one fold.
#[derive(Debug, Clone)]
pub struct FoldNuisance {
    pub m: [Model; 2],
    pub v: [Model; 2],
    /// Propensity (clipped) used in the scores.
    pub e: Model,
}

impl FoldNuisance {
    pub fn mean(&self, z: u8, x: &[f64]) -> f64 {
        self.m[z as usize].predict(x)
    }

    pub fn variance(&self, z: u8, x: &[f64]) -> f64 {
        self.v[z as usize].predict(x)
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        self.e.predict(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Estimated,
    Oracle,
}

/// How the mixture propensity is obtained in estimated mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityMode {
    /// Mixture of the stored assignment propensities of the other folds.
    #[default]
    KnownDesign,
    /// Out-of-fold regression of `Z` on `X`.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossfitOptions {
    pub smoother: Smoother,
    #[serde(default)]
    pub propensity: PropensityMode,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.01
}

impl CrossfitOptions {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            smoother: Smoother::default_for_dim(dim),
            propensity: PropensityMode::KnownDesign,
            gamma: default_gamma(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceSet {
    pub folds: Vec<FoldNuisance>,
    pub provenance: Provenance,
    pub smoother: Option<Smoother>,
    pub gamma: f64,
}

impl NuisanceSet {
    pub fn fold(&self, k: usize) -> &FoldNuisance {
        &self.folds[k.min(self.folds.len() - 1)]
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Writes `x_1..x_d, m0, m1, v0, v1, e` for every fold at the given points.
    pub fn dump_grid<W: Write>(&self, points: &[f64], dim: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["fold".into()];
        header.extend((1..=dim).map(|j| format!("x{j}")));
        header.extend(["m0", "m1", "v0", "v1", "e"].map(String::from));
        w.write_record(&header)?;
        for (k, f) in self.folds.iter().enumerate() {
            for x in points.chunks(dim) {
                let mut rec = vec![k.to_string()];
                rec.extend(x.iter().map(|v| v.to_string()));
                for v in [f.mean(0, x), f.mean(1, x), f.variance(0, x), f.variance(1, x), f.propensity(x)] {
                    rec.push(v.to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn known_design_mixture(record: &ExperimentRecord, exclude: Option<usize>, only: Option<usize>, gamma: f64) -> DesignMixture {
    let weights = record.mixture_weights();
    let mut parts = Vec::new();
    for (t, b) in record.batches.iter().enumerate() {
        let folds: Vec<usize> = match only {
            Some(k) => vec![k.min(b.propensities.len() - 1)],
            None => (0..b.propensities.len()).filter(|k| Some(*k) != exclude).collect(),
        };
        let folds = if folds.is_empty() { vec![0] } else { folds };
        let share = weights.as_slice()[t] / folds.len() as f64;
        for k in folds {
            parts.push((share, b.propensities[k].clone()));
        }
    }
    DesignMixture::new(parts, gamma)
}

fn regression_propensity(data: &TrainingData, opts: &CrossfitOptions) -> Result<Model> {
    let z: Vec<f64> = data.z.iter().map(|z| *z as f64).collect();
    if z.len() < MIN_ARM_OBS {
        return Err(Error::InsufficientData {
            arm: 1,
            count: z.len(),
            needed: MIN_ARM_OBS,
        });
    }
    Ok(Arc::new(Clipped {
        inner: Fitted(opts.smoother.fit(&data.x, data.dim, &z)?),
        gamma: opts.gamma,
    }))
}

/// Cross-fitted nuisances for the pooled estimator: fold `k` functions are
/// trained on every observation outside fold `k`, across all batches.
pub fn crossfit(record: &ExperimentRecord, opts: &CrossfitOptions) -> Result<NuisanceSet> {
    let k_folds = record.k;
    if k_folds < 2 {
        return Err(Error::Config("cross-fitting needs at least two folds".into()));
    }
    let folds = (0..k_folds)
        .map(|k| {
            let data = TrainingData::from_record(record, |_, f| f != k);
            let models = fit_outcome_models(&data, &opts.smoother)?;
            let e: Model = match opts.propensity {
                PropensityMode::KnownDesign => Arc::new(known_design_mixture(record, Some(k), None, opts.gamma)),
                PropensityMode::Regression => regression_propensity(&data, opts)?,
            };
            Ok(FoldNuisance {
                m: models.m,
                v: models.v,
                e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceSet {
        folds,
        provenance: Provenance::Estimated,
        smoother: Some(opts.smoother),
        gamma: opts.gamma,
    })
}

/// Cross-fitted nuisances using batch `t` alone, with each fold's own
/// assignment propensity, as used by the per-batch estimators.
pub fn crossfit_batch(record: &ExperimentRecord, t: usize, opts: &CrossfitOptions) -> Result<NuisanceSet> {
    let b = record
        .batches
        .get(t)
        .ok_or_else(|| Error::Config(format!("batch {t} does not exist")))?;
    if record.k < 2 {
        return Err(Error::Config("cross-fitting needs at least two folds".into()));
    }
    let folds = (0..record.k)
        .map(|k| {
            let data = TrainingData::from_record(record, |u, f| u == t && f != k);
            let models = fit_outcome_models(&data, &opts.smoother).map_err(|e| e.at_stage(t, k))?;
            let own = b.propensities[k.min(b.propensities.len() - 1)].clone();
            Ok(FoldNuisance {
                m: models.m,
                v: models.v,
                e: Arc::new(DesignMixture::new(vec![(1.0, own)], opts.gamma)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceSet {
        folds,
        provenance: Provenance::Estimated,
        smoother: Some(opts.smoother),
        gamma: opts.gamma,
    })
}

/// True mean and variance functions together with the exact mixture
/// `sum_t w_t e_t^(k)` of each fold's assignment propensities.
///
/// `propensities[t]` holds one function per fold, or a single function shared
/// by all folds.
pub fn oracle(
    spec: &DgpSpec,
    propensities: &[Vec<PropensityFn>],
    weights: &MixtureWeights,
    gamma: f64,
) -> Result<NuisanceSet> {
    if propensities.is_empty() || propensities.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidSpec("oracle design needs a propensity for every batch".into()));
    }
    if propensities.len() != weights.as_slice().len() {
        return Err(Error::DimensionMismatch {
            expected: propensities.len(),
            got: weights.as_slice().len(),
        });
    }
    let models = true_outcome_models(spec);
    let n_folds = propensities.iter().map(Vec::len).max().unwrap_or(1);
    let folds = (0..n_folds)
        .map(|k| {
            let parts = propensities
                .iter()
                .zip(weights.as_slice())
                .map(|(p, w)| (*w, p[k.min(p.len() - 1)].clone()))
                .collect();
            FoldNuisance {
                m: models.m.clone(),
                v: models.v.clone(),
                e: Arc::new(DesignMixture::new(parts, gamma)),
            }
        })
        .collect();
    Ok(NuisanceSet {
        folds,
        provenance: Provenance::Oracle,
        smoother: None,
        gamma,
    })
}

/// Oracle nuisances for the pooled estimator of a recorded experiment.
pub fn oracle_for_record(spec: &DgpSpec, record: &ExperimentRecord, gamma: f64) -> Result<NuisanceSet> {
    let props: Vec<Vec<PropensityFn>> = record.batches.iter().map(|b| b.propensities.clone()).collect();
    oracle(spec, &props, &record.mixture_weights(), gamma)
}

/// Oracle nuisances for the per-batch estimator of batch `t`.
pub fn oracle_for_batch(spec: &DgpSpec, record: &ExperimentRecord, t: usize, gamma: f64) -> Result<NuisanceSet> {
    let b = record
        .batches
        .get(t)
        .ok_or_else(|| Error::Config(format!("batch {t} does not exist")))?;
    oracle(spec, &[b.propensities.clone()], &MixtureWeights::new(&[1.0])?, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn sample(spec: &DgpSpec, n: usize, seed: u64) -> TrainingData {
        let mut rng = stream(seed, 0, Purpose::Other(1));
        let table = spec.sample_batch(n, &mut rng).unwrap();
        let mut data = TrainingData::new(spec.dim);
        for i in 0..n {
            data.push(table.row(i), 0, table.y0[i]);
        }
        data
    }

    #[test]
    fn arm_errors() {
        let s = Smoother::new(SmootherKind::LocalLinear);
        assert!(matches!(fit_mean(&[], 1, &[], 0, &s), Err(Error::EmptyArm { arm: 0 })));
        assert!(matches!(
            fit_mean(&[1.0, 2.0], 1, &[1.0, 2.0], 1, &s),
            Err(Error::InsufficientData { count: 2, .. })
        ));
    }

    #[test]
    fn zero_residuals_hit_the_floor() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let s = Smoother::new(SmootherKind::LocalLinear);
        let m = fit_mean(&x, 1, &y, 0, &s).unwrap();
        let v = fit_variance(&x, 1, &y, 0, &s, m.as_ref()).unwrap();
        for xi in &x {
            assert_eq!(v.predict(&[*xi]), VARIANCE_FLOOR);
        }
    }

    #[test]
    fn local_linear_mean_accuracy_d1() {
        let spec = DgpSpec::standard(1, false);
        let data = sample(&spec, 2000, 11);
        let s = Smoother::new(SmootherKind::LocalLinear);
        let m = fit_mean(&data.x, 1, &data.y, 0, &s).unwrap();
        let grid: Vec<f64> = (0..201).map(|i| -2.0 + 0.02 * i as f64).collect();
        let rms = (grid.iter().map(|x| (m.predict(&[*x]) - x).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();
        assert!(rms < 0.1, "{rms}");
    }

    #[test]
    fn homoskedastic_variance_at_median() {
        let spec = DgpSpec::standard(1, false);
        let data = sample(&spec, 2000, 12);
        let s = Smoother::new(SmootherKind::LocalLinear);
        let m = fit_mean(&data.x, 1, &data.y, 0, &s).unwrap();
        let v = fit_variance(&data.x, 1, &data.y, 0, &s, m.as_ref()).unwrap();
        assert!((v.predict(&[0.0]) - 1.0).abs() < 0.15);
    }

    #[test]
    fn oracle_mixtures() {
        let spec = DgpSpec::standard(1, false);
        let w = MixtureWeights::new(&[1.0, 1.0]).unwrap();
        let c = |v| vec![PropensityFn::constant(v).unwrap()];
        let set = oracle(&spec, &[c(0.2), c(0.2)], &w, 0.01).unwrap();
        assert!((set.fold(0).propensity(&[0.7]) - 0.2).abs() < 1e-15);
        let set = oracle(&spec, &[c(0.2), c(0.4)], &w, 0.01).unwrap();
        assert!((set.fold(0).propensity(&[-3.0]) - 0.3).abs() < 1e-15);
        assert_eq!(set.fold(0).mean(1, &[0.25]), spec.mean_fn(1, &[0.25]).unwrap());
    }
}
