//! Single-shot operations behind the `design`, `variance`, `replay` and
//! `experiment` commands.

use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{estimate, DesignRun, EstimatorChoice, Method, SimConfig};
use crate::csbae::{run_experiment, EstimateReport, ExperimentRecord, NuisanceMode};
use crate::dgp::{DgpSpec, Estimand};
use crate::linalg::trace;
use crate::optimizer::{maximize_design_in, DesignProblem, ObjectiveKind, SolverDiagnostics, SolverOptions};
use crate::propensity::{index, BudgetInterval, FamilySpec, FeasibleSet, MixtureWeights, PropensityFn};
use crate::rng::StreamSeed;
use crate::variance::{
    covariate_shift_counterexample, per_batch_variance, pooled_variance, vla, CovariateSample, Integrands, PsiKind,
    ShiftComparison,
};
use crate::{Error, Result};

/// Covariates and nuisance values read from a design data file.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignData {
    pub dim: usize,
    pub points: Vec<f64>,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub prior_mix: Vec<f64>,
}

/// Reads CSV with header `x1,..,xd,v0,v1,prior_mix`. Column order is free;
/// covariate columns are ordered by their numeric suffix.
pub fn read_design_csv<R: Read>(reader: R) -> Result<DesignData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("design data lacks a `{name}` column")))
    };
    let (c_v0, c_v1, c_mix) = (find("v0")?, find("v1")?, find("prior_mix")?);
    let mut xcols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()).map(|j| (j, i)))
        .collect();
    xcols.sort();
    if xcols.is_empty() || xcols.iter().enumerate().any(|(k, (j, _))| *j != k + 1) {
        return Err(Error::Config("covariate columns must be x1..xd".into()));
    }
    let dim = xcols.len();
    let mut data = DesignData {
        dim,
        points: Vec::new(),
        v0: Vec::new(),
        v1: Vec::new(),
        prior_mix: Vec::new(),
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("row {}: column {} is not a finite number", line + 2, headers[c].to_string())))
        };
        for (_, c) in &xcols {
            data.points.push(num(*c)?);
        }
        data.v0.push(num(c_v0)?);
        data.v1.push(num(c_v1)?);
        data.prior_mix.push(num(c_mix)?);
    }
    if data.v0.is_empty() {
        return Err(Error::Config("design data has no rows".into()));
    }
    Ok(data)
}

/// Settings of a standalone design solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSettings {
    pub family: Option<FamilySpec>,
    pub budget: BudgetInterval,
    /// Share `kappa_t` of the current batch in the pooled sample; the earlier
    /// batches' mixture `prior_mix` carries weight `1 - kappa_t`.
    pub current_weight: f64,
    pub estimand: Estimand,
    pub psi: PsiKind,
    pub solver: SolverOptions,
    pub gamma: f64,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            family: None,
            budget: BudgetInterval::equality(0.2).expect("valid budget"),
            current_weight: 1.0,
            estimand: Estimand::Ate,
            psi: PsiKind::AOpt,
            solver: SolverOptions::default(),
            gamma: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutput {
    pub propensity: PropensityFn,
    pub values: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

pub fn solve_design(data: &DesignData, settings: &DesignSettings) -> Result<DesignOutput> {
    if !(settings.current_weight > 0.0 && settings.current_weight <= 1.0) {
        return Err(Error::Config("current_weight must lie in (0, 1]".into()));
    }
    let spec = settings
        .family
        .clone()
        .unwrap_or_else(|| FamilySpec::flexible_default(data.dim));
    let idx: Vec<f64> = data.points.chunks(data.dim).map(index).collect();
    let family = spec.instantiate(data.dim, Some(&idx))?;
    let w = settings.current_weight;
    let problem = DesignProblem {
        dim: data.dim,
        points: data.points.clone(),
        v0: data.v0.clone(),
        v1: data.v1.clone(),
        prior_offset: data.prior_mix.iter().map(|m| (1.0 - w) * m).collect(),
        current_weight: w,
        psi: None,
        family: family.clone(),
        budget: settings.budget,
        psi_kind: settings.psi,
        objective: match settings.estimand {
            Estimand::Ate => ObjectiveKind::Aipw,
            Estimand::Pl => ObjectiveKind::Epl,
        },
    };
    let set = FeasibleSet::new(&family, &data.points, data.dim, settings.budget)?;
    let sol = maximize_design_in(&set, &problem, None, &settings.solver)?;
    let clip = match settings.estimand {
        Estimand::Ate => settings.gamma,
        Estimand::Pl => 0.0,
    };
    Ok(DesignOutput {
        propensity: sol.propensity(&set)?.with_clip(clip)?,
        values: sol.values,
        diagnostics: sol.diagnostics,
    })
}

fn default_points() -> usize {
    100_000
}

fn default_seed() -> u64 {
    1
}

/// A variance evaluation: either the covariate-shift counterexample or the
/// pooled and aggregated covariances of fixed per-batch propensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceRequest {
    #[serde(default)]
    pub counterexample: bool,
    pub dgp: Option<DgpSpec>,
    #[serde(default)]
    pub estimand: Estimand,
    #[serde(default)]
    pub batch_sizes: Vec<usize>,
    /// One propensity per batch.
    #[serde(default)]
    pub propensities: Vec<PropensityFn>,
    /// Monte Carlo points when `d > 1`.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VarianceOutput {
    Counterexample(ShiftComparison),
    Stationary {
        /// Row-major pooled covariance `V_0`.
        pooled: Vec<f64>,
        per_batch: Vec<Vec<f64>>,
        aggregated: Vec<f64>,
        ridge_applied: bool,
        /// `tr V_LA / tr V_0`.
        pooled_gain: f64,
    },
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

pub fn evaluate_variance(req: &VarianceRequest) -> Result<VarianceOutput> {
    if req.counterexample {
        return Ok(VarianceOutput::Counterexample(covariate_shift_counterexample()?));
    }
    let dgp = req
        .dgp
        .as_ref()
        .ok_or_else(|| Error::Config("variance request needs a dgp unless counterexample = true".into()))?;
    dgp.validate()?;
    if req.propensities.is_empty() || req.propensities.len() != req.batch_sizes.len() {
        return Err(Error::Config("give one propensity per batch size".into()));
    }
    let kappa = MixtureWeights::from_sizes(&req.batch_sizes)?;
    let kappa = kappa.as_slice();
    let sample = if dgp.dim == 1 {
        CovariateSample::for_spec(dgp, req.seed)
    } else {
        CovariateSample::monte_carlo(dgp, req.points, req.seed)
    };
    let theta = match req.estimand {
        Estimand::Ate => dgp.true_theta(Estimand::Ate)?[0],
        Estimand::Pl => 0.0,
    };
    let v = |z: u8, x: &[f64]| dgp.var_unchecked(z, x);
    let tau_sq = |x: &[f64]| (dgp.mean_unchecked(1, x) - dgp.mean_unchecked(0, x) - theta).powi(2);
    let mix = |x: &[f64]| {
        req.propensities
            .iter()
            .zip(kappa)
            .map(|(e, k)| k * e.evaluate_unchecked(x))
            .sum::<f64>()
    };
    let pooled = pooled_variance(
        req.estimand,
        &Integrands {
            e: &mix,
            v: &v,
            tau_sq: &tau_sq,
        },
        &sample,
    )?;
    let per_batch = req
        .propensities
        .iter()
        .map(|p| {
            let e = |x: &[f64]| p.evaluate_unchecked(x);
            per_batch_variance(
                req.estimand,
                &Integrands {
                    e: &e,
                    v: &v,
                    tau_sq: &tau_sq,
                },
                &sample,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let la = vla(&per_batch, kappa)?;
    Ok(VarianceOutput::Stationary {
        pooled_gain: trace(&la.matrix) / trace(&pooled),
        pooled: row_major(&pooled),
        per_batch: per_batch.iter().map(row_major).collect(),
        aggregated: row_major(&la.matrix),
        ridge_applied: la.ridge_applied,
    })
}

/// Estimator settings for re-analysing a stored record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOptions {
    pub estimators: Vec<EstimatorChoice>,
    pub nuisance: NuisanceMode,
    pub bins: usize,
}

/// Recomputes estimates from a stored record, restoring stripped covariates.
pub fn replay(record: &ExperimentRecord, opts: &ReplayOptions) -> Result<Vec<EstimateReport>> {
    let mut record = record.clone();
    record.restore_covariates()?;
    let mut cfg = SimConfig::standard(record.config.dgp.clone(), record.config.estimand);
    cfg.batch_sizes = record.config.batch_sizes.clone();
    cfg.folds = record.config.folds;
    cfg.nuisance = opts.nuisance;
    cfg.smoother = record.config.smoother;
    cfg.gamma = record.config.gamma;
    cfg.bins = opts.bins;
    opts.estimators
        .iter()
        .map(|e| {
            if *e == EstimatorChoice::Binned && cfg.estimand == Estimand::Pl {
                return Err(Error::Config("the binned estimator targets the average treatment effect only".into()));
            }
            estimate(&cfg, &record, *e)
        })
        .collect()
}

/// Runs one experiment of `method` under a study configuration.
pub fn single_experiment(cfg: &SimConfig, method: Method, replication: u64) -> Result<ExperimentRecord> {
    let run: DesignRun = method.run(cfg.folds);
    run_experiment(&cfg.experiment_config(run), StreamSeed::new(cfg.seed, replication))
}
