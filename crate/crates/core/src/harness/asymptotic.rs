use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{DesignRun, EstimatorChoice, SimConfig};
use crate::dgp::{CovariateLaw, Estimand};
use crate::linalg::{spd_inverse, trace};
use crate::propensity::{gaussian_index_cuts, index, quantile_cuts, MixtureWeights, PropensityFn};
use crate::variance::{epl_information_values, linear_basis, v0_aipw_values, vla, CellMoments, CovariateSample};
use crate::{Error, Result};

/// Learned propensities collected across replications, keyed by design run.
/// Each entry holds the batch-by-fold propensities of one replication.
#[derive(Debug, Clone, Default)]
pub struct LearnedDesigns {
    runs: HashMap<DesignRun, Vec<Vec<Vec<PropensityFn>>>>,
}

impl LearnedDesigns {
    pub fn push(&mut self, run: DesignRun, batches: Vec<Vec<PropensityFn>>) {
        self.runs.entry(run).or_default().push(batches);
    }

    pub fn get(&self, run: &DesignRun) -> Option<&[Vec<Vec<PropensityFn>>]> {
        self.runs.get(run).map(|v| v.as_slice())
    }
}

/// `e_bar_t(x_i)`: per batch, the average over replications and folds of the
/// learned propensity at every sample point.
pub fn averaged_batch_values(designs: &[Vec<Vec<PropensityFn>>], sample: &CovariateSample) -> Result<Vec<Vec<f64>>> {
    let first = designs
        .first()
        .ok_or_else(|| Error::Config("no learned designs to average".into()))?;
    let t_count = first.len();
    let m = sample.len();
    let mut out = vec![vec![0.0; m]; t_count];
    for (t, acc) in out.iter_mut().enumerate() {
        let fns: Vec<&PropensityFn> = designs.iter().flat_map(|rep| rep[t].iter()).collect();
        let w = 1.0 / fns.len() as f64;
        for (i, a) in acc.iter_mut().enumerate() {
            let x = sample.point(i);
            *a = fns.iter().map(|e| e.evaluate_unchecked(x)).sum::<f64>() * w;
        }
    }
    Ok(out)
}

struct Tabulated {
    v0: Vec<f64>,
    v1: Vec<f64>,
    tau_sq: Vec<f64>,
    psi: Vec<f64>,
}

fn tabulate(cfg: &SimConfig, sample: &CovariateSample, theta: f64) -> Tabulated {
    let m = sample.len();
    let mut t = Tabulated {
        v0: Vec::with_capacity(m),
        v1: Vec::with_capacity(m),
        tau_sq: Vec::with_capacity(m),
        psi: Vec::new(),
    };
    for i in 0..m {
        let x = sample.point(i);
        t.v0.push(cfg.dgp.var_unchecked(0, x));
        t.v1.push(cfg.dgp.var_unchecked(1, x));
        t.tau_sq
            .push((cfg.dgp.mean_unchecked(1, x) - cfg.dgp.mean_unchecked(0, x) - theta).powi(2));
        if cfg.estimand == Estimand::Pl {
            t.psi.extend(linear_basis(x));
        }
    }
    t
}

fn covariance(cfg: &SimConfig, tab: &Tabulated, e: &[f64], weights: &[f64]) -> Result<DMatrix<f64>> {
    let e: Vec<f64> = e.iter().map(|v| v.clamp(cfg.gamma, 1.0 - cfg.gamma)).collect();
    let e = e.as_slice();
    match cfg.estimand {
        Estimand::Ate => Ok(DMatrix::from_element(
            1,
            1,
            v0_aipw_values(e, &tab.v0, &tab.v1, &tab.tau_sq, weights)?,
        )),
        Estimand::Pl => {
            let p = cfg.dgp.dim + 1;
            let info = epl_information_values(e, &tab.v0, &tab.v1, &tab.psi, p, weights)?;
            spd_inverse(&info).map_err(|_| Error::Singular("partially linear information matrix".into()))
        }
    }
}

fn cell_cuts(cfg: &SimConfig, sample: &CovariateSample) -> Vec<f64> {
    match cfg.dgp.covariate_law {
        CovariateLaw::StandardGaussian => gaussian_index_cuts(cfg.dgp.dim, cfg.bins),
        _ => {
            let idx: Vec<f64> = (0..sample.len()).map(|i| index(sample.point(i))).collect();
            quantile_cuts(&idx, cfg.bins)
        }
    }
}

/// Asymptotic relative efficiency of every method against the baseline,
/// `tr V_base / tr V_method`, evaluated at the averaged learned designs.
/// Propensities are clipped to `[gamma, 1 - gamma]` as in the scores.
pub fn asymptotic_rel_eff(cfg: &SimConfig, learned: &LearnedDesigns, sample: &CovariateSample) -> Result<Vec<f64>> {
    let methods = cfg.resolved_methods();
    let theta = match cfg.estimand {
        Estimand::Ate => cfg.dgp.true_theta(Estimand::Ate)?[0],
        Estimand::Pl => 0.0,
    };
    let tab = tabulate(cfg, sample, theta);
    let kappa = MixtureWeights::from_sizes(&cfg.batch_sizes)?;
    let kappa = kappa.as_slice();
    let mut averaged: HashMap<DesignRun, Vec<Vec<f64>>> = HashMap::new();
    let mut traces = Vec::with_capacity(methods.len());
    for m in &methods {
        let run = m.run(cfg.folds);
        if !averaged.contains_key(&run) {
            let designs = learned
                .get(&run)
                .ok_or_else(|| Error::Config(format!("no designs recorded for method {m}")))?;
            averaged.insert(run, averaged_batch_values(designs, sample)?);
        }
        let ebar = &averaged[&run];
        let mixture: Vec<f64> = (0..sample.len())
            .map(|i| ebar.iter().zip(kappa).map(|(e, k)| k * e[i]).sum())
            .collect();
        let tr = match m.estimator {
            EstimatorChoice::Pooled => trace(&covariance(cfg, &tab, &mixture, &sample.weights)?),
            EstimatorChoice::Aggregated => {
                let per_batch = ebar
                    .iter()
                    .map(|e| covariance(cfg, &tab, e, &sample.weights))
                    .collect::<Result<Vec<_>>>()?;
                trace(&vla(&per_batch, kappa)?.matrix)
            }
            EstimatorChoice::Binned => {
                let cuts = cell_cuts(cfg, sample);
                let dgp = &cfg.dgp;
                let moments = CellMoments::compute(
                    &cuts,
                    &|z, x| dgp.mean_unchecked(z, x),
                    &|z, x| dgp.var_unchecked(z, x),
                    sample,
                );
                let nc = cuts.len() + 1;
                let mut num = vec![0.0; nc];
                for i in 0..sample.len() {
                    let s = crate::propensity::bin_of(&cuts, index(sample.point(i)));
                    num[s] += sample.weights[i] * mixture[i];
                }
                let e_cell: Vec<f64> = num
                    .iter()
                    .zip(&moments.prob)
                    .map(|(n, p)| if *p > 0.0 { n / p } else { 0.5 })
                    .collect();
                let e_cell: Vec<f64> = e_cell.iter().map(|v| v.clamp(cfg.gamma, 1.0 - cfg.gamma)).collect();
                moments.binned_aipw_variance(&e_cell)?
            }
        };
        traces.push(tr);
    }
    let base = *traces.last().expect("baseline present");
    Ok(traces.iter().map(|t| base / t).collect())
}
