//! Interactive operations for the browser page in `www/`.
//!
//! Each operation has a plain Rust form returning a serialisable struct and a
//! `wasm_bindgen` export returning the same struct as a JSON string.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use wasm_bindgen::prelude::*;

use batchpool::dgp::DgpSpec;
use batchpool::harness::{solve_design, DesignData, DesignSettings};
use batchpool::propensity::{BudgetInterval, FamilySpec};
use batchpool::variance::{aipw_shift_comparison, v0_aipw_values};

/// A learned design for one Gaussian covariate.
#[derive(Debug, Clone, Serialize)]
pub struct DesignCurve {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    /// Pooled propensity `(1 - w) e_prior + w e(x)`.
    pub mixture: Vec<f64>,
    pub variance_learned: f64,
    pub variance_rct: f64,
    pub rel_eff: f64,
    pub iterations: usize,
}

fn normal_grid(n: usize) -> Vec<f64> {
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    (0..n).map(|i| z.inverse_cdf((i as f64 + 0.5) / n as f64)).collect()
}

fn aipw_variance(e: &[f64], v0: &[f64], v1: &[f64]) -> Result<f64, String> {
    let w = vec![1.0 / e.len() as f64; e.len()];
    let zero = vec![0.0; e.len()];
    v0_aipw_values(e, v0, v1, &zero, &w).map_err(|e| e.to_string())
}

/// Solves the pooled AIPW design for the second batch when the first batch ran
/// a simple RCT at `prior_value`. The budget is an equality at `budget`.
pub fn design_curve(
    heteroskedastic: bool,
    budget: f64,
    lipschitz: f64,
    current_weight: f64,
    prior_value: f64,
    points: usize,
) -> Result<DesignCurve, String> {
    if !(8..=2000).contains(&points) {
        return Err("points must lie between 8 and 2000".into());
    }
    if !(prior_value > 0.0 && prior_value < 1.0) {
        return Err("prior propensity must lie in (0, 1)".into());
    }
    let dgp = DgpSpec::standard(1, heteroskedastic);
    let x = normal_grid(points);
    let v0: Vec<f64> = x.iter().map(|xi| dgp.var_unchecked(0, &[*xi])).collect();
    let v1: Vec<f64> = x.iter().map(|xi| dgp.var_unchecked(1, &[*xi])).collect();
    let data = DesignData {
        dim: 1,
        points: x.clone(),
        v0: v0.clone(),
        v1: v1.clone(),
        prior_mix: vec![prior_value; points],
    };
    let settings = DesignSettings {
        family: Some(FamilySpec::Lipschitz { l: lipschitz }),
        budget: BudgetInterval::equality(budget).map_err(|e| e.to_string())?,
        current_weight,
        ..DesignSettings::default()
    };
    let out = solve_design(&data, &settings).map_err(|e| e.to_string())?;
    let mixture: Vec<f64> = out
        .values
        .iter()
        .map(|e| (1.0 - current_weight) * prior_value + current_weight * e)
        .collect();
    let rct = vec![(1.0 - current_weight) * prior_value + current_weight * budget; points];
    let variance_learned = aipw_variance(&mixture, &v0, &v1)?;
    let variance_rct = aipw_variance(&rct, &v0, &v1)?;
    Ok(DesignCurve {
        x,
        e: out.values,
        mixture,
        variance_learned,
        variance_rct,
        rel_eff: variance_rct / variance_learned,
        iterations: out.diagnostics.iterations,
    })
}

/// Pooled versus aggregated AIPW variance for two batches.
#[derive(Debug, Clone, Serialize)]
pub struct PoolingComparison {
    pub pooled: f64,
    pub aggregated: f64,
    pub per_batch: Vec<f64>,
    pub pooled_gain: f64,
}

/// Two batches with constant propensities `e1`, `e2` and share `kappa1` of
/// the first batch. Covariates are `Unif(0,1)` in batch 1 and either the same
/// or density `2x` in batch 2 (`shift`); outcome variance is `x` in both arms.
pub fn pooling_comparison(e1: f64, e2: f64, kappa1: f64, shift: bool) -> Result<PoolingComparison, String> {
    for (name, v) in [("e1", e1), ("e2", e2), ("kappa1", kappa1)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(format!("{name} must lie in (0, 1)"));
        }
    }
    let uniform = |_: f64| 1.0;
    let linear = |x: f64| 2.0 * x;
    let second: &dyn Fn(f64) -> f64 = if shift { &linear } else { &uniform };
    let c1 = move |_: &[f64]| e1;
    let c2 = move |_: &[f64]| e2;
    let cmp = aipw_shift_comparison(
        &[&uniform, second],
        &[kappa1, 1.0 - kappa1],
        &[&c1, &c2],
        &|_, x| x[0],
        &|_| 0.0,
        64,
    )
    .map_err(|e| e.to_string())?;
    Ok(PoolingComparison {
        pooled_gain: cmp.v_la / cmp.v0_pooled,
        pooled: cmp.v0_pooled,
        aggregated: cmp.v_la,
        per_batch: cmp.per_batch,
    })
}

/// Best constant propensity for arm variances `v0`, `v1` within a budget.
#[derive(Debug, Clone, Serialize)]
pub struct Allocation {
    pub propensity: f64,
    pub variance: f64,
    pub variance_half: f64,
    pub closed_form: f64,
}

pub fn neyman_allocation(v0: f64, v1: f64, budget_low: f64, budget_high: f64) -> Result<Allocation, String> {
    if !(v0 > 0.0 && v1 > 0.0) {
        return Err("variances must be positive".into());
    }
    let budget = BudgetInterval::new(budget_low, budget_high).map_err(|e| e.to_string())?;
    let data = DesignData {
        dim: 1,
        points: vec![0.0],
        v0: vec![v0],
        v1: vec![v1],
        prior_mix: vec![0.0],
    };
    let settings = DesignSettings {
        family: Some(FamilySpec::Constant),
        budget,
        gamma: 0.0,
        ..DesignSettings::default()
    };
    let out = solve_design(&data, &settings).map_err(|e| e.to_string())?;
    let e = out.values[0];
    let root = v1.sqrt() / (v0.sqrt() + v1.sqrt());
    Ok(Allocation {
        propensity: e,
        variance: v1 / e + v0 / (1.0 - e),
        variance_half: 2.0 * (v0 + v1),
        closed_form: root.clamp(budget_low, budget_high),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = designCurve)]
pub fn design_curve_js(
    heteroskedastic: bool,
    budget: f64,
    lipschitz: f64,
    current_weight: f64,
    prior_value: f64,
    points: usize,
) -> Result<String, JsValue> {
    to_js(design_curve(
        heteroskedastic,
        budget,
        lipschitz,
        current_weight,
        prior_value,
        points,
    ))
}

#[wasm_bindgen(js_name = poolingComparison)]
pub fn pooling_comparison_js(e1: f64, e2: f64, kappa1: f64, shift: bool) -> Result<String, JsValue> {
    to_js(pooling_comparison(e1, e2, kappa1, shift))
}

#[wasm_bindgen(js_name = neymanAllocation)]
pub fn neyman_allocation_js(v0: f64, v1: f64, budget_low: f64, budget_high: f64) -> Result<String, JsValue> {
    to_js(neyman_allocation(v0, v1, budget_low, budget_high))
}
