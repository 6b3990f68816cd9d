//! Concave design problems and their projected-gradient solver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::propensity::{BudgetInterval, Family, FeasibleSet, PropensityFn};
use crate::variance::{
    epl_integrand, epl_integrand_derivative, epl_information_values, linear_basis, psi_value,
    psi_value_and_grad, PsiKind, PsiValue,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    #[default]
    Aipw,
    Epl,
}

/// One design instance for batch `t` of one fold.
///
/// The optimised values `e_i` enter through the mixture
/// `ehat_i = prior_offset[i] + current_weight * e_i`.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub points: Vec<f64>,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub prior_offset: Vec<f64>,
    pub current_weight: f64,
    /// Row-major `n x p` basis values; `None` means `psi(x) = (1, x)`.
    pub psi: Option<Vec<f64>>,
    pub family: Family,
    pub budget: BudgetInterval,
    pub psi_kind: PsiKind,
    pub objective: ObjectiveKind,
}

impl DesignProblem {
    /// Problem without earlier batches (`ehat = e`).
    pub fn single_batch(
        dim: usize,
        points: Vec<f64>,
        v0: Vec<f64>,
        v1: Vec<f64>,
        family: Family,
        budget: BudgetInterval,
    ) -> Self {
        let n = v0.len();
        Self {
            dim,
            points,
            v0,
            v1,
            prior_offset: vec![0.0; n],
            current_weight: 1.0,
            psi: None,
            family,
            budget,
            psi_kind: PsiKind::AOpt,
            objective: ObjectiveKind::Aipw,
        }
    }

    pub fn n(&self) -> usize {
        self.v0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidSpec("design problem has no points".into()));
        }
        for (len, what) in [
            (self.v1.len(), "v1"),
            (self.prior_offset.len(), "prior_offset"),
            (self.points.len() / self.dim.max(1), "points"),
        ] {
            if len != n {
                return Err(Error::InvalidSpec(format!("{what} has {len} rows, expected {n}")));
            }
        }
        if let Some(psi) = &self.psi {
            if psi.len() % n != 0 || psi.is_empty() {
                return Err(Error::InvalidSpec("basis rows do not match the points".into()));
            }
        }
        if !(self.current_weight > 0.0 && self.current_weight <= 1.0) {
            return Err(Error::InvalidSpec("current batch weight must lie in (0, 1]".into()));
        }
        if self.v0.iter().chain(&self.v1).any(|v| !(*v > 0.0)) {
            return Err(Error::NonPositiveVariance {
                value: self.v0.iter().chain(&self.v1).copied().fold(f64::INFINITY, f64::min),
            });
        }
        Ok(())
    }

    fn basis(&self) -> (Vec<f64>, usize) {
        match &self.psi {
            Some(b) => (b.clone(), b.len() / self.n()),
            None => {
                let rows: Vec<f64> = (0..self.n())
                    .flat_map(|i| linear_basis(&self.points[i * self.dim..(i + 1) * self.dim]))
                    .collect();
                (rows, self.dim + 1)
            }
        }
    }

    fn mixed(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.prior_offset)
            .map(|(e, a)| a + self.current_weight * e)
            .collect()
    }
}

/// Cached pieces shared by repeated objective evaluations.
struct Evaluator<'a> {
    problem: &'a DesignProblem,
    basis: Vec<f64>,
    p: usize,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a DesignProblem) -> Self {
        let (basis, p) = match problem.objective {
            ObjectiveKind::Epl => problem.basis(),
            ObjectiveKind::Aipw => (Vec::new(), 1),
        };
        Self { problem, basis, p }
    }

    fn check(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.problem.n() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.n(),
                got: values.len(),
            });
        }
        let mixed = self.problem.mixed(values);
        if let Some(bad) = mixed.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::DivisionGuard { value: *bad });
        }
        Ok(mixed)
    }

    fn aipw_variance(&self, mixed: &[f64]) -> f64 {
        let pr = self.problem;
        let n = pr.n() as f64;
        mixed
            .iter()
            .zip(pr.v0.iter().zip(&pr.v1))
            .map(|(e, (v0, v1))| v1 / e + v0 / (1.0 - e))
            .sum::<f64>()
            / n
    }

    fn epl_info(&self, mixed: &[f64]) -> Result<DMatrix<f64>> {
        let pr = self.problem;
        let w = vec![1.0 / pr.n() as f64; pr.n()];
        epl_information_values(mixed, &pr.v0, &pr.v1, &self.basis, self.p, &w)
    }

    fn value(&self, values: &[f64]) -> Result<PsiValue> {
        let mixed = self.check(values)?;
        Ok(match self.problem.objective {
            ObjectiveKind::Aipw => {
                if mixed.iter().any(|e| *e <= 0.0 || *e >= 1.0) {
                    return Ok(PsiValue::NegInfinity);
                }
                let v = self.aipw_variance(&mixed);
                psi_value(self.problem.psi_kind, &DMatrix::from_element(1, 1, 1.0 / v))
            }
            ObjectiveKind::Epl => psi_value(self.problem.psi_kind, &self.epl_info(&mixed)?),
        })
    }

    fn value_and_grad(&self, values: &[f64]) -> Result<(f64, Vec<f64>)> {
        let pr = self.problem;
        let mixed = self.check(values)?;
        let n = pr.n() as f64;
        let w = pr.current_weight;
        match pr.objective {
            ObjectiveKind::Aipw => {
                if let Some(bad) = mixed.iter().find(|e| **e <= 0.0 || **e >= 1.0) {
                    return Err(Error::DivisionGuard { value: *bad });
                }
                let v = self.aipw_variance(&mixed);
                let (val, g) = psi_value_and_grad(pr.psi_kind, &DMatrix::from_element(1, 1, 1.0 / v))?;
                // d Psi / dV = Psi'(1/V) * (-1/V^2).
                let dpsi_dv = -g[(0, 0)] / (v * v);
                let grad = mixed
                    .iter()
                    .zip(pr.v0.iter().zip(&pr.v1))
                    .map(|(e, (v0, v1))| {
                        let dv = w * (-v1 / (e * e) + v0 / ((1.0 - e) * (1.0 - e))) / n;
                        dpsi_dv * dv
                    })
                    .collect();
                Ok((val, grad))
            }
            ObjectiveKind::Epl => {
                let info = self.epl_info(&mixed)?;
                let (val, g) = psi_value_and_grad(pr.psi_kind, &info)?;
                let p = self.p;
                let grad = (0..pr.n())
                    .map(|i| {
                        let row = &self.basis[i * p..(i + 1) * p];
                        let mut quad = 0.0;
                        for a in 0..p {
                            for b in 0..p {
                                quad += row[a] * g[(a, b)] * row[b];
                            }
                        }
                        w * epl_integrand_derivative(mixed[i], pr.v0[i], pr.v1[i]) * quad / n
                    })
                    .collect();
                Ok((val, grad))
            }
        }
    }
}

/// Objective value at point values `values`; `NegInfinity` in the singular region.
pub fn objective_value(values: &[f64], problem: &DesignProblem) -> Result<PsiValue> {
    Evaluator::new(problem).value(values)
}

/// Objective and its gradient with respect to the point values.
pub fn objective_and_gradient(values: &[f64], problem: &DesignProblem) -> Result<(f64, Vec<f64>)> {
    Evaluator::new(problem).value_and_grad(values)
}

/// Pointwise EPL weight at the mixed propensity, exposed for diagnostics.
pub fn epl_weights(values: &[f64], problem: &DesignProblem) -> Vec<f64> {
    problem
        .mixed(values)
        .iter()
        .zip(problem.v0.iter().zip(&problem.v1))
        .map(|(e, (v0, v1))| epl_integrand(*e, *v0, *v1))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Tolerance on the projected-gradient norm.
    pub tol: f64,
    /// Relative tolerance on the duality gap `max_F <g, d' - d>`, which bounds
    /// `f* - f`. Only checked for families with a cheap linear maximizer.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Lower clip used for the constant starting point.
    pub gamma: f64,
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            gap_tol: 1e-5,
            max_iter: 5000,
            gamma: 0.01,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    /// Iteration cap reached before the tolerance; the iterate is still feasible.
    IterationCap,
    /// The line search could not make progress; the iterate is still feasible.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub pg_norm: f64,
    pub status: SolverStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DesignSolution {
    /// Decision vector of the feasible set (see [`FeasibleSet`]).
    pub decision: Vec<f64>,
    /// Point values `e(x_i)`.
    pub values: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

impl DesignSolution {
    pub fn propensity(&self, set: &FeasibleSet) -> Result<PropensityFn> {
        set.to_propensity(&self.decision)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `<grad f(cand), cand - d>`, ignoring the component along the budget normal
/// when both points sit on the same budget bound: there the displacement has
/// no true normal component and the computed one is root-finding noise.
fn ascent_certificate(set: &FeasibleSet, d: &[f64], cand: &[f64], gc: &[f64], disp: &[f64]) -> f64 {
    let raw = dot(gc, disp);
    if raw >= 0.0 {
        return raw;
    }
    match (set.active_bound(d, 1e-9), set.active_bound(cand, 1e-9)) {
        (Some(a), Some(b)) if a == b => {
            let nrm = set.budget_normal();
            let coef = dot(gc, &nrm) / dot(&nrm, &nrm);
            raw - coef * dot(&nrm, disp)
        }
        _ => raw,
    }
}

fn gap_converged(set: &FeasibleSet, g: &[f64], d: &[f64], f: f64, opts: &SolverOptions) -> bool {
    set.linear_max(g)
        .is_some_and(|lm| lm - dot(g, d) <= opts.gap_tol * f.abs().max(1.0))
}

/// Accelerated projected gradient ascent with backtracking on the curvature
/// estimate and function-value restarts.
fn accelerated(set: &FeasibleSet, eval: &Evaluator, start: Vec<f64>, opts: &SolverOptions, max_iter: usize) -> Result<DesignSolution> {
    let mut x = start;
    let mut fx = match eval.value(&set.values(&x))? {
        PsiValue::Finite(v) => v,
        PsiValue::NegInfinity => return Err(Error::Singular("design objective is singular at the starting point".into())),
    };
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut status = SolverStatus::IterationCap;
    let mut pg_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut trace = opts.record_trace.then(|| vec![fx]);
    for it in 0..max_iter {
        iterations = it;
        let yv = set.values(&y);
        let (fy, gy) = match eval.value(&yv)? {
            PsiValue::Finite(_) => {
                let (v, gp) = eval.value_and_grad(&yv)?;
                (v, set.pullback(&gp))
            }
            PsiValue::NegInfinity => {
                y.clone_from(&x);
                t = 1.0;
                continue;
            }
        };
        if it % 10 == 0 {
            let probe = if y == x { gy.clone() } else { set.pullback(&eval.value_and_grad(&set.values(&x))?.1) };
            let unit = set.project(&axpy(&x, 1.0, &set.precondition(&probe)))?;
            pg_norm = set.metric_norm_sq(&sub(&unit, &x)).sqrt();
            if pg_norm <= opts.tol || gap_converged(set, &probe, &x, fx, opts) {
                status = SolverStatus::Converged;
                break;
            }
        }
        let gh = set.precondition(&gy);
        let (xn, fxn) = loop {
            let cand = set.project(&axpy(&y, 1.0 / lip, &gh))?;
            let disp = sub(&cand, &y);
            if let PsiValue::Finite(fc) = eval.value(&set.values(&cand))? {
                let model = fy + dot(&gy, &disp) - 0.5 * lip * set.metric_norm_sq(&disp);
                if fc >= model - 1e-12 * (1.0 + fy.abs()) {
                    break (cand, fc);
                }
            }
            lip *= 2.0;
            if lip > 1e20 {
                return Err(Error::Singular("curvature estimate diverged".into()));
            }
        };
        if fxn < fx {
            y.clone_from(&x);
            t = 1.0;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / tn;
        y = xn.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = xn;
        fx = fxn;
        t = tn;
        lip *= 0.9;
        if let Some(tr) = trace.as_mut() {
            tr.push(fx);
        }
        iterations = it + 1;
    }
    let values = set.values(&x);
    Ok(DesignSolution {
        decision: x,
        values,
        diagnostics: SolverDiagnostics {
            iterations,
            objective: fx,
            pg_norm,
            status,
            trace,
        },
    })
}

/// Spectral projected gradient ascent: Barzilai-Borwein steps with a
/// nonmonotone Armijo search along the projected direction.
///
fn spectral(set: &FeasibleSet, eval: &Evaluator, start: Vec<f64>, opts: &SolverOptions, max_iter: usize) -> Result<DesignSolution> {
    let mut d = start;
    let mut values = set.values(&d);
    let (mut f, g_pts) = match eval.value(&values)? {
        PsiValue::Finite(_) => eval.value_and_grad(&values)?,
        PsiValue::NegInfinity => {
            return Err(Error::Singular("design objective is singular at the starting point".into()))
        }
    };
    let mut g = set.pullback(&g_pts);
    let mut trace = opts.record_trace.then(|| vec![f]);
    let mut alpha = 1.0;
    let mut status = SolverStatus::IterationCap;
    let mut pg_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut history = std::collections::VecDeque::from([f]);
    let (mut best_d, mut best_values, mut best_f) = (d.clone(), values.clone(), f);
    const ARMIJO: f64 = 1e-4;
    const MEMORY: usize = 10;

    for it in 0..max_iter {
        iterations = it;
        let gh = set.precondition(&g);
        let unit = set.project(&axpy(&d, 1.0, &gh))?;
        pg_norm = set.metric_norm_sq(&sub(&unit, &d)).sqrt();
        if pg_norm <= opts.tol || (it % 10 == 0 && gap_converged(set, &g, &d, f, opts)) {
            status = SolverStatus::Converged;
            break;
        }
        let target = if alpha == 1.0 { unit } else { set.project(&axpy(&d, alpha, &gh))? };
        let dir = sub(&target, &d);
        let slope = dot(&g, &dir);
        let f_ref = history.iter().copied().fold(f64::INFINITY, f64::min);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = axpy(&d, lambda, &dir);
            let cand_vals = set.values(&cand);
            if let PsiValue::Finite(fc) = eval.value(&cand_vals)? {
                if fc >= f_ref + ARMIJO * lambda * slope && (fc >= f || lambda * slope > 1e-10 * (1.0 + f.abs())) {
                    accepted = Some((cand, cand_vals, fc, None));
                    break;
                }
                // Near the optimum objective differences drown in rounding error.
                // Concavity gives f(cand) >= f(d) + <grad f(cand), cand - d>, so a
                // nonnegative inner product certifies ascent without differencing.
                if lambda * slope <= 1e-10 * (1.0 + f.abs()) {
                    let (_, gp) = eval.value_and_grad(&cand_vals)?;
                    let gc = set.pullback(&gp);
                    let disp = sub(&cand, &d);
                    if ascent_certificate(set, &d, &cand, &gc, &disp) >= 0.0 {
                        accepted = Some((cand, cand_vals, fc.max(f), Some(gc)));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        let Some((cand, cand_vals, fc, g_cached)) = accepted else {
            status = SolverStatus::Stalled;
            break;
        };
        let g_new = match g_cached {
            Some(gc) => gc,
            None => set.pullback(&eval.value_and_grad(&cand_vals)?.1),
        };
        let s = sub(&cand, &d);
        let sy = -dot(&s, &sub(&g_new, &g));
        let ss = set.metric_norm_sq(&s);
        alpha = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (alpha * 2.0).min(1e12) };
        let stagnant = ss == 0.0;
        d = cand;
        values = cand_vals;
        f = fc;
        g = g_new;
        if f >= best_f {
            best_d.clone_from(&d);
            best_values.clone_from(&values);
            best_f = f;
        }
        history.push_back(f);
        if history.len() > MEMORY {
            history.pop_front();
        }
        if let Some(t) = trace.as_mut() {
            t.push(f);
        }
        if stagnant {
            status = SolverStatus::Stalled;
            break;
        }
        iterations = it + 1;
    }
    if best_f > f {
        d = best_d;
        values = best_values;
        f = best_f;
    }
    Ok(DesignSolution {
        decision: d,
        values,
        diagnostics: SolverDiagnostics {
            iterations,
            objective: f,
            pg_norm,
            status,
            trace,
        },
    })
}

/// Maximizes the design objective over `set`.
///
/// Runs spectral projected gradient first and, if that has not converged after
/// a few hundred iterations, continues with the accelerated method, which copes
/// better with the ill-conditioned coefficient spaces of large atom families.
/// `init` is a decision vector of `set`; it is projected before use.
pub fn maximize_design_in(
    set: &FeasibleSet,
    problem: &DesignProblem,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<DesignSolution> {
    const SWITCH: usize = 200;
    problem.validate()?;
    if set.n_points() != problem.n() {
        return Err(Error::DimensionMismatch {
            expected: problem.n(),
            got: set.n_points(),
        });
    }
    let eval = Evaluator::new(problem);
    let start = match init {
        Some(x) => set.project(x)?,
        None => set.initial(opts.gamma)?,
    };
    let first = spectral(set, &eval, start, opts, opts.max_iter.min(SWITCH))?;
    if first.diagnostics.status != SolverStatus::IterationCap || opts.max_iter <= SWITCH {
        return Ok(first);
    }
    let mut second = accelerated(set, &eval, first.decision.clone(), opts, opts.max_iter - SWITCH)?;
    if second.diagnostics.objective < first.diagnostics.objective {
        second.decision = first.decision;
        second.values = first.values;
        second.diagnostics.objective = first.diagnostics.objective;
    }
    second.diagnostics.iterations += first.diagnostics.iterations;
    if let (Some(a), Some(b)) = (first.diagnostics.trace, second.diagnostics.trace.as_mut()) {
        let mut joined = a;
        joined.extend(b.iter().skip(1));
        *b = joined;
    }
    Ok(second)
}

/// Builds the feasible set and solves.
pub fn maximize_design(problem: &DesignProblem, init: Option<&[f64]>, opts: &SolverOptions) -> Result<DesignSolution> {
    problem.validate()?;
    let set = FeasibleSet::new(&problem.family, &problem.points, problem.dim, problem.budget)?;
    maximize_design_in(&set, problem, init, opts)
}

/// Exhaustive search over the grid `{0, 1/(r-1), ..., 1}` in decision space,
/// restricted to the feasible set. Decision dimension must be at most 5.
pub fn brute_force_design(problem: &DesignProblem, grid_resolution: usize) -> Result<DesignSolution> {
    problem.validate()?;
    let set = FeasibleSet::new(&problem.family, &problem.points, problem.dim, problem.budget)?;
    let k = set.decision_dim();
    if k > 5 {
        return Err(Error::InvalidSpec(format!("brute force supports at most 5 coordinates, got {k}")));
    }
    if grid_resolution < 2 {
        return Err(Error::InvalidSpec("grid resolution must be at least 2".into()));
    }
    let eval = Evaluator::new(problem);
    let r = grid_resolution;
    let grid: Vec<f64> = (0..r).map(|j| j as f64 / (r - 1) as f64).collect();
    let total = r.pow(k as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut d = vec![0.0; k];
    for code in 0..total {
        let mut c = code;
        for slot in d.iter_mut().rev() {
            *slot = grid[c % r];
            c /= r;
        }
        if !set.contains(&d, 1e-12) {
            continue;
        }
        let vals = set.values(&d);
        if let Ok(PsiValue::Finite(v)) = eval.value(&vals) {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, d.clone()));
            }
        }
    }
    let (obj, decision) = best.ok_or_else(|| Error::Infeasible("no feasible grid point".into()))?;
    Ok(DesignSolution {
        values: set.values(&decision),
        decision,
        diagnostics: SolverDiagnostics {
            iterations: total,
            objective: obj,
            pg_norm: f64::NAN,
            status: SolverStatus::Converged,
            trace: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_point(e_budget: BudgetInterval, v0: f64, v1: f64) -> DesignProblem {
        DesignProblem::single_batch(1, vec![0.0], vec![v0], vec![v1], Family::Constant, e_budget)
    }

    #[test]
    fn symmetric_point() {
        let p = one_point(BudgetInterval::unconstrained(), 1.0, 1.0);
        let (v, g) = objective_and_gradient(&[0.5], &p).unwrap();
        assert!((v + 4.0).abs() < 1e-12);
        assert!(g[0].abs() < 1e-12);
        let (_, g) = objective_and_gradient(&[0.2], &p).unwrap();
        assert!((g[0] - 23.4375).abs() < 1e-9, "{}", g[0]);
    }

    #[test]
    fn neyman_allocation() {
        let p = one_point(BudgetInterval::unconstrained(), 1.0, 4.0);
        let s = maximize_design(&p, None, &SolverOptions::default()).unwrap();
        assert!((s.values[0] - 2.0 / 3.0).abs() < 1e-6, "{:?}", s.values);
        assert_eq!(s.diagnostics.status, SolverStatus::Converged);
    }

    #[test]
    fn homoskedastic_equality_budget() {
        let pts: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        for fam in [Family::Constant, Family::Monotone, Family::Lipschitz { l: 1.0 }] {
            let p = DesignProblem::single_batch(
                1,
                pts.clone(),
                vec![1.0; 30],
                vec![1.0; 30],
                fam,
                BudgetInterval::equality(0.2).unwrap(),
            );
            let s = maximize_design(&p, None, &SolverOptions::default()).unwrap();
            assert!(s.values.iter().all(|v| (v - 0.2).abs() < 1e-9));
        }
    }

    #[test]
    fn brute_force_singleton_budget() {
        let p = one_point(BudgetInterval::equality(0.3).unwrap(), 1.0, 9.0);
        let s = brute_force_design(&p, 41).unwrap();
        assert!((s.values[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn brute_force_symmetric() {
        let p = DesignProblem::single_batch(
            1,
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            Family::Lipschitz { l: 1.0 },
            BudgetInterval::new(0.0, 0.3).unwrap(),
        );
        let s = brute_force_design(&p, 41).unwrap();
        assert!((s.values[0] - s.values[1]).abs() < 1e-12);
    }

    #[test]
    fn scalarizations_agree_for_aipw() {
        let pts: Vec<f64> = (0..40).map(|i| i as f64 / 20.0 - 1.0).collect();
        let v0: Vec<f64> = pts.iter().map(|x| (x / 2.0).exp()).collect();
        let v1: Vec<f64> = v0.iter().map(|v| 2.0 * v).collect();
        let mut p = DesignProblem::single_batch(
            1,
            pts,
            v0,
            v1,
            Family::Monotone,
            BudgetInterval::equality(0.2).unwrap(),
        );
        p.prior_offset = vec![0.1; 40];
        p.current_weight = 0.5;
        let a = maximize_design(&p, None, &SolverOptions::default()).unwrap();
        p.psi_kind = PsiKind::DOpt;
        let b = maximize_design(&p, None, &SolverOptions::default()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
