#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use batchpool::optimizer::{objective_and_gradient, DesignProblem, ObjectiveKind};
use batchpool::propensity::{BudgetInterval, Family};
use batchpool::variance::{psi_value, psi_value_and_grad, random_spd, PsiKind};

const STEP: f64 = 1e-6;

/// Largest absolute difference relative to the largest magnitude of `b`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// A random design problem with a mixture offset, plus an interior point.
pub fn random_problem(seed: u64, objective: ObjectiveKind, kind: PsiKind) -> (DesignProblem, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..15);
    let dim = rng.random_range(1..3);
    let points: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    let v0: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>() * 3.0).collect();
    let v1: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>() * 3.0).collect();
    let w = 0.3 + 0.7 * rng.random::<f64>();
    let prior: Vec<f64> = (0..n).map(|_| (1.0 - w) * (0.1 + 0.8 * rng.random::<f64>())).collect();
    let values: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
    let problem = DesignProblem {
        dim,
        points,
        v0,
        v1,
        prior_offset: prior,
        current_weight: w,
        psi: None,
        family: Family::Monotone,
        budget: BudgetInterval::unconstrained(),
        psi_kind: kind,
        objective,
    };
    (problem, values)
}

/// Relative error of the analytic design-objective gradient against central
/// differences on instance `seed`, cycling through objectives and scalarizations.
pub fn objective_gradient_error(seed: u64) -> f64 {
    let objective = if seed % 2 == 0 { ObjectiveKind::Aipw } else { ObjectiveKind::Epl };
    let kind = if seed % 4 < 2 { PsiKind::AOpt } else { PsiKind::DOpt };
    let (problem, values) = random_problem(seed, objective, kind);
    let (_, grad) = objective_and_gradient(&values, &problem).unwrap();
    let fd: Vec<f64> = (0..values.len())
        .map(|i| {
            let mut up = values.clone();
            let mut dn = values.clone();
            up[i] += STEP;
            dn[i] -= STEP;
            let fu = objective_and_gradient(&up, &problem).unwrap().0;
            let fl = objective_and_gradient(&dn, &problem).unwrap().0;
            (fu - fl) / (2.0 * STEP)
        })
        .collect();
    rel_err(&grad, &fd)
}

/// Same check for the gradient of the information scalarization, using
/// symmetric perturbations of a random SPD matrix.
pub fn psi_gradient_error(seed: u64) -> f64 {
    let p = 1 + (seed % 4) as usize;
    let kind = if seed % 2 == 0 { PsiKind::AOpt } else { PsiKind::DOpt };
    let m = random_spd(p, 1000 + seed);
    let (_, g) = psi_value_and_grad(kind, &m).unwrap();
    let mut an = Vec::new();
    let mut fd = Vec::new();
    for i in 0..p {
        for j in i..p {
            let mut e = DMatrix::zeros(p, p);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let fu = psi_value(kind, &(&m + &e * STEP)).finite().unwrap();
            let fl = psi_value(kind, &(&m - &e * STEP)).finite().unwrap();
            fd.push((fu - fl) / (2.0 * STEP));
            an.push(if i == j { g[(i, i)] } else { 2.0 * g[(i, j)] });
        }
    }
    rel_err(&an, &fd)
}
