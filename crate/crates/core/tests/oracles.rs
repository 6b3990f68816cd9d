use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use batchpool::dgp::{DgpSpec, Estimand};
use batchpool::harness::bootstrap_ci;
use batchpool::nuisance::{fit_outcome_models, Smoother, TrainingData};
use batchpool::propensity::{mixture, Family, MixtureWeights, PropensityFn};
use batchpool::scores::{aipw_sb, epl_parts, Observation};
use batchpool::variance::{pooled_variance, v0_aipw, v0_epl, CovariateSample, Integrands};

const HET_AIPW_AT_0_2: f64 = 12.747920097001796;
const HET_EPL_AT_0_2: [[f64; 2]; 2] = [[12.41011269, 4.96404508], [4.96404508, 9.92809015]];

fn het_v(z: u8, x: &[f64]) -> f64 {
    let base = (x[0] / 2.0).exp();
    if z == 1 {
        2.0 * base
    } else {
        base
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[test]
fn two_batch_mixture_is_affine() {
    let id = PropensityFn::from_finite_values(&Family::Monotone, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
    let list = [PropensityFn::constant(0.2).unwrap(), id];
    let w = MixtureWeights::new(&[1.0, 1.0]).unwrap();
    for k in 0..=20 {
        let x = k as f64 / 20.0;
        let e = mixture(&list, &w, &[x]).unwrap();
        assert!((e - (0.1 + x / 2.0)).abs() < 1e-12, "{x}: {e}");
    }
}

#[test]
fn heteroskedastic_constant_design_variances() {
    let e = |_: &[f64]| 0.2;
    let tau = |_: &[f64]| 0.0;
    let f = Integrands {
        e: &e,
        v: &het_v,
        tau_sq: &tau,
    };
    let sample = CovariateSample::gaussian_probit(2048);
    let closed = 11.25 * (0.125f64).exp();
    assert!((closed - HET_AIPW_AT_0_2).abs() < 1e-12);
    let v = v0_aipw(&f, &sample).unwrap();
    assert!((v - HET_AIPW_AT_0_2).abs() < 1e-6 * HET_AIPW_AT_0_2, "{v}");

    let m = v0_epl(&f, &sample).unwrap();
    let s = 11.25 * (-0.125f64).exp();
    let closed = [[1.25 * s, 0.5 * s], [0.5 * s, s]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((closed[i][j] - HET_EPL_AT_0_2[i][j]).abs() < 1e-7);
            assert!((m[(i, j)] - closed[i][j]).abs() < 1e-5 * closed[i][j], "{m}");
        }
    }
    let pooled = pooled_variance(Estimand::Pl, &f, &sample).unwrap();
    assert!((pooled - m).abs().max() < 1e-12);
}

#[test]
fn quadrature_matches_adaptive_simpson() {
    let e_fn = |x: f64| 0.3 + 0.4 / (1.0 + (-x).exp());
    let e = |x: &[f64]| e_fn(x[0]);
    let tau = |x: &[f64]| 0.25 * x[0] * x[0];
    let f = Integrands {
        e: &e,
        v: &het_v,
        tau_sq: &tau,
    };
    let got = v0_aipw(&f, &CovariateSample::gaussian_probit(2048)).unwrap();
    let integrand = |x: f64| {
        let ex = e_fn(x);
        (het_v(1, &[x]) / ex + het_v(0, &[x]) / (1.0 - ex) + 0.25 * x * x) * normal_pdf(x)
    };
    let want = simpson(&integrand, -12.0, 12.0, 1e-11);
    assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
}

#[test]
fn scores_have_mean_zero_at_the_truth() {
    let spec = DgpSpec::standard(1, true);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 100_000;
    let table = spec.sample_batch(n, &mut rng).unwrap();
    let e = 0.3;
    let mut aipw = Vec::with_capacity(n);
    let mut epl = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let theta = DVector::from_vec(spec.theta0_pl().unwrap());
    for i in 0..n {
        let x = table.row(i);
        let z = u8::from(rng.random::<f64>() < e);
        let y = if z == 1 { table.y1[i] } else { table.y0[i] };
        let obs = Observation { x, z, y };
        let (m0, m1) = (spec.mean_unchecked(0, x), spec.mean_unchecked(1, x));
        aipw.push(aipw_sb(&obs, m0, m1, e, 0.0).unwrap() - spec.theta0_ate().unwrap());
        let parts = epl_parts(&obs, m0, het_v(0, x), het_v(1, x), e, &[1.0, x[0]]).unwrap();
        let s = parts.evaluate(&theta);
        epl[0].push(s[0]);
        epl[1].push(s[1]);
    }
    for (name, v) in [("aipw", &aipw), ("epl[0]", &epl[0]), ("epl[1]", &epl[1])] {
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sd / (n as f64).sqrt(), "{name}: mean {mean}, sd {sd}");
    }
}

#[test]
fn variance_smoother_recovers_heteroskedasticity() {
    let spec = DgpSpec::standard(1, true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let table = spec.sample_batch(n, &mut rng).unwrap();
    let mut data = TrainingData::new(1);
    for i in 0..n {
        let z = u8::from(rng.random::<f64>() < 0.5);
        data.push(table.row(i), z, if z == 1 { table.y1[i] } else { table.y0[i] });
    }
    let models = fit_outcome_models(&data, &Smoother::default_for_dim(1)).unwrap();
    for z in [0u8, 1] {
        let grid: Vec<f64> = (0..=30).map(|k| -1.5 + 0.1 * k as f64).collect();
        let mse = grid
            .iter()
            .map(|&x| (models.v[z as usize].predict(&[x]).ln() - het_v(z, &[x]).ln()).powi(2))
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mse.sqrt() < 0.25, "arm {z}: rms log error {}", mse.sqrt());
    }
}

#[test]
fn bootstrap_intervals_cover_the_true_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let meta = 200;
    let r = 400;
    let mut hits = 0;
    for _ in 0..meta {
        let base: Vec<f64> = (0..r).map(|_| -2.0 * rng.random::<f64>().ln()).collect();
        let other: Vec<f64> = (0..r).map(|_| -rng.random::<f64>().ln()).collect();
        let ci = bootstrap_ci(&[other, base], 1, 400, 0.9, &mut rng).unwrap();
        assert_eq!(ci[1], (1.0, 1.0));
        if ci[0].0 <= 2.0 && 2.0 <= ci[0].1 {
            hits += 1;
        }
    }
    let cov = hits as f64 / meta as f64;
    assert!((0.85..=0.95).contains(&cov), "coverage {cov}");
}

#[test]
fn bootstrap_intervals_shrink_with_more_replications() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut widths = Vec::new();
    for r in [100usize, 400, 1600] {
        let base: Vec<f64> = (0..r).map(|_| -2.0 * rng.random::<f64>().ln()).collect();
        let other: Vec<f64> = (0..r).map(|_| -rng.random::<f64>().ln()).collect();
        let ci = bootstrap_ci(&[other, base], 1, 1000, 0.9, &mut rng).unwrap();
        assert!(ci[0].0 <= 2.0 + 0.5 && ci[0].1 >= 2.0 - 0.5);
        widths.push(ci[0].1 - ci[0].0);
    }
    assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
}
