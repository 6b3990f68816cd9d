mod common;

use proptest::prelude::*;

use batchpool::propensity::{BudgetInterval, Family, FeasibleSet};
use batchpool::variance::{
    aipw_integrand, epl_integrand, epl_integrand_derivative, psi_value, PsiKind,
};

/// Half-space `a'x <= b`.
struct HalfSpace {
    a: Vec<f64>,
    b: f64,
}

impl HalfSpace {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let ax: f64 = self.a.iter().zip(x).map(|(a, v)| a * v).sum();
        if ax <= self.b {
            return x.to_vec();
        }
        let aa: f64 = self.a.iter().map(|a| a * a).sum();
        let t = (ax - self.b) / aa;
        x.iter().zip(&self.a).map(|(v, a)| v - t * a).collect()
    }
}

/// Dykstra's alternating projections onto a box intersected with half-spaces.
fn dykstra(y: &[f64], lo: f64, hi: f64, halves: &[HalfSpace]) -> Vec<f64> {
    let n = y.len();
    let m = halves.len() + 1;
    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; n]; m];
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for s in 0..m {
            let z: Vec<f64> = x.iter().zip(&incr[s]).map(|(a, b)| a + b).collect();
            let p: Vec<f64> = if s == 0 {
                z.iter().map(|v| v.clamp(lo, hi)).collect()
            } else {
                halves[s - 1].project(&z)
            };
            let next: Vec<f64> = z.iter().zip(&p).map(|(a, b)| a - b).collect();
            moved = moved.max(dist_sq(&next, &incr[s])).max(dist_sq(&p, &x));
            incr[s] = next;
            x = p;
        }
        if moved < 1e-28 {
            break;
        }
    }
    x
}

fn budget_halves(a: Vec<f64>, budget: BudgetInterval) -> Vec<HalfSpace> {
    vec![
        HalfSpace {
            a: a.clone(),
            b: budget.m_high,
        },
        HalfSpace {
            a: a.iter().map(|v| -v).collect(),
            b: -budget.m_low,
        },
    ]
}

fn distinct_points(raw: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = raw.to_vec();
    pts.sort_by(f64::total_cmp);
    for i in 1..pts.len() {
        if pts[i] - pts[i - 1] < 0.05 {
            pts[i] = pts[i - 1] + 0.05;
        }
    }
    pts
}

fn budget_strategy() -> impl Strategy<Value = BudgetInterval> {
    (0.05f64..0.95, 0.0f64..0.3).prop_map(|(lo, w)| BudgetInterval::new(lo, (lo + w).min(1.0)).unwrap())
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monotone_projection_matches_dykstra(
        raw in prop::collection::vec(-2.0f64..2.0, 2..7),
        y in prop::collection::vec(-0.5f64..1.5, 7),
        budget in budget_strategy(),
    ) {
        let pts = distinct_points(&raw);
        let n = pts.len();
        let y = &y[..n];
        let set = FeasibleSet::new(&Family::Monotone, &pts, 1, budget).unwrap();
        let p = set.project(y).unwrap();
        let mut halves: Vec<HalfSpace> = (0..n - 1)
            .map(|i| {
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                a[i + 1] = -1.0;
                HalfSpace { a, b: 0.0 }
            })
            .collect();
        halves.extend(budget_halves(vec![1.0 / n as f64; n], budget));
        let q = dykstra(y, 0.0, 1.0, &halves);
        prop_assert!(dist_sq(&p, y) <= dist_sq(&q, y) + 1e-9, "{p:?} vs {q:?}");
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-5, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn lipschitz_projection_matches_dykstra(
        raw in prop::collection::vec(-1.0f64..1.0, 2..7),
        y in prop::collection::vec(-0.5f64..1.5, 7),
        l in 0.2f64..3.0,
        budget in budget_strategy(),
    ) {
        let pts = distinct_points(&raw);
        let n = pts.len();
        let y = &y[..n];
        let set = FeasibleSet::new(&Family::Lipschitz { l }, &pts, 1, budget).unwrap();
        let p = set.project(y).unwrap();
        let mut halves = Vec::new();
        for i in 0..n - 1 {
            let gap = l * (pts[i + 1] - pts[i]);
            for s in [1.0, -1.0] {
                let mut a = vec![0.0; n];
                a[i + 1] = s;
                a[i] = -s;
                halves.push(HalfSpace { a, b: gap });
            }
        }
        halves.extend(budget_halves(vec![1.0 / n as f64; n], budget));
        let q = dykstra(y, 0.0, 1.0, &halves);
        prop_assert!(dist_sq(&p, y) <= dist_sq(&q, y) + 1e-9, "{p:?} vs {q:?}");
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-5, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn coefficient_projection_matches_dykstra(
        pts in prop::collection::vec(-2.0f64..2.0, 3..8),
        y in prop::collection::vec(-0.5f64..1.0, 5),
        lo in 0.2f64..0.5,
    ) {
        let atoms = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 2.0],
            vec![1.0, -2.0],
            vec![-2.0, 0.0],
        ];
        let family = Family::ExpitHull { atoms: atoms.clone() };
        let n = pts.len();
        let c: Vec<f64> = atoms
            .iter()
            .map(|a| pts.iter().map(|x| 1.0 / (1.0 + (-(a[0] + a[1] * x)).exp())).sum::<f64>() / n as f64)
            .collect();
        let budget = BudgetInterval::new(lo, lo + 0.05).unwrap();
        let set = FeasibleSet::new(&family, &pts, 1, budget).unwrap();
        let p = set.project(&y).unwrap();
        let mut halves = vec![HalfSpace { a: vec![1.0; 5], b: 1.0 }];
        halves.extend(budget_halves(c, budget));
        let q = dykstra(&y, 0.0, f64::INFINITY, &halves);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-5, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn projection_is_idempotent_and_feasible(
        raw in prop::collection::vec(-2.0f64..2.0, 2..30),
        y in prop::collection::vec(-1.0f64..2.0, 30),
        budget in budget_strategy(),
        which in 0usize..4,
    ) {
        let pts = distinct_points(&raw);
        let n = pts.len();
        let family = match which {
            0 => Family::Monotone,
            1 => Family::Lipschitz { l: 1.0 },
            2 => Family::Constant,
            _ => Family::Binned { cuts: vec![-0.5, 0.5] },
        };
        let set = FeasibleSet::new(&family, &pts, 1, budget).unwrap();
        let d = set.decision_dim();
        let y: Vec<f64> = y.iter().cycle().take(d).copied().collect();
        let _ = n;
        let p = match set.project(&y) {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        prop_assert!(set.contains(&p, 1e-8));
        let pp = set.project(&p).unwrap();
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn psi_is_monotone_in_loewner_order(seed in 0u64..1_000_000, p in 1usize..5, kind in 0usize..2) {
        let kind = if kind == 0 { PsiKind::AOpt } else { PsiKind::DOpt };
        let a = batchpool::variance::random_spd(p, seed);
        let extra = batchpool::variance::random_spd(p, seed + 1) * 0.3;
        let b = &a + extra;
        let fa = psi_value(kind, &a).finite().unwrap();
        let fb = psi_value(kind, &b).finite().unwrap();
        prop_assert!(fa <= fb + 1e-10, "{fa} > {fb}");
    }

    #[test]
    fn psi_is_concave(seed in 0u64..1_000_000, p in 1usize..5, lambda in 0.01f64..0.99, kind in 0usize..2) {
        let kind = if kind == 0 { PsiKind::AOpt } else { PsiKind::DOpt };
        let a = batchpool::variance::random_spd(p, seed);
        let b = batchpool::variance::random_spd(p, seed + 7);
        let mix = &a * lambda + &b * (1.0 - lambda);
        let lhs = psi_value(kind, &mix).finite().unwrap();
        let rhs = lambda * psi_value(kind, &a).finite().unwrap()
            + (1.0 - lambda) * psi_value(kind, &b).finite().unwrap();
        prop_assert!(lhs >= rhs - 1e-10, "{lhs} < {rhs}");
    }

    #[test]
    fn integrands_are_concave_on_grids(v0 in 0.1f64..5.0, v1 in 0.1f64..5.0) {
        let h = 1e-3;
        let mut e = 0.01;
        while e + 2.0 * h < 0.99 {
            let a = aipw_integrand(e, v0, v1) - 2.0 * aipw_integrand(e + h, v0, v1) + aipw_integrand(e + 2.0 * h, v0, v1);
            let bound = -2.0 * (v0 + v1) * h * h;
            prop_assert!(a <= bound * 0.99, "AIPW second difference {a} at {e}");
            let g = epl_integrand(e, v0, v1) - 2.0 * epl_integrand(e + h, v0, v1) + epl_integrand(e + 2.0 * h, v0, v1);
            prop_assert!(g < 0.0, "EPL second difference {g} at {e}");
            e += h;
        }
    }

    #[test]
    fn epl_derivative_matches_differences(e in 0.05f64..0.95, v0 in 0.1f64..5.0, v1 in 0.1f64..5.0) {
        let h = 1e-6;
        let fd = (epl_integrand(e + h, v0, v1) - epl_integrand(e - h, v0, v1)) / (2.0 * h);
        let an = epl_integrand_derivative(e, v0, v1);
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
    }
}

#[test]
fn objective_gradient_matches_central_differences() {
    for seed in 0..50u64 {
        let err = common::objective_gradient_error(seed);
        assert!(err < 1e-5, "instance {seed}: relative error {err}");
    }
}

#[test]
fn psi_gradient_matches_central_differences() {
    for seed in 0..50u64 {
        let err = common::psi_gradient_error(seed);
        assert!(err < 1e-5, "instance {seed}: relative error {err}");
    }
}
