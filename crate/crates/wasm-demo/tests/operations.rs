use batchpool_demo::{design_curve, neyman_allocation, pooling_comparison};

#[test]
fn neyman_matches_square_root_rule() {
    let a = neyman_allocation(1.0, 4.0, 0.0, 1.0).unwrap();
    assert!((a.propensity - 2.0 / 3.0).abs() < 1e-6, "{a:?}");
    assert!((a.closed_form - 2.0 / 3.0).abs() < 1e-12);
    assert!(a.variance <= a.variance_half);
}

#[test]
fn neyman_respects_budget() {
    let a = neyman_allocation(1.0, 4.0, 0.2, 0.5).unwrap();
    assert!((a.propensity - 0.5).abs() < 1e-6, "{a:?}");
}

#[test]
fn neyman_rejects_bad_input() {
    assert!(neyman_allocation(0.0, 1.0, 0.0, 1.0).is_err());
    assert!(neyman_allocation(1.0, 1.0, 0.6, 0.4).is_err());
}

#[test]
fn counterexample_values() {
    let r = pooling_comparison(0.5, 0.5, 0.5, true).unwrap();
    assert!((r.pooled - 7.0 / 3.0).abs() < 1e-6);
    assert!((r.aggregated - 16.0 / 7.0).abs() < 1e-6);
    assert!(r.pooled_gain < 1.0);
}

#[test]
fn pooling_never_loses_without_shift() {
    for (e1, e2) in [(0.2, 0.7), (0.5, 0.5), (0.1, 0.9)] {
        let r = pooling_comparison(e1, e2, 0.3, false).unwrap();
        assert!(r.pooled <= r.aggregated + 1e-9, "{e1} {e2}: {r:?}");
    }
}

#[test]
fn design_curve_meets_budget_and_beats_rct() {
    let c = design_curve(true, 0.2, 1.0, 0.5, 0.2, 200).unwrap();
    let mean: f64 = c.e.iter().sum::<f64>() / c.e.len() as f64;
    assert!((mean - 0.2).abs() < 1e-6);
    assert!(c.rel_eff >= 1.0 - 1e-9);
    assert!(c.e.iter().all(|e| (0.0..=1.0).contains(e)));
}

#[test]
fn design_curve_homoskedastic_is_flat() {
    let c = design_curve(false, 0.3, 1.0, 0.5, 0.3, 100).unwrap();
    for e in &c.e {
        assert!((e - 0.3).abs() < 1e-4, "{e}");
    }
}

#[test]
fn design_curve_validates_inputs() {
    assert!(design_curve(true, 0.2, 1.0, 0.5, 0.2, 3).is_err());
    assert!(design_curve(true, 0.2, 1.0, 0.5, 1.5, 100).is_err());
}
