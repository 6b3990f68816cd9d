use std::process::Command;

use batchpool::csbae::{
    aggregated_estimate, audit, design_step, input_hash, output_hash, pooled_estimate, run_experiment,
    run_with_inputs, draw_inputs, verify_designs, DesignKind, ExperimentConfig, ExperimentRecord, NuisanceMode,
};
use batchpool::dgp::{DgpSpec, Estimand};
use batchpool::harness::{
    render_report, replay, run_monte_carlo, Method, ReplayOptions, ReportFormat, SimConfig, SimulationTable,
};
use batchpool::harness::{DesignChoice, EstimatorChoice};
use batchpool::nuisance::{oracle_for_batch, oracle_for_record};
use batchpool::propensity::{BudgetInterval, FamilySpec};
use batchpool::rng::StreamSeed;
use batchpool::Error;

fn small_config(het: bool, n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::standard(DgpSpec::standard(1, het), Estimand::Ate);
    cfg.batch_sizes = vec![n, n];
    cfg
}

fn fixed_oracle(n: usize, e: [f64; 2], k: usize) -> ExperimentConfig {
    let mut cfg = small_config(true, n);
    cfg.design = DesignKind::Fixed;
    cfg.nuisance = NuisanceMode::Oracle;
    cfg.folds = k;
    cfg.budgets = e.iter().map(|v| BudgetInterval::equality(*v).unwrap()).collect();
    cfg
}

/// `theta*` written out unit by unit from the true means and the constant
/// mixture propensity.
fn direct_aipw(record: &ExperimentRecord, spec: &DgpSpec) -> f64 {
    let n = record.n_total() as f64;
    let e: f64 = record
        .batches
        .iter()
        .map(|b| b.len() as f64 / n * b.propensities[0].evaluate_unchecked(&[0.0]))
        .sum();
    let mut total = 0.0;
    for b in &record.batches {
        for i in 0..b.len() {
            let x = b.row(i);
            let m0 = spec.mean_unchecked(0, x);
            let m1 = spec.mean_unchecked(1, x);
            let z = f64::from(b.z[i]);
            total += m1 - m0 + z * (b.y[i] - m1) / e - (1.0 - z) * (b.y[i] - m0) / (1.0 - e);
        }
    }
    total / n
}

#[test]
fn experiments_are_deterministic_and_audit_clean() {
    let cfg = small_config(true, 300);
    let a = run_experiment(&cfg, StreamSeed::new(11, 2)).unwrap();
    let b = run_experiment(&cfg, StreamSeed::new(11, 2)).unwrap();
    assert_eq!(a, b);
    let c = run_experiment(&cfg, StreamSeed::new(11, 3)).unwrap();
    assert_ne!(a.batches[1].y, c.batches[1].y);
    assert!(audit(&a).unwrap().passed());
    assert!(verify_designs(&a).unwrap());
}

#[test]
fn tampered_records_fail_the_audit() {
    let cfg = small_config(true, 200);
    let mut rec = run_experiment(&cfg, StreamSeed::new(4, 0)).unwrap();
    let i = rec.batches[1].z.iter().position(|z| *z == 1).unwrap();
    rec.batches[1].z[i] = 0;
    let report = audit(&rec).unwrap();
    assert_eq!(report.treatments.len(), 1);
    let mut rec = run_experiment(&cfg, StreamSeed::new(4, 0)).unwrap();
    rec.batches[0].y[0] += 1.0;
    assert!(!audit(&rec).unwrap().provenance.is_empty());
}

#[test]
fn fold_designs_ignore_other_folds() {
    let cfg = small_config(true, 300);
    let rec = run_experiment(&cfg, StreamSeed::new(8, 0)).unwrap();
    let b2 = &rec.batches[1];
    let mut prev = rec.batches[..1].to_vec();
    for i in 0..prev[0].len() {
        if prev[0].folds[i] == 0 {
            prev[0].y[i] += 5.0 * (i as f64).sin();
        }
    }
    let same = design_step(&cfg, &prev, &b2.x, &b2.folds, 1, 1).unwrap();
    assert_eq!(output_hash(&same.propensity), b2.output_hashes[1]);
    assert_eq!(input_hash(&cfg, &prev, &b2.x, &b2.folds, 1, 1), b2.input_hashes[1]);
    let moved = design_step(&cfg, &prev, &b2.x, &b2.folds, 1, 0).unwrap();
    assert_ne!(output_hash(&moved.propensity), b2.output_hashes[0]);
    assert_ne!(input_hash(&cfg, &prev, &b2.x, &b2.folds, 1, 0), b2.input_hashes[0]);
}

#[test]
fn designs_share_draws_within_a_replication() {
    let fixed = fixed_oracle(200, [0.2, 0.2], 2);
    let learned = small_config(true, 200);
    let seed = StreamSeed::new(3, 5);
    let inputs = draw_inputs(&fixed, seed).unwrap();
    let a = run_with_inputs(&fixed, seed, &inputs).unwrap();
    let b = run_with_inputs(&learned, seed, &inputs).unwrap();
    for (x, y) in a.batches.iter().zip(&b.batches) {
        assert_eq!(x.x, y.x);
        assert_eq!(x.uniforms, y.uniforms);
        assert_eq!(x.folds, y.folds);
    }
}

#[test]
fn oracle_pooled_matches_direct_aipw() {
    let cfg = fixed_oracle(400, [0.2, 0.5], 2);
    let rec = run_experiment(&cfg, StreamSeed::new(21, 0)).unwrap();
    let ns = oracle_for_record(&cfg.dgp, &rec, 0.0).unwrap();
    let est = pooled_estimate(&rec, Estimand::Ate, &ns).unwrap();
    let direct = direct_aipw(&rec, &cfg.dgp);
    assert!((est.theta_hat[0] - direct).abs() < 1e-12, "{} vs {direct}", est.theta_hat[0]);
}

#[test]
fn oracle_fixed_estimates_do_not_depend_on_folds() {
    let seed = StreamSeed::new(30, 1);
    let two = fixed_oracle(400, [0.3, 0.3], 2);
    let four = fixed_oracle(400, [0.3, 0.3], 4);
    let a = run_experiment(&two, seed).unwrap();
    let mut inputs = draw_inputs(&four, seed).unwrap();
    inputs.folds = draw_inputs(&four, StreamSeed::new(99, 9)).unwrap().folds;
    let b = run_with_inputs(&four, seed, &inputs).unwrap();
    let ea = pooled_estimate(&a, Estimand::Ate, &oracle_for_record(&two.dgp, &a, 0.0).unwrap()).unwrap();
    let eb = pooled_estimate(&b, Estimand::Ate, &oracle_for_record(&four.dgp, &b, 0.0).unwrap()).unwrap();
    assert!((ea.theta_hat[0] - eb.theta_hat[0]).abs() < 1e-12);
    assert!((ea.sandwich_se[0] - eb.sandwich_se[0]).abs() < 1e-12);
}

#[test]
fn single_batch_aggregation_equals_pooling() {
    for estimand in [Estimand::Ate, Estimand::Pl] {
        let mut cfg = fixed_oracle(600, [0.4, 0.4], 2);
        cfg.batch_sizes = vec![600];
        cfg.budgets.truncate(1);
        cfg.estimand = estimand;
        let rec = run_experiment(&cfg, StreamSeed::new(2, 0)).unwrap();
        let pooled = pooled_estimate(&rec, estimand, &oracle_for_record(&cfg.dgp, &rec, 0.01).unwrap()).unwrap();
        let agg = aggregated_estimate(&rec, estimand, &[oracle_for_batch(&cfg.dgp, &rec, 0, 0.01).unwrap()]).unwrap();
        for (a, b) in pooled.theta_hat.iter().zip(&agg.theta_hat) {
            assert!((a - b).abs() < 1e-10, "{estimand:?}: {a} vs {b}");
        }
        for (a, b) in pooled.covariance.iter().zip(&agg.covariance) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
    }
}

#[test]
fn stripped_records_round_trip() {
    let cfg = small_config(false, 150);
    let rec = run_experiment(&cfg, StreamSeed::new(17, 4)).unwrap();
    let text = serde_json::to_string(&rec.without_covariates()).unwrap();
    let mut back: ExperimentRecord = serde_json::from_str(&text).unwrap();
    assert!(!back.has_covariates());
    back.restore_covariates().unwrap();
    assert_eq!(back, rec);
    let opts = ReplayOptions {
        estimators: vec![EstimatorChoice::Pooled, EstimatorChoice::Aggregated, EstimatorChoice::Binned],
        nuisance: NuisanceMode::Estimated,
        bins: 4,
    };
    let a = replay(&rec, &opts).unwrap();
    let b = replay(&rec.without_covariates(), &opts).unwrap();
    assert_eq!(a, b);
}

fn tiny_study() -> SimConfig {
    let mut cfg = SimConfig::standard(DgpSpec::standard(1, true), Estimand::Ate);
    cfg.batch_sizes = vec![200, 200];
    cfg.replications = 6;
    cfg.bootstrap = 200;
    cfg.asymptotic_replications = 3;
    cfg.methods = vec![
        Method::new(DesignChoice::Flexible, EstimatorChoice::Pooled),
        Method::new(DesignChoice::Binned, EstimatorChoice::Binned),
    ];
    cfg
}

#[test]
fn monte_carlo_is_reproducible() {
    let cfg = tiny_study();
    let a = run_monte_carlo(&cfg).unwrap();
    let mut b = run_monte_carlo(&cfg).unwrap();
    b.metadata.wall_time_secs = a.metadata.wall_time_secs;
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.rows.last().unwrap().method, Method::BASELINE);
    assert_eq!(a.rows.last().unwrap().rel_eff, 1.0);

    let json = render_report(&a, ReportFormat::Json).unwrap();
    let back: SimulationTable = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
    let csv = render_report(&a, ReportFormat::Csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,design,estimator,mse,rel_eff,ci_lo,ci_hi,asymp_rel_eff,coverage,n_fail"
    );
    assert_eq!(lines.count(), a.rows.len());
    let md = render_report(&a, ReportFormat::Markdown).unwrap();
    assert!(md.contains("1 (baseline)"));
}

#[test]
fn config_overrides_win_and_unknown_keys_fail() {
    let text = "estimand = \"ate\"\nreplications = 50\n[dgp]\ndim = 1\n";
    let cfg = SimConfig::from_toml(text, &[("replications".into(), "7".into()), ("dgp.dim".into(), "3".into())])
        .unwrap();
    assert_eq!(cfg.replications, 7);
    assert_eq!(cfg.dgp.dim, 3);
    let cfg = SimConfig::from_toml(text, &[("family".into(), "{ kind = \"monotone\" }".into())]).unwrap();
    assert_eq!(cfg.family, Some(FamilySpec::Monotone));
    assert!(matches!(
        SimConfig::from_toml(text, &[("replicatons".into(), "7".into())]),
        Err(Error::Config(_))
    ));
    let err = SimConfig::from_toml("[dgp]\ndim = 0\n", &[]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_batchpool")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["variance", "--counterexample"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2.33333"), "{text}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "bogus = 1\n").unwrap();
    assert_eq!(cli(&["simulate", "-c", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cli(&["replay", "--record", "/nonexistent/record.json"]).status.code(), Some(2));

    let degenerate = dir.path().join("degenerate.toml");
    std::fs::write(
        &degenerate,
        "batch_sizes = [10, 10]\n[dgp]\ndim = 1\n[[propensities]]\nfamily = \"constant\"\nvalue = 1.0\n\
         [[propensities]]\nfamily = \"constant\"\nvalue = 1.0\n",
    )
    .unwrap();
    assert_eq!(cli(&["variance", "-c", degenerate.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn cli_design_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("design.csv");
    let mut rows = String::from("x1,v0,v1,prior_mix\n");
    for i in 0..40 {
        let x = i as f64 / 10.0 - 2.0;
        rows.push_str(&format!("{x},1,{},0.2\n", 1.0 + x * x));
    }
    std::fs::write(&data, rows).unwrap();
    let out = cli(&["design", "--data", data.to_str().unwrap(), "--family", "monotone", "--budget-low", "0.2", "--budget-high", "0.2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["family"], "monotone");
    let values: Vec<f64> = serde_json::from_value(v["knots_y"].clone()).unwrap();
    assert!((values.iter().sum::<f64>() / 40.0 - 0.2).abs() < 1e-6);
    assert!(values.windows(2).all(|w| w[0] <= w[1] + 1e-12));

    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "batch_sizes = [100, 100]\n[dgp]\ndim = 1\n").unwrap();
    let record = dir.path().join("record.json");
    let out = cli(&["experiment", "-c", cfg.to_str().unwrap(), "--strip-covariates", "-o", record.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(&["replay", "--record", record.to_str().unwrap(), "--nuisance", "oracle"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("theta_hat"));
}
