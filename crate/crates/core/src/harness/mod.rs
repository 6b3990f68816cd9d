//! Monte Carlo replication studies comparing design and estimation methods.
//!
//! A [`SimConfig`] names the methods to compare. Each replication draws one
//! set of potential outcomes, uniforms and folds and runs every design on
//! those shared draws, so method comparisons are matched.

mod asymptotic;
mod bootstrap;
mod report;
mod tools;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use asymptotic::{asymptotic_rel_eff, averaged_batch_values, LearnedDesigns};
pub use bootstrap::{bootstrap_ci, percentile};
pub use report::{emit_report, render_report, ReportFormat};
pub use tools::{
    evaluate_variance, read_design_csv, replay, single_experiment, solve_design, DesignData, DesignOutput,
    DesignSettings, ReplayOptions, VarianceOutput, VarianceRequest,
};

use crate::csbae::{
    aggregated_estimate, binned_estimate, draw_inputs, pooled_estimate, run_with_inputs, DesignKind, DesignTarget,
    EstimateReport, ExperimentConfig, ExperimentRecord, NuisanceMode,
};
use crate::dgp::{DgpSpec, Estimand};
use crate::nuisance::{crossfit, crossfit_batch, oracle_for_batch, oracle_for_record, CrossfitOptions, Smoother};
use crate::optimizer::SolverOptions;
use crate::propensity::{BudgetInterval, FamilySpec, PropensityFn};
use crate::rng::{Purpose, StreamSeed};
use crate::variance::{CovariateSample, PsiKind};
use crate::{Error, Result};

/// Two-sided 95% normal quantile used for Wald intervals.
pub const WALD_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignChoice {
    /// Learned over the flexible family.
    Flexible,
    /// Learned over propensities constant on bins of `1'x`, using only the bins.
    Binned,
    /// Constant propensity at the budget midpoint in every batch.
    SimpleRct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    Pooled,
    Aggregated,
    /// AIPW on bin labels without cross-fitting.
    Binned,
}

/// A design paired with an estimator, written `design/estimator` in configs
/// (for example `flexible/pooled` or `simple-rct/aggregated`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub design: DesignChoice,
    pub estimator: EstimatorChoice,
}

impl Method {
    pub const fn new(design: DesignChoice, estimator: EstimatorChoice) -> Self {
        Self { design, estimator }
    }

    /// The reference method of every table: aggregation over a simple RCT.
    pub const BASELINE: Method = Method::new(DesignChoice::SimpleRct, EstimatorChoice::Aggregated);

    /// The methods of the standard comparison for an estimand.
    pub fn standard(estimand: Estimand) -> Vec<Method> {
        use DesignChoice as D;
        use EstimatorChoice as E;
        let mut out = vec![
            Method::new(D::Flexible, E::Pooled),
            Method::new(D::Binned, E::Pooled),
            Method::new(D::SimpleRct, E::Pooled),
            Method::new(D::Flexible, E::Aggregated),
        ];
        if estimand == Estimand::Ate {
            out.push(Method::new(D::Binned, E::Binned));
        }
        out.push(Method::BASELINE);
        out
    }

    /// The experiment this method needs. Aggregated estimators get designs
    /// targeting the single-batch variance, and binned estimation on a binned
    /// design learns without sample splitting.
    pub fn run(&self, folds: usize) -> DesignRun {
        let target = match (self.design, self.estimator) {
            (DesignChoice::SimpleRct, _) => DesignTarget::Pooled,
            (_, EstimatorChoice::Aggregated) => DesignTarget::SingleBatch,
            _ => DesignTarget::Pooled,
        };
        let folds = match (self.design, self.estimator) {
            (DesignChoice::Binned, EstimatorChoice::Binned) => 1,
            _ => folds,
        };
        DesignRun {
            design: self.design,
            target,
            folds,
        }
    }

    pub fn design_label(&self) -> &'static str {
        match self.design {
            DesignChoice::Flexible => "Flexible",
            DesignChoice::Binned => "Binned",
            DesignChoice::SimpleRct => "Simple RCT",
        }
    }

    pub fn estimator_label(&self, estimand: Estimand) -> String {
        let base = match estimand {
            Estimand::Ate => "AIPW",
            Estimand::Pl => "EPL",
        };
        match self.estimator {
            EstimatorChoice::Pooled => base.to_string(),
            EstimatorChoice::Aggregated => format!("{base} (LA)"),
            EstimatorChoice::Binned => format!("{base} (bin)"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.design {
            DesignChoice::Flexible => "flexible",
            DesignChoice::Binned => "binned",
            DesignChoice::SimpleRct => "simple-rct",
        };
        let e = match self.estimator {
            EstimatorChoice::Pooled => "pooled",
            EstimatorChoice::Aggregated => "aggregated",
            EstimatorChoice::Binned => "binned",
        };
        write!(f, "{d}/{e}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (d, e) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("method `{s}` is not of the form design/estimator")))?;
        let design = match d.trim() {
            "flexible" => DesignChoice::Flexible,
            "binned" => DesignChoice::Binned,
            "simple-rct" | "rct" => DesignChoice::SimpleRct,
            other => return Err(Error::Config(format!("unknown design `{other}`"))),
        };
        let estimator = match e.trim() {
            "pooled" => EstimatorChoice::Pooled,
            "aggregated" | "la" => EstimatorChoice::Aggregated,
            "binned" | "bin" => EstimatorChoice::Binned,
            other => return Err(Error::Config(format!("unknown estimator `{other}`"))),
        };
        Ok(Method { design, estimator })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// One experiment run within a replication, shared by all methods that need it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesignRun {
    pub design: DesignChoice,
    pub target: DesignTarget,
    pub folds: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub markdown: Option<PathBuf>,
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1000, 1000]
}
fn default_folds() -> usize {
    2
}
fn default_bins() -> usize {
    4
}
fn default_replications() -> usize {
    300
}
fn default_bootstrap() -> usize {
    2000
}
fn default_level() -> f64 {
    0.9
}
fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}
fn default_asymptotic_replications() -> usize {
    100
}
fn default_asymptotic_points() -> usize {
    20_000
}
fn default_gamma() -> f64 {
    0.01
}
fn default_max_failure_rate() -> f64 {
    0.01
}

/// A replication study. Every key can be set in the TOML file or overridden
/// on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dgp: DgpSpec,
    #[serde(default)]
    pub estimand: Estimand,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// One interval per batch; equality budgets at 0.2 when empty.
    #[serde(default)]
    pub budgets: Vec<BudgetInterval>,
    #[serde(default)]
    pub initial_propensity: Option<f64>,
    /// Family of the flexible design; the dimension default when absent.
    #[serde(default)]
    pub family: Option<FamilySpec>,
    /// Number of bins of the binned design and estimator.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub psi: PsiKind,
    #[serde(default)]
    pub nuisance: NuisanceMode,
    #[serde(default)]
    pub smoother: Option<Smoother>,
    /// Methods to compare; the standard set for the estimand when empty. The
    /// baseline `simple-rct/aggregated` is always added.
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Whether to compute asymptotic relative efficiencies.
    #[serde(default = "default_true")]
    pub asymptotic: bool,
    /// Learned designs averaged for the asymptotic efficiencies.
    #[serde(default = "default_asymptotic_replications")]
    pub asymptotic_replications: usize,
    /// Monte Carlo points for asymptotic integrals when `d > 1`.
    #[serde(default = "default_asymptotic_points")]
    pub asymptotic_points: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_max_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default)]
    pub output: OutputPaths,
}

impl SimConfig {
    /// Desk-scale defaults for a DGP and estimand.
    pub fn standard(dgp: DgpSpec, estimand: Estimand) -> Self {
        Self {
            dgp,
            estimand,
            batch_sizes: default_batch_sizes(),
            folds: default_folds(),
            budgets: Vec::new(),
            initial_propensity: None,
            family: None,
            bins: default_bins(),
            psi: PsiKind::AOpt,
            nuisance: NuisanceMode::Estimated,
            smoother: None,
            methods: Vec::new(),
            replications: default_replications(),
            bootstrap: default_bootstrap(),
            level: default_level(),
            seed: default_seed(),
            asymptotic: true,
            asymptotic_replications: default_asymptotic_replications(),
            asymptotic_points: default_asymptotic_points(),
            solver: SolverOptions::default(),
            gamma: default_gamma(),
            max_failure_rate: default_max_failure_rate(),
            output: OutputPaths::default(),
        }
    }

    /// Parses TOML text, applying `key=value` overrides (dotted keys, TOML
    /// values, bare words taken as strings) before deserialising.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            set_dotted(&mut tree, key, parse_toml_value(value))?;
        }
        let cfg: SimConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Methods in table order with the baseline last.
    pub fn resolved_methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = if self.methods.is_empty() {
            Method::standard(self.estimand)
        } else {
            self.methods.clone()
        };
        let mut seen = std::collections::HashSet::new();
        out.retain(|m| seen.insert(*m));
        out.retain(|m| *m != Method::BASELINE);
        out.push(Method::BASELINE);
        out
    }

    pub fn resolved_budgets(&self) -> Vec<BudgetInterval> {
        if self.budgets.is_empty() {
            vec![BudgetInterval::equality(0.2).expect("valid budget"); self.batch_sizes.len()]
        } else {
            self.budgets.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.bootstrap < 100 {
            return Err(Error::Config("bootstrap needs at least 100 resamples".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        if self.bins < 1 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        let methods = self.resolved_methods();
        if self.estimand == Estimand::Pl && methods.iter().any(|m| m.estimator == EstimatorChoice::Binned) {
            return Err(Error::Config("the binned estimator targets the average treatment effect only".into()));
        }
        if self.folds < 2
            && methods
                .iter()
                .any(|m| m.estimator != EstimatorChoice::Binned && self.nuisance == NuisanceMode::Estimated)
        {
            return Err(Error::Config("cross-fitted estimators need at least two folds".into()));
        }
        for m in &methods {
            self.experiment_config(m.run(self.folds)).validate()?;
        }
        Ok(())
    }

    /// The experiment configuration of one design run.
    pub fn experiment_config(&self, run: DesignRun) -> ExperimentConfig {
        let design = match run.design {
            DesignChoice::SimpleRct => DesignKind::Fixed,
            DesignChoice::Flexible => DesignKind::Learned {
                family: self
                    .family
                    .clone()
                    .unwrap_or_else(|| FamilySpec::flexible_default(self.dgp.dim)),
            },
            DesignChoice::Binned => DesignKind::Learned {
                family: FamilySpec::Binned { bins: self.bins },
            },
        };
        ExperimentConfig {
            dgp: self.dgp.clone(),
            batch_sizes: self.batch_sizes.clone(),
            folds: run.folds,
            budgets: self.resolved_budgets(),
            initial_propensity: self.initial_propensity,
            design,
            target: run.target,
            psi: self.psi,
            estimand: self.estimand,
            nuisance: self.nuisance,
            smoother: self.smoother,
            solver: self.solver,
            gamma: self.gamma,
        }
    }

    fn crossfit_options(&self) -> CrossfitOptions {
        let mut opts = CrossfitOptions::for_dim(self.dgp.dim);
        if let Some(s) = self.smoother {
            opts.smoother = s;
        }
        opts.gamma = self.gamma;
        opts
    }

    /// Covariate sample for asymptotic integrals.
    pub fn covariate_sample(&self) -> CovariateSample {
        if self.dgp.dim == 1 {
            CovariateSample::for_spec(&self.dgp, self.seed)
        } else {
            CovariateSample::monte_carlo(&self.dgp, self.asymptotic_points, self.seed)
        }
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(tree: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts
        .split_last()
        .ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut node = tree;
    for p in path {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Estimate of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
}

/// Everything one replication produced.
#[derive(Debug, Clone)]
pub struct Replication {
    /// Per method, in [`SimConfig::resolved_methods`] order.
    pub estimates: Vec<std::result::Result<MethodEstimate, String>>,
    /// Per design run: batch-by-fold propensities, kept for the first
    /// `asymptotic_replications` replications.
    pub designs: Vec<(DesignRun, Vec<Vec<PropensityFn>>)>,
}

pub(crate) fn estimate(cfg: &SimConfig, record: &ExperimentRecord, estimator: EstimatorChoice) -> Result<EstimateReport> {
    let oracle = cfg.nuisance == NuisanceMode::Oracle;
    match estimator {
        EstimatorChoice::Pooled => {
            let ns = if oracle {
                oracle_for_record(&cfg.dgp, record, cfg.gamma)?
            } else {
                crossfit(record, &cfg.crossfit_options())?
            };
            pooled_estimate(record, cfg.estimand, &ns)
        }
        EstimatorChoice::Aggregated => {
            let per_batch = (0..record.batches.len())
                .map(|t| {
                    if oracle {
                        oracle_for_batch(&cfg.dgp, record, t, cfg.gamma)
                    } else {
                        crossfit_batch(record, t, &cfg.crossfit_options())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            aggregated_estimate(record, cfg.estimand, &per_batch)
        }
        EstimatorChoice::Binned => binned_estimate(record, cfg.bins, cfg.gamma),
    }
}

/// Runs every design run and method of replication `r` on shared draws.
pub fn run_replication(cfg: &SimConfig, r: usize) -> Result<Replication> {
    let methods = cfg.resolved_methods();
    let seed = StreamSeed::new(cfg.seed, r as u64);
    let mut runs: Vec<DesignRun> = Vec::new();
    for m in &methods {
        let run = m.run(cfg.folds);
        if !runs.contains(&run) {
            runs.push(run);
        }
    }
    let base = cfg.experiment_config(DesignRun {
        design: DesignChoice::SimpleRct,
        target: DesignTarget::Pooled,
        folds: cfg.folds,
    });
    let shared = draw_inputs(&base, seed)?;
    let mut estimates: Vec<Option<std::result::Result<MethodEstimate, String>>> = vec![None; methods.len()];
    let mut designs = Vec::new();
    for run in &runs {
        let exp = cfg.experiment_config(*run);
        let mut inputs = shared.clone();
        if run.folds != cfg.folds {
            inputs.folds = crate::csbae::make_folds(
                &cfg.batch_sizes,
                run.folds,
                &mut seed.rng(Purpose::Folds(run.folds as u32)),
            )?;
        }
        let record = run_with_inputs(&exp, seed, &inputs);
        for (slot, m) in estimates.iter_mut().zip(&methods) {
            if m.run(cfg.folds) != *run {
                continue;
            }
            let result = match &record {
                Ok(rec) => estimate(cfg, rec, m.estimator)
                    .map(|rep| MethodEstimate {
                        theta_hat: rep.theta_hat,
                        se: rep.sandwich_se,
                    })
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            *slot = Some(result);
        }
        if let Ok(rec) = record {
            if r < cfg.asymptotic_replications {
                designs.push((*run, rec.batches.iter().map(|b| b.propensities.clone()).collect()));
            }
        }
    }
    Ok(Replication {
        estimates: estimates.into_iter().map(|e| e.expect("every method belongs to a run")).collect(),
        designs,
    })
}

/// One row of a [`SimulationTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub design: String,
    pub estimator: String,
    pub mse: f64,
    pub rel_eff: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub asymp_rel_eff: Option<f64>,
    pub coverage: f64,
    pub n_fail: usize,
    pub mean_theta: Vec<f64>,
    pub sd_theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub master_seed: u64,
    pub replications: usize,
    /// Replications in which every method succeeded.
    pub used_replications: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub version: String,
    /// Not covered by the determinism guarantee.
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTable {
    pub config: SimConfig,
    pub rows: Vec<MethodRow>,
    pub metadata: TableMetadata,
}

impl SimulationTable {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Short DGP label such as `d=1, Heteroskedastic`.
    pub fn dgp_label(&self) -> String {
        let var = match self.config.dgp.var_kind {
            crate::dgp::VarKind::Homoskedastic => "Homoskedastic",
            crate::dgp::VarKind::Heteroskedastic => "Heteroskedastic",
            _ => "custom variance",
        };
        format!("d={}, {var}", self.config.dgp.dim)
    }
}

fn mean_sq_error(theta: &[f64], truth: &[f64]) -> f64 {
    theta.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else {
        num / den
    }
}

/// Runs the study: replications in parallel, results gathered by index.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<SimulationTable> {
    cfg.validate()?;
    let started = Instant::now();
    let methods = cfg.resolved_methods();
    let truth = cfg.dgp.true_theta(cfg.estimand)?;
    let reps: Vec<Replication> = crate::par::map_range(cfg.replications, |r| run_replication(cfg, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut n_fail = vec![0usize; methods.len()];
    let mut failed_reps = 0usize;
    let mut good: Vec<&Replication> = Vec::new();
    for rep in &reps {
        let mut ok = true;
        for (j, e) in rep.estimates.iter().enumerate() {
            if e.is_err() {
                n_fail[j] += 1;
                ok = false;
            }
        }
        if ok {
            good.push(rep);
        } else {
            failed_reps += 1;
        }
    }
    if failed_reps as f64 > cfg.max_failure_rate * cfg.replications as f64 || good.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failed_reps,
            total: cfg.replications,
        });
    }

    let base = methods.len() - 1;
    let sq: Vec<Vec<f64>> = (0..methods.len())
        .map(|j| {
            good.iter()
                .map(|rep| mean_sq_error(&rep.estimates[j].as_ref().expect("successful").theta_hat, &truth))
                .collect()
        })
        .collect();
    let ci = bootstrap_ci(
        &sq,
        base,
        cfg.bootstrap,
        cfg.level,
        &mut StreamSeed::new(cfg.seed, 0).rng(Purpose::Bootstrap),
    )?;
    let asym = if cfg.asymptotic {
        let mut learned = LearnedDesigns::default();
        for rep in reps.iter().take(cfg.asymptotic_replications) {
            for (run, d) in &rep.designs {
                learned.push(*run, d.clone());
            }
        }
        Some(asymptotic_rel_eff(cfg, &learned, &cfg.covariate_sample())?)
    } else {
        None
    };
    let mse: Vec<f64> = sq.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let p = truth.len();
    let rows = methods
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let ests: Vec<&MethodEstimate> = good
                .iter()
                .map(|rep| rep.estimates[j].as_ref().expect("successful"))
                .collect();
            let n = ests.len() as f64;
            let mut covered = 0usize;
            for e in &ests {
                for c in 0..p {
                    if (e.theta_hat[c] - truth[c]).abs() <= WALD_Z * e.se[c] {
                        covered += 1;
                    }
                }
            }
            let mean_theta: Vec<f64> = (0..p).map(|c| ests.iter().map(|e| e.theta_hat[c]).sum::<f64>() / n).collect();
            let sd_theta: Vec<f64> = (0..p)
                .map(|c| {
                    if ests.len() < 2 {
                        return 0.0;
                    }
                    let ss: f64 = ests.iter().map(|e| (e.theta_hat[c] - mean_theta[c]).powi(2)).sum();
                    (ss / (n - 1.0)).sqrt()
                })
                .collect();
            MethodRow {
                method: *m,
                design: m.design_label().to_string(),
                estimator: m.estimator_label(cfg.estimand),
                mse: mse[j],
                rel_eff: ratio(mse[base], mse[j]),
                ci_lo: ci[j].0,
                ci_hi: ci[j].1,
                asymp_rel_eff: asym.as_ref().map(|a| a[j]),
                coverage: covered as f64 / (n * p as f64),
                n_fail: n_fail[j],
                mean_theta,
                sd_theta,
            }
        })
        .collect();
    Ok(SimulationTable {
        config: cfg.clone(),
        rows,
        metadata: TableMetadata {
            master_seed: cfg.seed,
            replications: cfg.replications,
            used_replications: good.len(),
            bootstrap: cfg.bootstrap,
            level: cfg.level,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}
