//! Split batch adaptive experiments: fold assignment, per-fold propensity
//! learning batch by batch, treatment assignment and the resulting record.

mod estimate;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use estimate::{
    aggregated_estimate, binned_estimate, pooled_estimate, EstimateDiagnostics, EstimateMethod, EstimateReport,
};

use crate::dgp::{DgpSpec, Estimand, PotentialTable};
use crate::nuisance::{fit_outcome_models, true_outcome_models, Smoother, TrainingData};
use crate::optimizer::{maximize_design_in, DesignProblem, ObjectiveKind, SolverDiagnostics, SolverOptions};
use crate::propensity::{bin_of, index, BudgetInterval, FamilySpec, FeasibleSet, MixtureWeights, PropensityFn};
use crate::rng::{Purpose, StreamSeed};
use crate::scores::VARIANCE_FLOOR;
use crate::variance::PsiKind;
use crate::{Error, Result};

/// How each batch's propensity is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignKind {
    /// Constant propensity at the batch budget midpoint (a simple RCT).
    Fixed,
    /// Learned by concave maximisation over `family`. The binned family
    /// replaces the covariates by their bin labels throughout the design
    /// step, including the variance estimates.
    Learned { family: FamilySpec },
}

/// Which asymptotic variance the design step targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DesignTarget {
    /// `V_{0:t}` of the pooled estimator through the mixture with earlier batches.
    #[default]
    Pooled,
    /// The variance of the batch-`t` estimator alone.
    SingleBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceMode {
    #[default]
    Estimated,
    Oracle,
}

fn default_folds() -> usize {
    2
}

fn default_gamma() -> f64 {
    0.01
}

/// Everything needed to run one experiment, apart from the random seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub budgets: Vec<BudgetInterval>,
    /// Constant batch-1 propensity; defaults to the batch-1 budget midpoint.
    #[serde(default)]
    pub initial_propensity: Option<f64>,
    pub design: DesignKind,
    #[serde(default)]
    pub target: DesignTarget,
    #[serde(default)]
    pub psi: PsiKind,
    #[serde(default)]
    pub estimand: Estimand,
    #[serde(default)]
    pub nuisance: NuisanceMode,
    /// Smoother for design-stage variance estimates; dimension default if absent.
    #[serde(default)]
    pub smoother: Option<Smoother>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl ExperimentConfig {
    /// Two batches of 1000, K = 2, equality budgets 0.2, learned design with
    /// the flexible default family.
    pub fn standard(dgp: DgpSpec, estimand: Estimand) -> Self {
        let dim = dgp.dim;
        let budget = BudgetInterval::equality(0.2).expect("valid budget");
        Self {
            dgp,
            batch_sizes: vec![1000, 1000],
            folds: 2,
            budgets: vec![budget, budget],
            initial_propensity: None,
            design: DesignKind::Learned {
                family: FamilySpec::flexible_default(dim),
            },
            target: DesignTarget::Pooled,
            psi: PsiKind::AOpt,
            estimand,
            nuisance: NuisanceMode::Estimated,
            smoother: None,
            solver: SolverOptions::default(),
            gamma: default_gamma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        let t = self.batch_sizes.len();
        if t == 0 {
            return Err(Error::Config("at least one batch is required".into()));
        }
        if self.budgets.len() != t {
            return Err(Error::Config(format!("{} budgets given for {t} batches", self.budgets.len())));
        }
        for b in &self.budgets {
            BudgetInterval::new(b.m_low, b.m_high).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.folds == 0 {
            return Err(Error::Config("need at least one fold".into()));
        }
        if let Some(&n) = self.batch_sizes.iter().find(|n| **n < self.folds) {
            return Err(Error::Config(format!("batch size {n} is smaller than K = {}", self.folds)));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 0.5)".into()));
        }
        let e1 = self.initial_value();
        if !(e1 > 0.0 && e1 < 1.0) {
            return Err(Error::Config(format!("initial propensity {e1} must lie in (0, 1)")));
        }
        if self.estimand == Estimand::Pl {
            self.dgp.true_theta(Estimand::Pl).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_propensity.unwrap_or_else(|| self.budgets[0].midpoint())
    }

    pub fn n_batches(&self) -> usize {
        self.batch_sizes.len()
    }

    fn objective(&self) -> ObjectiveKind {
        match self.estimand {
            Estimand::Ate => ObjectiveKind::Aipw,
            Estimand::Pl => ObjectiveKind::Epl,
        }
    }

    fn smoother(&self) -> Smoother {
        self.smoother.unwrap_or_else(|| Smoother::default_for_dim(self.dgp.dim))
    }
}

/// Random fold labels: shuffle, then deal round-robin within each batch, so
/// every fold of batch `t` has `floor(N_t / K)` or `ceil(N_t / K)` units.
pub fn make_folds<R: Rng + ?Sized>(batch_sizes: &[usize], k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    batch_sizes
        .iter()
        .map(|&n| {
            if n < k {
                return Err(Error::Config(format!("batch size {n} is smaller than K = {k}")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut labels = vec![0; n];
            for (pos, i) in order.into_iter().enumerate() {
                labels[i] = pos % k;
            }
            Ok(labels)
        })
        .collect()
}

/// Observations and design of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// Row-major covariates; may be stripped for storage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
    pub folds: Vec<usize>,
    pub uniforms: Vec<f64>,
    pub z: Vec<u8>,
    pub y: Vec<f64>,
    /// Assignment propensity of each fold.
    pub propensities: Vec<PropensityFn>,
    pub budget: BudgetInterval,
    /// Hash of everything the fold's design step was allowed to read.
    pub input_hashes: Vec<String>,
    /// Hash of the fold's resulting propensity.
    pub output_hashes: Vec<String>,
    #[serde(default)]
    pub solver: Vec<Option<SolverDiagnostics>>,
}

impl BatchRecord {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        if self.y.is_empty() {
            0
        } else {
            self.x.len() / self.y.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.x.len() / self.y.len();
        &self.x[i * d..(i + 1) * d]
    }

    /// Propensity used to assign unit `i`.
    pub fn assignment_propensity(&self, i: usize) -> f64 {
        self.propensities[self.folds[i]].evaluate_unchecked(self.row(i))
    }
}

/// All observations of a `T`-batch experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dim: usize,
    pub k: usize,
    pub batches: Vec<BatchRecord>,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub replication: u64,
}

impl ExperimentRecord {
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(BatchRecord::len).collect()
    }

    pub fn n_total(&self) -> usize {
        self.batches.iter().map(BatchRecord::len).sum()
    }

    /// Plug-in weights `N_t / N`.
    pub fn mixture_weights(&self) -> MixtureWeights {
        MixtureWeights::from_sizes(&self.batch_sizes()).expect("nonempty batches")
    }

    /// Copy without covariates; [`ExperimentRecord::restore_covariates`]
    /// regenerates them from the seed.
    pub fn without_covariates(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.batches {
            b.x.clear();
        }
        out
    }

    pub fn has_covariates(&self) -> bool {
        self.batches.iter().all(|b| b.x.len() == b.len() * self.dim)
    }

    pub fn restore_covariates(&mut self) -> Result<()> {
        if self.has_covariates() {
            return Ok(());
        }
        let seed = StreamSeed::new(self.master_seed, self.replication);
        let tables = draw_tables(&self.config, seed)?;
        for (b, t) in self.batches.iter_mut().zip(tables) {
            b.x = t.x;
        }
        Ok(())
    }
}

/// Random inputs of one experiment: potential outcomes, uniforms and folds.
/// Shared by every design compared within a replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentInputs {
    pub tables: Vec<PotentialTable>,
    pub uniforms: Vec<Vec<f64>>,
    pub folds: Vec<Vec<usize>>,
}

fn draw_tables(cfg: &ExperimentConfig, seed: StreamSeed) -> Result<Vec<PotentialTable>> {
    cfg.batch_sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| cfg.dgp.sample_batch(n, &mut seed.rng(Purpose::Outcomes(t as u32))))
        .collect()
}

pub fn draw_inputs(cfg: &ExperimentConfig, seed: StreamSeed) -> Result<ExperimentInputs> {
    cfg.validate()?;
    let tables = draw_tables(cfg, seed)?;
    let uniforms = cfg
        .batch_sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let mut rng = seed.rng(Purpose::Uniforms(t as u32));
            (0..n).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    let folds = make_folds(&cfg.batch_sizes, cfg.folds, &mut seed.rng(Purpose::Folds(0)))?;
    Ok(ExperimentInputs {
        tables,
        uniforms,
        folds,
    })
}

/// Runs the experiment with freshly drawn inputs.
pub fn run_experiment(cfg: &ExperimentConfig, seed: StreamSeed) -> Result<ExperimentRecord> {
    let inputs = draw_inputs(cfg, seed)?;
    run_with_inputs(cfg, seed, &inputs)
}

/// Result of one fold's design step.
#[derive(Debug, Clone)]
pub struct FoldDesign {
    pub propensity: PropensityFn,
    pub diagnostics: Option<SolverDiagnostics>,
}

/// Runs the experiment on given inputs. Batch 1 uses the constant initial
/// propensity in every fold; for later batches each fold solves its own
/// design problem from its own earlier data.
pub fn run_with_inputs(cfg: &ExperimentConfig, seed: StreamSeed, inputs: &ExperimentInputs) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let dim = cfg.dgp.dim;
    let k = cfg.folds;
    let mut batches: Vec<BatchRecord> = Vec::with_capacity(cfg.n_batches());
    for (t, table) in inputs.tables.iter().enumerate() {
        let folds = &inputs.folds[t];
        let uniforms = &inputs.uniforms[t];
        if table.len() != cfg.batch_sizes[t] || folds.len() != table.len() || uniforms.len() != table.len() {
            return Err(Error::Config(format!("inputs of batch {t} do not match the configured size")));
        }
        let designs: Vec<FoldDesign> = if t == 0 {
            let e1 = PropensityFn::constant(cfg.initial_value())?;
            vec![
                FoldDesign {
                    propensity: e1,
                    diagnostics: None,
                };
                k
            ]
        } else {
            crate::par::map_range(k, |fold| {
                design_step(cfg, &batches, &table.x, folds, t, fold).map_err(|e| e.at_stage(t + 1, fold + 1))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        };
        let input_hashes = (0..k).map(|fold| input_hash(cfg, &batches, &table.x, folds, t, fold)).collect();
        let output_hashes = designs.iter().map(|d| output_hash(&d.propensity)).collect();
        let mut z = Vec::with_capacity(table.len());
        let mut y = Vec::with_capacity(table.len());
        for i in 0..table.len() {
            let e = designs[folds[i]].propensity.evaluate_unchecked(table.row(i));
            let zi = u8::from(uniforms[i] <= e);
            z.push(zi);
            y.push(if zi == 1 { table.y1[i] } else { table.y0[i] });
        }
        batches.push(BatchRecord {
            x: table.x.clone(),
            folds: folds.clone(),
            uniforms: uniforms.clone(),
            z,
            y,
            propensities: designs.iter().map(|d| d.propensity.clone()).collect(),
            budget: cfg.budgets[t],
            input_hashes,
            output_hashes,
            solver: designs.into_iter().map(|d| d.diagnostics).collect(),
        });
    }
    Ok(ExperimentRecord {
        dim,
        k,
        batches,
        config: cfg.clone(),
        master_seed: seed.master,
        replication: seed.replication,
    })
}

fn fold_rows(x: &[f64], dim: usize, folds: &[usize], fold: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, f) in folds.iter().enumerate() {
        if *f == fold {
            out.extend_from_slice(&x[i * dim..(i + 1) * dim]);
        }
    }
    out
}

fn fold_training(prev: &[BatchRecord], dim: usize, fold: usize) -> TrainingData {
    let mut data = TrainingData::new(dim);
    for b in prev {
        for i in 0..b.len() {
            if b.folds[i] == fold {
                data.push(b.row(i), b.z[i], b.y[i]);
            }
        }
    }
    data
}

/// Within-cell outcome variances per arm, `[arm][cell]`, floored. Cells with
/// fewer than two observations of an arm fall back to the arm-wide variance.
fn estimated_cell_variances(data: &TrainingData, cuts: &[f64]) -> Result<[Vec<f64>; 2]> {
    let n_cells = cuts.len() + 1;
    let mut out = [vec![0.0; n_cells], vec![0.0; n_cells]];
    for arm in 0..2u8 {
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_cells];
        let mut all = Vec::new();
        for i in (0..data.len()).filter(|i| data.z[*i] == arm) {
            let x = &data.x[i * data.dim..(i + 1) * data.dim];
            groups[bin_of(cuts, index(x))].push(data.y[i]);
            all.push(data.y[i]);
        }
        if all.len() < 2 {
            return Err(Error::InsufficientData {
                arm,
                count: all.len(),
                needed: 2,
            });
        }
        let arm_var = sample_variance(&all);
        for (c, g) in groups.iter().enumerate() {
            let v = if g.len() >= 2 { sample_variance(g) } else { arm_var };
            out[arm as usize][c] = v.max(VARIANCE_FLOOR);
        }
    }
    Ok(out)
}

/// `Var(Y(z) | cell) = E[v0(z, X) | cell] + Var(m0(z, X) | cell)` with the
/// conditional moments averaged over the given covariate rows.
fn oracle_cell_variances(spec: &DgpSpec, rows: &[f64], cuts: &[f64]) -> [Vec<f64>; 2] {
    let dim = spec.dim;
    let n_cells = cuts.len() + 1;
    let mut out = [vec![1.0; n_cells], vec![1.0; n_cells]];
    for arm in 0..2u8 {
        let mut moments: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_cells];
        for x in rows.chunks(dim) {
            moments[bin_of(cuts, index(x))].push((spec.mean_unchecked(arm, x), spec.var_unchecked(arm, x)));
        }
        for (c, m) in moments.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            let n = m.len() as f64;
            let mbar = m.iter().map(|p| p.0).sum::<f64>() / n;
            let spread = m.iter().map(|p| (p.0 - mbar).powi(2)).sum::<f64>() / n;
            let vbar = m.iter().map(|p| p.1).sum::<f64>() / n;
            out[arm as usize][c] = (vbar + spread).max(VARIANCE_FLOOR);
        }
    }
    out
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Learns the batch-`t` propensity of `fold` from fold-`fold` observations of
/// earlier batches and the fold's batch-`t` covariates.
pub fn design_step(
    cfg: &ExperimentConfig,
    prev: &[BatchRecord],
    x_t: &[f64],
    folds_t: &[usize],
    t: usize,
    fold: usize,
) -> Result<FoldDesign> {
    let dim = cfg.dgp.dim;
    let budget = cfg.budgets[t];
    let family_spec = match &cfg.design {
        DesignKind::Fixed => {
            return Ok(FoldDesign {
                propensity: PropensityFn::constant(budget.midpoint())?,
                diagnostics: None,
            })
        }
        DesignKind::Learned { family } => family,
    };
    let points = fold_rows(x_t, dim, folds_t, fold);
    let n = points.len() / dim;
    if n == 0 {
        return Err(Error::InsufficientData {
            arm: 0,
            count: 0,
            needed: 1,
        });
    }
    let data = fold_training(prev, dim, fold);
    let oracle = cfg.nuisance == NuisanceMode::Oracle;
    let family = match family_spec {
        FamilySpec::Binned { .. } => {
            let mut idx: Vec<f64> = data.x.chunks(dim).map(index).collect();
            idx.extend(points.chunks(dim).map(index));
            family_spec.instantiate(dim, Some(&idx))?
        }
        _ => family_spec.instantiate(dim, None)?,
    };
    let (v0, v1) = match (&family, oracle) {
        (crate::propensity::Family::Binned { cuts }, _) => {
            let reference = if oracle {
                let mut rows = data.x.clone();
                rows.extend_from_slice(&points);
                oracle_cell_variances(&cfg.dgp, &rows, cuts)
            } else {
                estimated_cell_variances(&data, cuts)?
            };
            let cells: Vec<usize> = points.chunks(dim).map(|x| bin_of(cuts, index(x))).collect();
            (
                cells.iter().map(|c| reference[0][*c]).collect::<Vec<_>>(),
                cells.iter().map(|c| reference[1][*c]).collect::<Vec<_>>(),
            )
        }
        (_, true) => {
            let m = true_outcome_models(&cfg.dgp);
            (
                points.chunks(dim).map(|x| m.v[0].predict(x)).collect(),
                points.chunks(dim).map(|x| m.v[1].predict(x)).collect(),
            )
        }
        (_, false) => {
            let m = fit_outcome_models(&data, &cfg.smoother())?;
            (
                points.chunks(dim).map(|x| m.v[0].predict(x)).collect(),
                points.chunks(dim).map(|x| m.v[1].predict(x)).collect(),
            )
        }
    };
    let (prior_offset, current_weight) = match cfg.target {
        DesignTarget::SingleBatch => (vec![0.0; n], 1.0),
        DesignTarget::Pooled => {
            let n_upto: usize = cfg.batch_sizes[..=t].iter().sum();
            let offset = points
                .chunks(dim)
                .map(|x| {
                    prev.iter()
                        .enumerate()
                        .map(|(u, b)| cfg.batch_sizes[u] as f64 * b.propensities[fold].evaluate_unchecked(x))
                        .sum::<f64>()
                        / n_upto as f64
                })
                .collect();
            (offset, cfg.batch_sizes[t] as f64 / n_upto as f64)
        }
    };
    let problem = DesignProblem {
        dim,
        points: points.clone(),
        v0,
        v1,
        prior_offset,
        current_weight,
        psi: None,
        family: family.clone(),
        budget,
        psi_kind: cfg.psi,
        objective: cfg.objective(),
    };
    let set = FeasibleSet::new(&family, &points, dim, budget)?;
    let solution = maximize_design_in(&set, &problem, None, &cfg.solver)?;
    Ok(FoldDesign {
        propensity: solution.propensity(&set)?,
        diagnostics: Some(solution.diagnostics),
    })
}

fn hash_f64s(h: &mut Sha256, v: &[f64]) {
    for x in v {
        h.update(x.to_bits().to_le_bytes());
    }
}

/// Hash of the inputs the fold-`fold` design of batch `t` may depend on:
/// configuration, fold-`fold` observations of batches before `t` with their
/// propensities, and fold-`fold` covariates of batch `t`.
pub fn input_hash(
    cfg: &ExperimentConfig,
    prev: &[BatchRecord],
    x_t: &[f64],
    folds_t: &[usize],
    t: usize,
    fold: usize,
) -> String {
    let dim = cfg.dgp.dim;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serialises"));
    h.update((t as u64).to_le_bytes());
    h.update((fold as u64).to_le_bytes());
    for b in prev {
        for i in 0..b.len() {
            if b.folds[i] == fold {
                hash_f64s(&mut h, b.row(i));
                h.update([b.z[i]]);
                hash_f64s(&mut h, &[b.y[i]]);
            }
        }
        h.update(output_hash(&b.propensities[fold.min(b.propensities.len() - 1)]).as_bytes());
    }
    hash_f64s(&mut h, &fold_rows(x_t, dim, folds_t, fold));
    hex::encode(h.finalize())
}

pub fn output_hash(e: &PropensityFn) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(e).expect("propensity serialises"));
    hex::encode(h.finalize())
}

/// Outcome of [`audit`]: each list holds human-readable violations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub fold_sizes: Vec<String>,
    pub treatments: Vec<String>,
    pub provenance: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.fold_sizes.is_empty() && self.treatments.is_empty() && self.provenance.is_empty()
    }
}

/// Checks fold balance, that every treatment is reproduced by
/// `Z = 1(U <= e^(k)(X))`, and that the stored input hashes match the data.
pub fn audit(record: &ExperimentRecord) -> Result<AuditReport> {
    let mut rec = record.clone();
    rec.restore_covariates()?;
    let mut report = AuditReport::default();
    let k = rec.k;
    for (t, b) in rec.batches.iter().enumerate() {
        let mut counts = vec![0usize; k];
        for f in &b.folds {
            counts[*f] += 1;
        }
        let n = b.len() as f64;
        for (fold, c) in counts.iter().enumerate() {
            if (*c as f64 - n / k as f64).abs() > 1.0 {
                report.fold_sizes.push(format!("batch {}: fold {} has {c} of {n} units", t + 1, fold + 1));
            }
        }
        for i in 0..b.len() {
            let z = u8::from(b.uniforms[i] <= b.assignment_propensity(i));
            if z != b.z[i] {
                report.treatments.push(format!("batch {}: unit {i} not reproduced", t + 1));
            }
        }
        for fold in 0..k {
            let expect = input_hash(&rec.config, &rec.batches[..t], &b.x, &b.folds, t, fold);
            if b.input_hashes.get(fold) != Some(&expect) {
                report.provenance.push(format!("batch {}: fold {} input hash differs", t + 1, fold + 1));
            }
            if b.output_hashes.get(fold) != Some(&output_hash(&b.propensities[fold])) {
                report.provenance.push(format!("batch {}: fold {} output hash differs", t + 1, fold + 1));
            }
        }
    }
    Ok(report)
}

/// Re-solves every design step from the recorded inputs and checks that the
/// same propensities come out.
pub fn verify_designs(record: &ExperimentRecord) -> Result<bool> {
    let mut rec = record.clone();
    rec.restore_covariates()?;
    for t in 1..rec.batches.len() {
        let b = &rec.batches[t];
        for fold in 0..rec.k {
            let d = design_step(&rec.config, &rec.batches[..t], &b.x, &b.folds, t, fold)?;
            if output_hash(&d.propensity) != b.output_hashes[fold] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn fold_sizes() {
        let mut rng = stream(1, 0, Purpose::Other(0));
        let f = make_folds(&[1000, 7], 2, &mut rng).unwrap();
        assert_eq!(f[0].iter().filter(|k| **k == 0).count(), 500);
        let f = make_folds(&[7], 3, &mut rng).unwrap();
        let mut c = [0; 3];
        f[0].iter().for_each(|k| c[*k] += 1);
        c.sort();
        assert_eq!(c, [2, 2, 3]);
        assert!(make_folds(&[2], 3, &mut rng).is_err());
        let a = make_folds(&[50], 2, &mut stream(9, 1, Purpose::Folds(0))).unwrap();
        let b = make_folds(&[50], 2, &mut stream(9, 1, Purpose::Folds(0))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn homoskedastic_oracle_design_is_constant() {
        let mut cfg = ExperimentConfig::standard(DgpSpec::standard(1, false), Estimand::Ate);
        cfg.nuisance = NuisanceMode::Oracle;
        cfg.batch_sizes = vec![200, 200];
        let rec = run_experiment(&cfg, StreamSeed::new(3, 0)).unwrap();
        for (i, x) in rec.batches[1].x.iter().enumerate() {
            let e = rec.batches[1].propensities[rec.batches[1].folds[i]].evaluate_unchecked(&[*x]);
            assert!((e - 0.2).abs() < 1e-4, "{e}");
        }
        assert!(audit(&rec).unwrap().passed());
    }
}
