use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use batchpool::csbae::{ExperimentRecord, NuisanceMode};
use batchpool::dgp::Estimand;
use batchpool::harness::{
    emit_report, evaluate_variance, read_design_csv, render_report, replay, run_monte_carlo, single_experiment,
    solve_design, DesignSettings, EstimatorChoice, Method, ReplayOptions, ReportFormat, SimConfig, VarianceRequest,
};
use batchpool::propensity::{BudgetInterval, FamilySpec};
use batchpool::{Error, Result};

#[derive(Parser)]
#[command(name = "batchpool", version, about = "Pooled estimation and propensity design for batch adaptive experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write relative-efficiency reports.
    Simulate(SimulateArgs),
    /// Solve one design problem from a CSV of covariates and nuisance values.
    Design(DesignArgs),
    /// Evaluate pooled and aggregated asymptotic covariances.
    Variance(VarianceArgs),
    /// Recompute estimates from a stored experiment record.
    Replay(ReplayArgs),
    /// Run one experiment and store its record.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// Study configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override any configuration key, e.g. `--set dgp.dim=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, value_enum)]
    nuisance: Option<NuisanceArg>,
    #[arg(long, value_enum)]
    estimand: Option<EstimandArg>,
    /// Comma-separated methods such as `flexible/pooled,binned/binned`.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Skip asymptotic relative efficiencies.
    #[arg(long)]
    no_asymptotic: bool,
}

#[derive(Args)]
struct DesignArgs {
    /// CSV with columns x1..xd, v0, v1, prior_mix.
    #[arg(long)]
    data: PathBuf,
    /// Optional TOML with design settings; flags below take precedence.
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Family: constant, monotone, lipschitz[:L], expit-hull, binned[:bins].
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    budget_low: Option<f64>,
    #[arg(long)]
    budget_high: Option<f64>,
    /// Share of the current batch in the pooled sample.
    #[arg(long)]
    current_weight: Option<f64>,
    #[arg(long, value_enum)]
    estimand: Option<EstimandArg>,
    /// Output JSON path; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VarianceArgs {
    /// Variance request (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Evaluate the covariate-shift counterexample instead.
    #[arg(long)]
    counterexample: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Experiment record (JSON).
    #[arg(long)]
    record: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![EstimatorArg::Pooled])]
    estimator: Vec<EstimatorArg>,
    #[arg(long, value_enum, default_value_t = NuisanceArg::Estimated)]
    nuisance: NuisanceArg,
    #[arg(long, default_value_t = 4)]
    bins: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Method whose design is run.
    #[arg(long, default_value = "flexible/pooled")]
    method: String,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    /// Drop covariates from the record; replay regenerates them from the seed.
    #[arg(long)]
    strip_covariates: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NuisanceArg {
    Estimated,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimandArg {
    Ate,
    Pl,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EstimatorArg {
    Pooled,
    Aggregated,
    Binned,
}

impl std::fmt::Display for EstimatorArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorArg::Pooled => "pooled",
            EstimatorArg::Aggregated => "aggregated",
            EstimatorArg::Binned => "binned",
        })
    }
}

impl std::fmt::Display for NuisanceArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NuisanceArg::Estimated => "estimated",
            NuisanceArg::Oracle => "oracle",
        })
    }
}

fn nuisance_mode(a: NuisanceArg) -> NuisanceMode {
    match a {
        NuisanceArg::Estimated => NuisanceMode::Estimated,
        NuisanceArg::Oracle => NuisanceMode::Oracle,
    }
}

fn estimand(a: EstimandArg) -> Estimand {
    match a {
        EstimandArg::Ate => Estimand::Ate,
        EstimandArg::Pl => Estimand::Pl,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn load_study(args: &StudyArgs) -> Result<SimConfig> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {kv}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut named = |k: &str, v: String| overrides.push((k.to_string(), v));
    if let Some(s) = args.seed {
        named("seed", s.to_string());
    }
    if let Some(r) = args.replications {
        named("replications", r.to_string());
    }
    if let Some(b) = args.bootstrap {
        named("bootstrap", b.to_string());
    }
    if let Some(l) = args.level {
        named("level", format!("{l:?}"));
    }
    if let Some(n) = args.nuisance {
        named("nuisance", format!("\"{n}\""));
    }
    if let Some(e) = args.estimand {
        named(
            "estimand",
            match e {
                EstimandArg::Ate => "\"ate\"".into(),
                EstimandArg::Pl => "\"pl\"".into(),
            },
        );
    }
    if !args.methods.is_empty() {
        let list: Vec<String> = args.methods.iter().map(|m| format!("\"{}\"", m.trim())).collect();
        named("methods", format!("[{}]", list.join(", ")));
    }
    SimConfig::from_toml(&read_text(&args.config)?, &overrides)
}

fn parse_family(s: &str) -> Result<FamilySpec> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let bad = || Error::Config(format!("cannot parse family `{s}`"));
    Ok(match name {
        "constant" => FamilySpec::Constant,
        "monotone" => FamilySpec::Monotone,
        "lipschitz" => FamilySpec::Lipschitz {
            l: arg.map_or(Ok(1.0), |a| a.parse().map_err(|_| bad()))?,
        },
        "expit-hull" => FamilySpec::flexible_default(2),
        "binned" => FamilySpec::Binned {
            bins: arg.map_or(Ok(4), |a| a.parse().map_err(|_| bad()))?,
        },
        _ => return Err(bad()),
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_study(&args.study)?;
    if args.no_asymptotic {
        cfg.asymptotic = false;
    }
    for (slot, flag) in [
        (&mut cfg.output.csv, args.csv),
        (&mut cfg.output.json, args.json),
        (&mut cfg.output.markdown, args.markdown),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    let table = run_monte_carlo(&cfg)?;
    let o = &cfg.output;
    if o.csv.is_none() && o.json.is_none() && o.markdown.is_none() {
        write_output(None, &render_report(&table, ReportFormat::Markdown)?)
    } else {
        emit_report(&table, o)
    }
}

fn design(args: DesignArgs) -> Result<()> {
    let data = read_design_csv(BufReader::new(
        File::open(&args.data).map_err(|e| Error::Config(format!("cannot open {}: {e}", args.data.display())))?,
    ))?;
    let mut settings: DesignSettings = match &args.settings {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => DesignSettings::default(),
    };
    if let Some(f) = &args.family {
        settings.family = Some(parse_family(f)?);
    }
    if args.budget_low.is_some() || args.budget_high.is_some() {
        let lo = args.budget_low.unwrap_or(settings.budget.m_low);
        let hi = args.budget_high.unwrap_or(settings.budget.m_high);
        settings.budget = BudgetInterval::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(w) = args.current_weight {
        settings.current_weight = w;
    }
    if let Some(e) = args.estimand {
        settings.estimand = estimand(e);
    }
    let out = solve_design(&data, &settings)?;
    eprintln!(
        "design: {:?} after {} iterations, objective {:.6}",
        out.diagnostics.status, out.diagnostics.iterations, out.diagnostics.objective
    );
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&out.propensity)?)
}

fn variance(args: VarianceArgs) -> Result<()> {
    let req = match (&args.config, args.counterexample) {
        (_, true) => VarianceRequest {
            counterexample: true,
            dgp: None,
            estimand: Estimand::Ate,
            batch_sizes: Vec::new(),
            propensities: Vec::new(),
            points: 0,
            seed: 1,
        },
        (Some(p), false) => toml::from_str(&read_text(p)?).map_err(|e| Error::Config(e.to_string()))?,
        (None, false) => return Err(Error::Config("give --config or --counterexample".into())),
    };
    let out = evaluate_variance(&req)?;
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn replay_cmd(args: ReplayArgs) -> Result<()> {
    let record: ExperimentRecord =
        serde_json::from_str(&read_text(&args.record)?).map_err(|e| Error::Config(format!("bad record: {e}")))?;
    let opts = ReplayOptions {
        estimators: args
            .estimator
            .iter()
            .map(|e| match e {
                EstimatorArg::Pooled => EstimatorChoice::Pooled,
                EstimatorArg::Aggregated => EstimatorChoice::Aggregated,
                EstimatorArg::Binned => EstimatorChoice::Binned,
            })
            .collect(),
        nuisance: nuisance_mode(args.nuisance),
        bins: args.bins,
    };
    let reports = replay(&record, &opts)?;
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&reports)?)
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = load_study(&args.study)?;
    let method: Method = args.method.parse()?;
    let mut record = single_experiment(&cfg, method, args.replication)?;
    if args.strip_covariates {
        record = record.without_covariates();
    }
    write_output(args.out.as_deref(), &serde_json::to_string(&record)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Design(a) => design(a),
        Command::Variance(a) => variance(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
