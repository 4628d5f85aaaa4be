//! `ordgee`: fit marginal cumulative-logit models to longitudinal ordinal CSV
//! panels with missing values, and run Monte Carlo studies of the estimators.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration,
//! 3 the estimating equations did not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ordgee::association::AssociationSpec;
use ordgee::estimators::{fit, FitOptions, Method};
use ordgee::missingness::ModelConfig;
use ordgee::parallel::with_jobs;
use ordgee::simulation::{demo_panel, run_study, Preset, Scenario};
use ordgee::{Error, Execution, OrdinalPanel};

#[derive(Parser)]
#[command(name = "ordgee", version, about = "GEE, weighted, multiple-imputation and doubly robust GEE for ordinal panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator to a CSV panel (subject,time,response,x,z1..zq).
    Fit(FitArgs),
    /// Run a Monte Carlo study and report bias, efficiency, coverage and convergence.
    Simulate(SimulateArgs),
    /// Write a synthetic demonstration panel as CSV.
    Demo(DemoArgs),
}

#[derive(Args)]
struct Common {
    /// Random seed; drawn from the OS and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all logical cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Weight of the model-based term in the doubly robust correlation estimator.
    #[arg(long)]
    omega: Option<f64>,
    /// Number of imputations for migee.
    #[arg(long)]
    imputations: Option<usize>,
    /// Monte Carlo draws when the completion count exceeds the enumeration cap.
    #[arg(long = "mc-draws")]
    mc_draws: Option<usize>,
    /// Lower bound applied to observation probabilities.
    #[arg(long = "weight-floor")]
    weight_floor: Option<f64>,
    /// Write the JSON result here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// gee, wgee, migee or drgee.
    #[arg(long, default_value = "gee")]
    method: String,
    /// Working association `family:structure`, e.g. corr:exch or lor:uniform.
    #[arg(long, default_value = "corr:ind")]
    assoc: String,
    /// JSON file with the nuisance-model predictor lists (required by wgee, migee, drgee).
    #[arg(long = "model-config")]
    model_config: Option<PathBuf>,
    /// Number of response categories (default: the largest observed response).
    #[arg(long)]
    categories: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimulateArgs {
    /// paper-table1 (misspecified nuisance models) or paper-table2 (correct ones).
    #[arg(long, default_value = "paper-table2")]
    scenario: String,
    #[arg(long)]
    n: Option<usize>,
    /// Replications kept per structure.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated structures (default: the seven reported structures).
    #[arg(long)]
    assoc: Option<String>,
    /// JSON file overriding the default nuisance-model configuration.
    #[arg(long = "model-config")]
    model_config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every value (no missing responses or covariates).
    #[arg(long)]
    complete: bool,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    NotConverged(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MalformedData { .. }
            | Error::InvalidPanel(_)
            | Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn apply_overrides(config: &mut ModelConfig, options: &mut FitOptions, common: &Common) -> Result<(), Failure> {
    if let Some(v) = common.omega {
        config.omega = v;
    }
    if let Some(v) = common.mc_draws {
        config.mc_draws = v;
    }
    if let Some(v) = common.weight_floor {
        config.weight_floor = v;
    }
    if let Some(v) = common.imputations {
        if v < 2 {
            return Err(Failure::Usage(format!("--imputations must be at least 2, got {v}")));
        }
        options.imputations = v;
    }
    // round-trip through the validating constructor
    *config = ModelConfig::from_json_str(&serde_json::to_string(config).map_err(|e| Failure::Runtime(e.to_string()))?)?;
    Ok(())
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    let method: Method = args.method.parse()?;
    let spec: AssociationSpec = args.assoc.parse()?;
    let mut config = match &args.model_config {
        Some(path) => ModelConfig::from_path(path)?,
        None if method.needs_models() => {
            return Err(Failure::Usage(format!("--model-config is required for --method {method}")));
        }
        None => ModelConfig::default(),
    };
    let panel = OrdinalPanel::from_csv_path(&args.data, args.categories)?;
    let mut options = FitOptions {
        seed: resolve_seed(args.common.seed),
        ..FitOptions::default()
    };
    apply_overrides(&mut config, &mut options, &args.common)?;
    let result = with_jobs(args.common.jobs, || fit(&panel, method, spec, &config, &options))?;
    print!("{}", result.table());
    if let Some(path) = &args.common.out {
        let json = serde_json::to_string_pretty(&result.to_json()).map_err(|e| Failure::Runtime(e.to_string()))?;
        write_out(path, &json)?;
    }
    if !result.converged {
        let d = &result.diagnostics;
        return Err(Failure::NotConverged(format!(
            "{method} {spec} did not converge after {} iterations (score norm {:.3e}, halvings {}, max shrinkage {:.3}){}",
            result.iterations,
            result.score_norm,
            d.halvings,
            d.max_shrinkage,
            d.failure.as_ref().map(|f| format!(": {f}")).unwrap_or_default()
        )));
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let preset: Preset = args.scenario.parse()?;
    let defaults = Scenario::default();
    let reps = args.reps.unwrap_or(defaults.reps);
    if reps == 0 {
        return Err(Failure::Usage("--reps must be positive".into()));
    }
    let scenario = Scenario {
        n: args.n.unwrap_or(defaults.n),
        reps,
        seed: resolve_seed(args.common.seed),
        ..defaults
    };
    scenario.validate()?;
    let mut study = preset.study(scenario);
    if let Some(list) = &args.assoc {
        study.structures = list.split(',').map(str::parse).collect::<Result<_, _>>()?;
    }
    if let Some(path) = &args.model_config {
        study.base_config = ModelConfig::from_path(path)?;
    }
    apply_overrides(&mut study.base_config, &mut study.options, &args.common)?;
    let report = with_jobs(args.common.jobs, || run_study(&study, Execution::Parallel))?;
    print!("{}", report.table());
    if let Some(path) = &args.common.out {
        write_out(path, &report.to_json()?)?;
    }
    Ok(())
}

fn cmd_demo(args: DemoArgs) -> Result<(), Failure> {
    if args.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let panel = demo_panel(args.n, resolve_seed(args.seed), !args.complete)?;
    let mut buf = Vec::new();
    panel.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| Failure::Runtime(e.to_string()))?;
    match &args.out {
        Some(path) => write_out(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
