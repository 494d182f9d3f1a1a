//! `fblab`: runs scenarios of the free-boundary problem `u_t - Δu = χ{u>0}`,
//! exports fields and runs the acceptance suite.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 invalid configuration
//! or arguments, 3 a numerical check failed (the manifest is still written).

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fblab_core::acceptance::{self, CriterionResult, KNOWN_UNATTAINABLE};
use fblab_core::grid::io;
use fblab_core::pipeline::config::{parse_stage_list, RunConfig, Stage};
use fblab_core::pipeline::{run_scenario, MANIFEST_FILE, OUT_DIR_ENV};
use fblab_core::solver::ScenarioLabel;
use fblab_core::weiss::WeissVariant;
use fblab_core::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "fblab", version, about = "Numerical laboratory for u_t - Δu = χ{u>0}")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario through the requested stages and write a manifest.
    Run(RunArgs),
    /// Convert a stored field to CSV or re-encode it.
    Export(ExportArgs),
    /// Run the acceptance criteria.
    Acceptance(AcceptanceArgs),
    /// Print the built-in scenarios and their default stages.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario label; required without --config.
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated stages, e.g. `solve,boundary,weiss`.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "fblab-out")]
    out_dir: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    eps_min: Option<f64>,
    /// Monotonicity constant `c` in `u_t ≥ c`.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `paper-def` or `proof-2x`.
    #[arg(long)]
    weiss_variant: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Fbf,
}

#[derive(Args)]
struct ExportArgs {
    /// Field file in the FBLF container format.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: ExportFormat,
    /// Destination; CSV goes to stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AcceptanceArgs {
    /// Comma-separated criterion ids; all by default.
    #[arg(long)]
    only: Option<String>,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config(_) | Error::Parameter { .. } | Error::Scenario(_)) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, error: Error::Config(msg.into()).into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Export(args) => export(args),
        Command::Acceptance(args) => run_acceptance(args),
        Command::ListScenarios => {
            list_scenarios();
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error chain joined by `: `, skipping causes whose text the previous
/// message already contains.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn core_failure(e: Error) -> Failure {
    Failure::from(anyhow::Error::new(e))
}

fn effective_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let scenario = args
        .scenario
        .as_deref()
        .map(|s| s.parse::<ScenarioLabel>().map_err(|e| config_error(e.to_string())))
        .transpose()?;
    let mut cfg = match (&args.config, scenario) {
        (Some(path), _) => RunConfig::from_path(path).map_err(core_failure)?,
        (None, Some(label)) => RunConfig::for_scenario(label),
        (None, None) => return Err(config_error("either --config or --scenario is required")),
    };
    if let Some(label) = scenario {
        cfg.scenario = label;
    }
    if let Some(s) = &args.stages {
        cfg.stages = Some(parse_stage_list(s).map_err(|e| config_error(e.to_string()))?);
    }
    if let Some(v) = args.dim {
        cfg.grid.dim = v;
    }
    if let Some(v) = args.nx {
        cfg.grid.nx = v;
    }
    if let Some(v) = args.nt {
        cfg.grid.nt = Some(v);
    }
    if let Some(v) = args.eps_min {
        cfg.schedule.eps_min = v;
    }
    if let Some(v) = args.c {
        cfg.c = Some(v);
    }
    if let Some(v) = args.alpha {
        cfg.analysis.alpha = v;
    }
    if let Some(v) = args.gamma {
        cfg.analysis.gamma = v;
    }
    if let Some(v) = &args.weiss_variant {
        cfg.analysis.weiss_variant = v.parse::<WeissVariant>().map_err(|e| config_error(e.to_string()))?;
    }
    cfg.validate().map_err(core_failure)?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<u8, Failure> {
    let cfg = effective_config(&args)?;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(0);
    }
    let manifest = run_scenario(&cfg, &args.out_dir).map_err(core_failure)?;
    for rec in &manifest.stages {
        let reason = rec.reason.as_deref().map(|r| format!(" ({r})")).unwrap_or_default();
        println!("{:<10} {:?}{reason}", rec.stage.as_str(), rec.status);
        for w in &rec.warnings {
            println!("           warning: {w}");
        }
    }
    println!("manifest: {}", args.out_dir.join(MANIFEST_FILE).display());
    Ok(if manifest.pass { 0 } else { EXIT_NUMERIC })
}

fn export(args: ExportArgs) -> Result<u8, Failure> {
    let u = io::read_binary(&args.input).map_err(core_failure)?;
    match (args.format, &args.output) {
        (ExportFormat::Csv, Some(path)) => io::write_csv(&u, path).map_err(core_failure)?,
        (ExportFormat::Csv, None) => match io::write_csv_to(&u, std::io::stdout().lock()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                return Err(anyhow::Error::new(e).context("writing to stdout").into());
            }
            _ => {}
        },
        (ExportFormat::Fbf, Some(path)) => io::write_binary(&u, path).map_err(core_failure)?,
        (ExportFormat::Fbf, None) => return Err(config_error("--format fbf needs --output")),
    }
    Ok(0)
}

fn parse_ids(s: &str) -> Result<Vec<u32>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.parse::<u32>() {
            Ok(id) if (1..=acceptance::CRITERION_COUNT).contains(&id) => Ok(id),
            _ => Err(config_error(format!("criterion id `{p}` is not in 1..={}", acceptance::CRITERION_COUNT))),
        })
        .collect()
}

fn run_acceptance(args: AcceptanceArgs) -> Result<u8, Failure> {
    let ids = match &args.only {
        Some(s) => parse_ids(s)?,
        None => (1..=acceptance::CRITERION_COUNT).collect(),
    };
    let mut results: Vec<CriterionResult> = Vec::with_capacity(ids.len());
    for id in ids {
        let r = acceptance::run_criterion(id).expect("id validated");
        println!("{r}");
        results.push(r);
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    for r in results.iter().filter(|r| !r.pass && KNOWN_UNATTAINABLE.contains(&r.id)) {
        println!("note: criterion {} is documented as unattainable as stated", r.id);
    }
    if let Some(path) = &args.json {
        write_json(path, &results)?;
    }
    Ok(if passed == results.len() { 0 } else { EXIT_NUMERIC })
}

fn write_json(path: &Path, results: &[CriterionResult]) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(results).context("serialising results")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn list_scenarios() {
    for label in ScenarioLabel::ALL {
        let stages: Vec<&str> = Stage::defaults_for(label).into_iter().map(Stage::as_str).collect();
        println!("{:<20} [{}] {}", label.as_str(), stages.join(","), label.description());
    }
}
