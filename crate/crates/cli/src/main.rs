use clap::{Parser, Subcommand};
use pfbayes::experiments::{cmd_forward, cmd_homogeneous, cmd_invert, cmd_sweep, ExperimentConfig, ExperimentError};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pfbayes", version, about = "Phase-field fracture runs and Bayesian parameter inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config, or a metadata.json sidecar to rerun a previous experiment.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load-displacement run of one specimen.
    Forward(Common),
    /// Sample material parameters against a reference curve.
    Invert(Common),
    /// Closed-form bar response for a list of residual stiffnesses.
    Homogeneous(Common),
    /// Forward runs over values of one material parameter.
    Sweep(Common),
}

fn run(cli: Cli) -> Result<serde_json::Value, ExperimentError> {
    let (name, common, f): (&str, Common, fn(&ExperimentConfig) -> _) = match cli.command {
        Command::Forward(c) => ("forward", c, cmd_forward),
        Command::Invert(c) => ("invert", c, cmd_invert),
        Command::Homogeneous(c) => ("homogeneous", c, cmd_homogeneous),
        Command::Sweep(c) => ("sweep", c, cmd_sweep),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = common.out_dir {
        cfg.output.dir = dir;
    }
    let art = f(&cfg)?;
    Ok(json!({
        "status": "ok",
        "command": name,
        "dir": art.dir,
        "files": art.files,
        "summary": art.summary,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({ "status": "error", "code": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "code": e.code(), "message": e.to_string() }));
            ExitCode::from(if matches!(e, ExperimentError::Config(_)) { 2 } else { 1 })
        }
    }
}
