//! Command-line front end: run one of the link scenarios, a lock-only
//! simulation, or a fiber-length sweep, writing CSV and report artifacts.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration error, 4 domain error,
//! 5 infeasible calibration target, 6 I/O error.

use clap::Parser;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use sqzsim_cli::run::{run_scenario, Overrides, RunKind};

/// Squeezed-light link simulator.
#[derive(Parser, Debug)]
#[command(name = "sqzsim", version, about)]
struct Cli {
    /// What to run: tlo_scan | llo_b2b | llo_10km | lock_only | sweep
    #[arg(long)]
    scenario: String,

    /// Configuration file (`section.key = value`, unit suffixes required).
    /// Without it, the SQZSIM_DEFAULTS environment variable names a default
    /// file; if neither is present the documented defaults apply.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Seed for every stochastic component of the run
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output directory (created if missing)
    #[arg(long)]
    out_dir: PathBuf,

    /// Override the record duration, in seconds
    #[arg(long)]
    duration: Option<f64>,

    /// Pin the residual phase deviation used in averaging and synthesis, rad
    #[arg(long)]
    pin_sigma: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let kind = match RunKind::parse(&cli.scenario) {
        Some(k) => k,
        None => {
            eprintln!(
                "unknown scenario `{}` (tlo_scan | llo_b2b | llo_10km | lock_only | sweep)",
                cli.scenario
            );
            return ExitCode::from(2);
        }
    };

    let config_path = cli
        .config
        .or_else(|| std::env::var_os("SQZSIM_DEFAULTS").map(PathBuf::from));
    let (config_text, config_source) = match &config_path {
        Some(p) => match fs::read_to_string(p) {
            Ok(text) => (text, p.display().to_string()),
            Err(e) => {
                eprintln!("cannot read config {}: {e}", p.display());
                return ExitCode::from(6);
            }
        },
        None => (String::new(), "builtin-defaults".to_string()),
    };

    let overrides = Overrides {
        duration: cli.duration,
        pin_sigma: cli.pin_sigma,
    };

    match run_scenario(
        kind,
        &config_text,
        &config_source,
        cli.seed,
        &cli.out_dir,
        overrides,
    ) {
        Ok(manifest) => {
            print!("{}", manifest.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
