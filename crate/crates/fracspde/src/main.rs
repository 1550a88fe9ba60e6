use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracspde::cli::{run_command, CommandKind};
use fracspde::config::{parse_config, ExperimentConfig};

/// Numerical laboratory for time-fractional stochastic heat equations
/// driven by Poisson-type Levy noise.
#[derive(Parser)]
#[command(name = "fracspde", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Parser)]
struct CommonArgs {
    /// configuration document (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory for CSVs, manifest, and plot script
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// override the configured master seed
    #[arg(long)]
    seed: Option<u64>,
    /// override the configured replica count
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Green function by both evaluation routes on a space-time grid
    Kernel(CommonArgs),
    /// Mittag-Leffler function on a grid of nonpositive arguments
    Ml(CommonArgs),
    /// one-sided stable or inverse-subordinator density
    Density(CommonArgs),
    /// Monte Carlo verification of the stochastic-integral identities
    Isometry(CommonArgs),
    /// march one mild-solution path
    Simulate(CommonArgs),
    /// ensemble moments, growth-rate fit, and intermittency envelopes
    Moments(CommonArgs),
    /// integrability constants, C*, and contraction constants
    Bounds(CommonArgs),
    /// spectral resolvent integral and its inverse
    Upsilon(CommonArgs),
    /// renewal envelope, nonlinear blow-up march, and energy certificate
    Blowup(CommonArgs),
}

impl Command {
    fn split(self) -> (CommandKind, CommonArgs) {
        match self {
            Command::Kernel(a) => (CommandKind::Kernel, a),
            Command::Ml(a) => (CommandKind::Ml, a),
            Command::Density(a) => (CommandKind::Density, a),
            Command::Isometry(a) => (CommandKind::Isometry, a),
            Command::Simulate(a) => (CommandKind::Simulate, a),
            Command::Moments(a) => (CommandKind::Moments, a),
            Command::Bounds(a) => (CommandKind::Bounds, a),
            Command::Upsilon(a) => (CommandKind::Upsilon, a),
            Command::Blowup(a) => (CommandKind::Blowup, a),
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, String> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(replicas) = args.replicas {
        config.run.replicas = replicas;
    }
    Ok(config)
}

fn main() -> ExitCode {
    // FRACSPDE_THREADS caps the worker count of parallel ensembles
    if let Ok(threads) = std::env::var("FRACSPDE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let args = Args::parse();
    let (kind, common) = args.command.split();
    let config = match load_config(&common) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    match run_command(kind, &config, &common.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
