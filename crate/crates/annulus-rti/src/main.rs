use std::path::PathBuf;
use std::process::ExitCode;

use annulus_rti::cli::{exit_code, run_command, Command, RunConfig};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Dispersion,
    Modes,
    EvolveLinear,
    EvolveNonlinear,
    Verify,
    Pipeline,
}

/// Rayleigh-Taylor growth rates, eigenmodes and perturbation runs in an annulus.
#[derive(Debug, Parser)]
#[command(name = "annulus-rti", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cmd = match args.command {
        Sub::Dispersion => Command::Dispersion,
        Sub::Modes => Command::Modes,
        Sub::EvolveLinear => Command::EvolveLinear,
        Sub::EvolveNonlinear => Command::EvolveNonlinear,
        Sub::Verify => Command::Verify,
        Sub::Pipeline => Command::Pipeline,
    };
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let result = cfg.and_then(|mut cfg| {
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = args.out {
            cfg.output.dir = o;
        }
        run_command(cmd, cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
