mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::error::CliResult;
use crate::output::Output;

#[derive(Parser)]
#[command(name = "chb", version, about = "Boundary control of Cahn-Hilliard with dynamic boundary conditions")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set time.nt=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (default `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Forward solve with conservation and Newton diagnostics.
    Simulate,
    /// Projected-gradient solution of the control problem.
    Optimize,
    /// Finite-difference check of the reduced gradient.
    CheckGradient,
    /// Duality identity between sensitivity and adjoint.
    CheckAdjoint,
    /// Taylor remainder orders of the state map and the reduced cost.
    CheckTaylor,
    /// Symmetry and cross-check of the Hessian form.
    CheckHessian,
    /// Second-order sufficient condition at the computed optimum.
    SscCheck,
    /// Derivatives and structural assumptions of the potentials.
    CheckPotential,
    /// Empirical Lipschitz ratios of the state map and its derivatives.
    CheckLipschitz,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Optimize => "optimize",
            Command::CheckGradient => "check-gradient",
            Command::CheckAdjoint => "check-adjoint",
            Command::CheckTaylor => "check-taylor",
            Command::CheckHessian => "check-hessian",
            Command::SscCheck => "ssc-check",
            Command::CheckPotential => "check-potential",
            Command::CheckLipschitz => "check-lipschitz",
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = std::env::var("CHB_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let mut cfg = Config::load(cli.config.as_deref())?;
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    let dir = match &cli.out {
        Some(d) => d.clone(),
        None => PathBuf::from(cfg.str_or("output.dir", "out")?),
    };
    let out = Output::create(&dir)?;
    out.manifest(&cfg, cli.command.name(), &cli.overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Optimize => commands::optimize_cmd(&cfg, &out),
        Command::CheckGradient => commands::check_gradient(&cfg, &out),
        Command::CheckAdjoint => commands::check_adjoint(&cfg, &out),
        Command::CheckTaylor => commands::check_taylor(&cfg, &out),
        Command::CheckHessian => commands::check_hessian(&cfg, &out),
        Command::SscCheck => commands::ssc(&cfg, &out),
        Command::CheckPotential => commands::check_potential(&cfg, &out),
        Command::CheckLipschitz => commands::check_lipschitz(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
