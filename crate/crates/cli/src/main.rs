use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hartree_cli::{
    blowup, check_identities, check_potential, load_config, simulate, write_outputs, CliError,
    IdentityScope, RunOutput,
};

#[derive(Parser)]
#[command(name = "hartree", version, about = "Mixture-of-Hartree-flows experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured mixture and check conservation and identities
    Simulate(RunArgs),
    /// Run the focusing collapse experiment with envelope and bound checks
    Blowup(RunArgs),
    /// Static algebraic suite: kernel identities, cutoff profile, sampling
    CheckIdentities(RunArgs),
    /// Potential hypothesis table over the configured scales
    CheckPotential(RunArgs),
    /// Cutoff-profile subset of check-identities
    CheckCutoff(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (JSON key tree)
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path config overrides, e.g. --override grid.n=64
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Where series.csv and report.json go (default: config output_dir, then .)
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replaces the config seed
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: &RunArgs, runner: impl FnOnce(&hartree_cli::ExperimentConfig) -> Result<RunOutput, CliError>) -> Result<bool, CliError> {
    let mut config = load_config(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dir = args
        .output_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let out = runner(&config)?;
    write_outputs(&out, &dir)?;
    for (name, check) in &out.report.checks {
        let value = check
            .value
            .map(|v| format!("{v:.6e}"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "{}: {name} = {value} (tol {:.1e})",
            if check.pass { "pass" } else { "FAIL" },
            check.tol
        );
    }
    println!("overall: {}", if out.report.overall { "pass" } else { "FAIL" });
    Ok(out.report.overall)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run(args, simulate),
        Command::Blowup(args) => run(args, blowup),
        Command::CheckIdentities(args) => {
            run(args, |c| check_identities(c, IdentityScope::Full))
        }
        Command::CheckPotential(args) => run(args, check_potential),
        Command::CheckCutoff(args) => {
            run(args, |c| check_identities(c, IdentityScope::CutoffOnly))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
