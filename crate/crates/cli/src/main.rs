//! `filament-lab`: dispersion tables, rational fits, Maxwell and envelope
//! runs, convergence studies, model comparisons and series diagnostics.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "filament-lab", version, about = "Maxwell-Lorentz envelope model laboratory")]
struct Cli {
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving report.json and CSV outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recorded in the report; every computation is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the four curved branches and the NLS coefficients at a carrier.
    Dispersion,
    /// Fit the rational improved-dispersion relation around a carrier.
    FitDispersion,
    /// Run the Maxwell oracle or one envelope model.
    Simulate {
        #[arg(value_enum)]
        target: Target,
    },
    /// Maxwell-versus-envelope errors across epsilon with fitted slopes.
    Converge,
    /// Run several envelope models on a shared packet.
    Compare,
    /// Check a recorded series against the expected invariants.
    Diagnose,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    Maxwell,
    Envelope,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            if let Some(msg) = &outcome.message {
                eprintln!("{msg}");
            }
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = cli.config.as_deref().ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let ctx = commands::Context::new(config, &cli.out_dir, cli.seed, cli.threads)?;
    match cli.command {
        Command::Dispersion => commands::dispersion(&ctx),
        Command::FitDispersion => commands::fit_dispersion(&ctx),
        Command::Simulate { target: Target::Maxwell } => commands::simulate_maxwell(&ctx),
        Command::Simulate { target: Target::Envelope } => commands::simulate_envelope(&ctx),
        Command::Converge => commands::converge(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
    }
}
