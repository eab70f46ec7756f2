use std::path::PathBuf;
use std::process::ExitCode;

use attention_flow::experiments::{replay, run_scenario, Overrides, ReplayOptions, RunConfig, SCENARIOS};
use attention_flow::Error;
use clap::{Parser, Subcommand};

/// Random attention dynamics on the sphere: simulations and checks.
#[derive(Parser)]
#[command(name = "attnflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    Simulate {
        config: PathBuf,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-run a recorded run and compare its CSV outputs byte for byte.
    Replay {
        meta: PathBuf,
        /// Re-run under a different seed; only schemas are compared.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep the replayed outputs here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Warn instead of failing when the library version differs.
        #[arg(long)]
        allow_version_mismatch: bool,
    },
    /// Print the available scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Simulate { config, out, seed, threads } => {
            let cfg = RunConfig::load(&config)?;
            let rep = run_scenario(&cfg, &Overrides { out_dir: out, seed, threads })?;
            for f in &rep.meta.flags {
                eprintln!("note: {f}");
            }
            println!("{}", rep.dir.display());
        }
        Command::Replay { meta, seed, out, threads, allow_version_mismatch } => {
            let rep = replay(&meta, &ReplayOptions { seed, out_dir: out, allow_version_mismatch, threads })?;
            if let Some(w) = &rep.version_warning {
                eprintln!("warning: {w}");
            }
            if seed.is_some() {
                println!("{} of {} outputs differ under the new seed", rep.differing.len(), rep.compared.len());
            } else {
                println!("{} outputs identical", rep.compared.len());
            }
        }
        Command::ListScenarios => {
            for (name, about) in SCENARIOS {
                println!("{name:<14} {about}");
            }
        }
    }
    Ok(())
}
