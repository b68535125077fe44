use std::path::PathBuf;
use std::process::ExitCode;

use atlas_cli::{read_config, run_with_threads, validate_source, RunError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atlas-lab", about = "Simulate rank-based markets and verify pathwise identities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment listed in a config file.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on this.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        threads: Option<u32>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Print the version.
    Version,
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, out, threads } => {
            let cfg = validate_source(&read_config(&config)?)?;
            let report = run_with_threads(&cfg, out.as_deref(), threads.map(|t| t as usize))?;
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::Validate { config } => {
            let cfg = validate_source(&read_config(&config)?)?;
            let names: Vec<&str> = cfg.experiments.iter().map(|e| e.name()).collect();
            println!("ok: {}", names.join(", "));
        }
        Command::Version => println!("atlas-lab {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
