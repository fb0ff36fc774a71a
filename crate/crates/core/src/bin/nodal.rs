use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use nodal_core::config::{exit_code, RunConfig};
use nodal_core::run::{execute, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Solve,
    Flow,
    Verify,
    Spectrum,
}

/// Sign-changing critical points of nonsmooth energies.
#[derive(Debug, Parser)]
#[command(name = "nodal", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Start field: `zero`, `[±][c*]phi<k>` or a field CSV path.
    #[arg(long)]
    start: Option<String>,
    /// Stop after writing this many checkpoints.
    #[arg(long, hide = true)]
    interrupt_after: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let cmd = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Flow => Command::Flow,
        Cmd::Verify => Command::Verify,
        Cmd::Spectrum => Command::Spectrum,
    };
    let opts = RunOptions {
        out,
        start: cli.start,
        interrupt_after: cli.interrupt_after,
    };
    match execute(cmd, &cfg, &opts) {
        Ok(o) => {
            println!("{}", o.summary);
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
