use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use opmin::commands::run_command;
use opmin::ExperimentConfig;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Plan,
    Simulate,
    Sweep,
    Bounds,
    OracleCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Plan => "plan",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Bounds => "bounds",
            Command::OracleCheck => "oracle-check",
        }
    }
}

/// Optimistic planning experiments for switched systems.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep and oracle-check.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let outcome = ExperimentConfig::load(&cli.config)
        .and_then(|c| c.with_overrides(cli.out, cli.seed, cli.threads))
        .and_then(|c| run_command(name, &c));
    match outcome {
        Ok(o) => {
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            println!("{name}: {}", o.summary);
            if o.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: command={name} kind=check_failed msg={}", o.summary);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: command={name} kind={} msg={msg}", e.kind());
            ExitCode::from(2)
        }
    }
}
