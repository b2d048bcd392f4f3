use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fibre_transport_cli::{execute, write_outputs, CliError, Command, Overrides, RunConfig};

/// Checks transports along paths on fibre bundles, driven by a TOML config.
#[derive(Parser, Debug)]
#[command(name = "fibre-transport", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the RK4 step of connection backends.
    #[arg(long, global = true)]
    step: Option<f64>,

    /// Replaces every tolerance in the config.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Output directory; without one the JSON report goes to stdout.
    #[arg(long, global = true, env = "FIBRE_TRANSPORT_OUT")]
    out: Option<PathBuf>,

    /// Include per-entry wall-clock timings (makes reports nondeterministic).
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Transport configured fibre elements along paths.
    Transport,
    /// Run the transport laws, parallel-transport axioms and bridge round trips.
    Check,
    /// Factorize transports through a model fibre and check gauges.
    Factorize,
    /// Holonomy of connection backends around closed paths.
    Holonomy,
    /// Recover horizontal spaces of connections from their transports.
    ReconstructHorizontal,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Transport => Command::Transport,
            Cmd::Check => Command::Check,
            Cmd::Factorize => Command::Factorize,
            Cmd::Holonomy => Command::Holonomy,
            Cmd::ReconstructHorizontal => Command::ReconstructHorizontal,
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Io("--config is required".into()))?;
    let source = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let cfg = RunConfig::from_toml(&source).map_err(|e| e.in_file(path))?;
    let out = cli.out.clone().or_else(|| cfg.out.clone());
    let overrides = Overrides { seed: cli.seed, step: cli.step, tolerance: cli.tol, out: None, timings: cli.timings };
    let command = Command::from(cli.command);
    let run = execute(command, cfg, &overrides, Some(&source)).map_err(|e| e.in_file(path))?;
    match out {
        Some(dir) => {
            for f in write_outputs(&run, &dir)? {
                eprintln!("wrote {}", f.display());
            }
        }
        None => print!("{}", run.report.to_json()),
    }
    let r = &run.report;
    eprintln!(
        "{}: {} entries, {} failed: {}",
        r.command,
        r.entries.len(),
        r.failed(),
        if r.pass { "PASS" } else { "FAIL" }
    );
    Ok(r.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
