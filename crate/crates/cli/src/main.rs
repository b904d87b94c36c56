use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heom_cli::commands::{self, Overrides};
use heom_cli::{parse_config, CliError, CliResult, RunSpec};

const MEM_BUDGET_VAR: &str = "HEOM_MEM_BUDGET";

#[derive(Debug, Parser)]
#[command(name = "heom", version, about = "Hierarchical equations of motion solver")]
struct Cli {
    /// Output path, overriding `output.path` in the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Stochastic seed, overriding `stochastic.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve at a fixed hierarchy depth and write a CSV time series.
    Run { config: PathBuf },
    /// Sweep the depth schedule and print a JSON convergence report.
    Converge { config: PathBuf },
    /// Compare the bath decomposition against quadrature.
    Bcf { config: PathBuf },
    /// Stochastic-decoupling ensemble mean with standard errors.
    Stochastic { config: PathBuf },
    /// Run the built-in acceptance suite.
    Validate,
}

fn load(path: &PathBuf) -> CliResult<RunSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    parse_config(&text)
}

fn memory_budget() -> CliResult<Option<u128>> {
    match std::env::var(MEM_BUDGET_VAR) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<u128>()
            .map(Some)
            .map_err(|_| CliError::validation(MEM_BUDGET_VAR, format!("expected a byte count, got \"{v}\""))),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable report")
}

fn execute(cli: Cli) -> CliResult<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::validation("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation("--threads", e.to_string()))?;
    }
    let overrides = Overrides {
        output: cli.output,
        seed: cli.seed,
        memory_budget: memory_budget()?,
    };
    match cli.command {
        Command::Run { config } => {
            let path = commands::cmd_run(&load(&config)?, &overrides)?;
            eprintln!("wrote {}", path.display());
            Ok(true)
        }
        Command::Converge { config } => {
            let summary = commands::cmd_converge(&load(&config)?, &overrides)?;
            println!("{}", json(&summary));
            Ok(summary.converged)
        }
        Command::Bcf { config } => {
            let summary = commands::cmd_bcf(&load(&config)?, &overrides)?;
            println!("{}", json(&summary));
            Ok(true)
        }
        Command::Stochastic { config } => {
            let path = commands::cmd_stochastic(&load(&config)?, &overrides)?;
            eprintln!("wrote {}", path.display());
            Ok(true)
        }
        Command::Validate => {
            let results = commands::cmd_validate();
            print!("{}", commands::render_validation(&results));
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
