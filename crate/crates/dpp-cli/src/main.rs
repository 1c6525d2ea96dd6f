use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpp_cli::commands::{distributed_command, oracle_command, run_command, sweep_command};
use dpp_cli::schema::parse_problem_file;
use dpp_cli::{CliError, EXIT_BOUND_FAILURE};

/// Drift-plus-penalty runner and bound-verification harness.
#[derive(Parser)]
#[command(name = "dpp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a problem at one epsilon and verify the bounds at checkpoints.
    Run {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        epsilon: f64,
        /// Slots to simulate (default 4 * ceil(1/epsilon^2)).
        #[arg(long = "t-max")]
        t_max: Option<u64>,
        /// Comma-separated seed list for stochastic problems (default 0..29).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run at several epsilons to the 1/epsilon^2 horizon and tabulate gaps.
    Sweep {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Brute-force ground truth for a problem.
    Oracle {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a distributed problem's synchronous message-passing simulation.
    Distributed {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run {
            problem,
            epsilon,
            t_max,
            seeds,
            out,
        } => {
            let problem = parse_problem_file(&problem)?;
            run_command(&problem, epsilon, t_max, seeds, &out)
        }
        Command::Sweep {
            problem,
            epsilons,
            seeds,
            out,
        } => {
            let problem = parse_problem_file(&problem)?;
            sweep_command(&problem, &epsilons, seeds, &out)
        }
        Command::Oracle {
            problem,
            resolution,
            out,
        } => {
            let problem = parse_problem_file(&problem)?;
            oracle_command(&problem, resolution, &out)?;
            Ok(true)
        }
        Command::Distributed {
            problem,
            epsilon,
            out,
        } => {
            let problem = parse_problem_file(&problem)?;
            distributed_command(&problem, epsilon, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bound checks failed; see report output");
            ExitCode::from(EXIT_BOUND_FAILURE as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
