//! `sgsp` command line: run experiment configs, verify candidate equilibria
//! and summarize trace directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgsp_core::equilibrium::sgsp_check;
use sgsp_core::harness::{run_experiment, summarize_dir, worker_count, ExperimentConfig};
use sgsp_core::oracle::is_nash;
use sgsp_core::{PolicyProfile, SgspError, StochasticGame};

#[derive(Parser)]
#[command(name = "sgsp", version, about = "Stationary Nash equilibria of discounted stochastic games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell of an experiment config.
    Run { config: PathBuf },
    /// Certify a policy profile: SG-SP report at its exact values plus a
    /// best-response Nash test.
    Verify {
        game: PathBuf,
        policy: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Rebuild the summary tables from the sidecars in a run directory.
    Summarize { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Verify { game, policy, tol } => report(verify(&game, &policy, tol)),
        Command::Summarize { dir } => report(summarize_dir(&dir).map(|t| print!("{}", t.to_text()))),
    }
}

fn run(path: &Path) -> ExitCode {
    let prepared = ExperimentConfig::from_path(path).and_then(|c| Ok((c, worker_count()?)));
    let (config, workers) = match prepared {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&config, workers) {
        Ok(report) => {
            print!("{}", report.summary.to_text());
            for cell in report.cells.iter().filter(|c| !c.completed()) {
                let why = cell
                    .error
                    .clone()
                    .unwrap_or_else(|| format!("{:?}", cell.status));
                eprintln!("cell {} seed {} did not complete: {why}", cell.algorithm.id(), cell.seed);
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e @ SgspError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn read_policy(path: &Path) -> Result<PolicyProfile, SgspError> {
    let text = fs::read_to_string(path)?;
    // either the serialized profile or a bare [agent][state][action] array
    match serde_json::from_str::<PolicyProfile>(&text) {
        Ok(p) => Ok(p),
        Err(_) => Ok(PolicyProfile::from_rows(serde_json::from_str(&text)?)),
    }
}

fn verify(game: &Path, policy: &Path, tol: f64) -> Result<(), SgspError> {
    let game = StochasticGame::from_json(&fs::read_to_string(game)?)?;
    let policy = read_policy(policy)?;
    game.check_policy(&policy, 1e-9)?;
    let values = game.exact_value(&policy)?;
    let report = sgsp_check(&game, &values, &policy, tol)?;
    let verdict = is_nash(&game, &policy, tol)?;
    println!("objective                 {:.6e}", report.objective);
    println!("max constraint violation  {:.6e}", report.max_constraint_violation);
    println!("max sgsp violation        {:.6e}", report.max_sgsp_violation);
    println!("entries                   {}", report.total_entries());
    println!("certified (tol {tol})     {}", report.certified);
    println!("is_nash   (tol {tol})     {}", verdict.is_nash);
    println!("max deviation gain        {:.6e}", verdict.max_gain);
    Ok(())
}

fn report(result: Result<(), SgspError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                SgspError::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
