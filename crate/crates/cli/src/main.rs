//! driftgrid command line: run experiments, re-evaluate checkpoints, render
//! plots, and exercise the built-in correctness oracles.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 run failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use driftgrid::config;
use driftgrid::error::Error;
use driftgrid::oracles;
use driftgrid::plot;
use driftgrid::runner::{self, RunnerOverrides};

#[derive(Parser)]
#[command(
    name = "driftgrid",
    version,
    about = "Continual reinforcement learning on a non-stationary grid world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (scenario, strategy, seed) cell of an experiment config.
    ///
    /// Interrupted cells resume from their latest checkpoint. Flags beat
    /// the DRIFTGRID_OUT / DRIFTGRID_PARALLELISM environment variables,
    /// which beat the config file.
    Run {
        /// Experiment config file
        config: PathBuf,
        /// Output directory override
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent cells override
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Re-run test episodes for one finished run directory and rewrite its
    /// reward_matrix.csv.
    Eval {
        /// A {scenario}/{strategy}/{seed} run directory
        run_dir: PathBuf,
        /// Test episodes per map (defaults to the run's configured count)
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Render reward curves and the A-metric bar chart from a results
    /// directory.
    Plot {
        /// Directory previously populated by `run`
        results_dir: PathBuf,
    },
    /// Check every analytic gradient against central finite differences.
    Gradcheck,
    /// Run the built-in correctness oracles and print pass/fail per check.
    Oracle,
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            parallelism,
        } => {
            let cfg = match config::load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("{e}");
                    return exit_code_for(&e);
                }
            };
            let overrides = RunnerOverrides {
                output_dir: out,
                parallelism,
            }
            .with_env();
            match runner::run_experiment(&cfg, &overrides) {
                Ok(outcome) => {
                    println!(
                        "completed {} cell(s) under {}",
                        outcome.completed,
                        outcome.output_dir.display()
                    );
                    if outcome.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for (cell, message) in &outcome.failures {
                            eprintln!("FAILED {cell}: {message}");
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    exit_code_for(&e)
                }
            }
        }
        Command::Eval { run_dir, n_test } => match runner::eval_run_dir(&run_dir, n_test) {
            Ok(matrix) => {
                for (i, row) in matrix.rows.iter().enumerate() {
                    println!(
                        "after map {}: {:>9.2} {:>9.2} {:>9.2}",
                        i + 1,
                        row[0].mean,
                        row[1].mean,
                        row[2].mean
                    );
                }
                if matrix.rows.len() == 3 {
                    let means = matrix.means();
                    match driftgrid::eval::a_metric(&means) {
                        Ok(a) => println!("A = {a:.2}"),
                        Err(e) => eprintln!("{e}"),
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                exit_code_for(&e)
            }
        },
        Command::Plot { results_dir } => match plot::emit_plots(&results_dir) {
            Ok(files) => {
                for f in files {
                    println!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                exit_code_for(&e)
            }
        },
        Command::Gradcheck => {
            let mut failed = false;
            for (name, err) in oracles::gradient_check_report() {
                let ok = err <= 1e-4;
                failed |= !ok;
                println!(
                    "{} {name}: max relative error {err:.3e}",
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Oracle => {
            let mut failed = false;
            for oracle in oracles::all() {
                match (oracle.run)() {
                    Ok(()) => println!("PASS {}", oracle.name),
                    Err(e) => {
                        failed = true;
                        println!("FAIL {}: {e}", oracle.name);
                    }
                }
            }
            if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
