use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdre_core::rom::RankSelection;
use sdre_rom::experiment::{execute, RunPlan};
use sdre_rom::{sweep_pod_error, Algorithm, ExperimentConfig, ExperimentError, RunReport};

#[derive(Parser)]
#[command(name = "sdre-rom", version, about = "SDRE control with online identification and POD-DEIM reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Snapshots, POD/DEIM bases and reduced operators; writes basis.bin.
    Offline { config: PathBuf },
    /// One online algorithm; writes report.json and <alg>/steps.csv.
    Run {
        config: PathBuf,
        #[arg(long, value_enum)]
        alg: Algorithm,
        /// Reduced model artifact to reuse instead of rebuilding it.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Reduced-SDRE error against the full-order run for every snapshot strategy.
    Sweep {
        config: PathBuf,
        /// Comma-separated POD sizes; `rank` selects the numerical rank.
        #[arg(long, value_delimiter = ',', value_parser = parse_size)]
        r: Vec<RankSelection>,
    },
    /// Randomized property suites.
    Verify { config: PathBuf },
}

fn parse_size(s: &str) -> Result<RankSelection, String> {
    let s = s.trim();
    if s == "rank" {
        return Ok(RankSelection::default());
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or `rank`, got `{s}`")),
        Ok(r) => Ok(RankSelection::Fixed(r)),
    }
}

fn print_report(report: &RunReport) {
    if let Some(off) = &report.offline {
        println!(
            "offline: {} snapshots ({}), r = {}, DEIM sizes {:?}, rejected grid points {:?}",
            off.snapshot_columns, off.strategy, off.pod_rank, off.deim_sizes, off.rejected
        );
    }
    for run in &report.runs {
        match &run.failure {
            Some(f) => println!("{:<14} FAILED: {f}", run.algorithm),
            None => {
                let mean = run
                    .final_mean
                    .as_ref()
                    .map_or_else(String::new, |m| format!("  mu = {m:?}"));
                let held = match run.held_steps {
                    Some(n) if n > 0 => format!("  held gain on {n} steps"),
                    _ => String::new(),
                };
                println!(
                    "{:<14} J = {:.6e}  |x(T)|_inf = {:.3e}{mean}{held}",
                    run.algorithm,
                    run.cost.unwrap_or(f64::NAN),
                    run.terminal_inf_norm.unwrap_or(f64::NAN)
                );
            }
        }
    }
    for p in &report.sweep {
        match &p.failure {
            Some(f) => println!("{:<20} r={:<5} FAILED: {f}", p.strategy, p.requested),
            None => println!(
                "{:<20} r={:<5} (used {:>3})  E = {:.3e}  E_J = {:.3e}",
                p.strategy,
                p.requested,
                p.pod_rank,
                p.state_error.unwrap_or(f64::NAN),
                p.cost_error.unwrap_or(f64::NAN)
            ),
        }
    }
    for f in &report.failures {
        println!("FAILED: {f}");
    }
}

fn run(cli: Cli) -> Result<bool, ExperimentError> {
    match cli.command {
        Command::Offline { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let plan = RunPlan {
                algorithms: Vec::new(),
                offline: true,
                basis: None,
            };
            let report = execute(&cfg, &plan)?;
            print_report(&report);
            Ok(!report.has_numerical_failure())
        }
        Command::Run { config, alg, basis } => {
            let cfg = ExperimentConfig::load(&config)?;
            let plan = RunPlan {
                algorithms: vec![alg],
                offline: false,
                basis,
            };
            let report = execute(&cfg, &plan)?;
            print_report(&report);
            Ok(!report.has_numerical_failure())
        }
        Command::Sweep { config, r } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = sweep_pod_error(&cfg, &r)?;
            print_report(&report);
            Ok(!report.has_numerical_failure())
        }
        Command::Verify { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let results = sdre_rom::verify::verify(&cfg);
            for r in &results {
                println!("{}", r.line());
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
