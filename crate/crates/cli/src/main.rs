//! Command line entry point.
//!
//! Exit codes: 0 success, 1 execution failure, 2 invalid config,
//! 3 a configured check failed (`run` only).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};

use semirec_cli::config::ScenarioConfig;
use semirec_cli::gen_data::generate_synthetic_data;
use semirec_cli::report::write_outputs;
use semirec_cli::scenarios::run_scenario;

#[derive(Parser)]
#[command(
    name = "semirec",
    about = "Semilinear boundary-data reconstruction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory, overriding the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed, overriding the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Treat warnings as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report.
    Run { config: PathBuf },
    /// Generate synthetic measurement files for a config.
    GenData { config: PathBuf },
    /// Check a config file without running anything.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf, cli: &Cli) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.display().to_string();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    match &cli.command {
        Command::Validate { config } => match ScenarioConfig::load(config) {
            Ok(c) => {
                println!("config ok: scenario {}", c.scenario.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config invalid: {e:#}");
                ExitCode::from(2)
            }
        },
        Command::GenData { config } => {
            let config = match load(config, &cli) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config invalid: {e:#}");
                    return ExitCode::from(2);
                }
            };
            let out_dir = PathBuf::from(&config.out_dir);
            let started = Instant::now();
            match generate_synthetic_data(&config, &out_dir) {
                Ok(files) => {
                    for f in files {
                        println!("wrote {}", out_dir.join(f).display());
                    }
                    eprintln!("gen-data finished in {} ms", started.elapsed().as_millis());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("gen-data failed: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Run { config } => {
            let config = match load(config, &cli) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config invalid: {e:#}");
                    return ExitCode::from(2);
                }
            };
            let out_dir = PathBuf::from(&config.out_dir);
            let started = Instant::now();
            let report = match run_scenario(&config, &out_dir) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("scenario failed: {e:#}");
                    return ExitCode::FAILURE;
                }
            };
            if let Err(e) = write_outputs(&report, &out_dir) {
                eprintln!("cannot write outputs: {e:#}");
                return ExitCode::FAILURE;
            }
            for c in &report.checks {
                let status = if c.pass { "pass" } else { "FAIL" };
                println!(
                    "check {}: {} {} {} -> {status}",
                    c.name, c.value, c.op, c.threshold
                );
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let pass = report.pass() && (!cli.strict || report.warnings.is_empty());
            println!(
                "scenario {}: {}",
                report.scenario,
                if pass { "PASS" } else { "FAIL" }
            );
            eprintln!(
                "scenario {} finished in {} ms",
                report.scenario,
                started.elapsed().as_millis()
            );
            if pass {
                ExitCode::SUCCESS
            } else {
                for name in report.failures() {
                    eprintln!("failing metric: {name}");
                }
                if cli.strict && !report.warnings.is_empty() {
                    eprintln!("strict mode: warnings treated as failures");
                }
                ExitCode::from(3)
            }
        }
    }
}
