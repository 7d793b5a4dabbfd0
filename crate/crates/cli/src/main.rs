//! `santalo`: scenario runner for log-concave heat-flow experiments.
//!
//! Exit status: 0 all checks passed, 1 a check failed, 2 configuration or
//! usage error, 3 numerical error (singularity, coverage, truncation).

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use santalo_core::potentials::Builtin;

#[derive(Parser)]
#[command(name = "santalo", version, about = "Log-concave heat flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config and SANTALO_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Multiply every check tolerance by this factor.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the potential and trace the volume product over time.
    Evolve {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write phi_t / psi_t tables per time.
        #[arg(long)]
        snapshots: bool,
    },
    /// Run verification checks and write report.json.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write primal and dual potential tables.
    Conjugate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// List built-in potentials.
    ListPotentials,
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error if a pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn resolve_out_dir(flag: &Option<PathBuf>, scenario: &config::Scenario) -> PathBuf {
    flag.clone()
        .or_else(|| scenario.out_dir.clone())
        .or_else(|| std::env::var_os("SANTALO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("santalo-out"))
}

fn dispatch(
    common: &CommonArgs,
    run: impl FnOnce(&config::Scenario, &PathBuf) -> Result<bool, runner::RunError>,
) -> u8 {
    init_threads(common.threads);
    let scenario = match config::load(&common.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let out_dir = resolve_out_dir(&common.out, &scenario);
    match run(&scenario, &out_dir) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(runner::RunError::Config(e)) => {
            eprintln!("{e}");
            2
        }
        Err(e) => {
            eprintln!("{e}");
            3
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Evolve { common, snapshots } => dispatch(common, |scenario, out| {
            runner::run_evolve(scenario, out, *snapshots).map(|()| true)
        }),
        Command::Verify { common } => dispatch(common, |scenario, out| {
            runner::run_verify(scenario, out, common.tolerance_scale)
        }),
        Command::Conjugate { common } => dispatch(common, |scenario, out| {
            runner::run_conjugate(scenario, out).map(|()| true)
        }),
        Command::ListPotentials => {
            for b in Builtin::all() {
                println!("{:<20} {}", b.name(), b.description());
            }
            0
        }
    };
    ExitCode::from(code)
}
