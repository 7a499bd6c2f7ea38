use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spdhg::harness::{cmd_partitions, cmd_rates, cmd_reference, cmd_run, ExperimentConfig, Outcome};

#[derive(Parser)]
#[command(name = "spdhg-bench", about = "SPDHG experiments on the synthetic MRI benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Averaged convergence curves for the configured schemes
    Run(Common),
    /// Rate of every partition for one block size
    Partitions(Common),
    /// b-serial and b-nice rates for every divisor of n
    Rates(Common),
    /// Build or reuse the reference solution
    Reference(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omit for the defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's run seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn load(common: &Common) -> spdhg::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: &Command) -> spdhg::Result<Outcome> {
    let common = match command {
        Command::Run(c) | Command::Partitions(c) | Command::Rates(c) | Command::Reference(c) => c,
    };
    let cfg = load(common)?;
    let out: &Path = &common.out;
    std::fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| spdhg::Error::InvalidParameter(e.to_string()))?;
    pool.install(|| match command {
        Command::Run(_) => cmd_run(&cfg, out).map(|r| r.0),
        Command::Partitions(_) => {
            let (outcome, report) = cmd_partitions(&cfg, out)?;
            println!("best  {} {}", report.best.0, report.best.1);
            println!("worst {} {}", report.worst.0, report.worst.1);
            Ok(outcome)
        }
        Command::Rates(_) => cmd_rates(&cfg, out).map(|r| r.0),
        Command::Reference(_) => {
            let (outcome, artifacts) = cmd_reference(&cfg, out)?;
            let how = if artifacts.reused { "reused" } else { "computed" };
            println!("reference {how}, residual {}", artifacts.residual);
            Ok(outcome)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(outcome) => {
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            for (scheme, reason) in &outcome.failures {
                eprintln!("failed {scheme}: {reason}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
