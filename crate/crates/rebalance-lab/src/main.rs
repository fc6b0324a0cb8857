use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rebalance_lab::config::{self, Overrides, SEED_ENV_VAR};
use rebalance_lab::{cdf, golden, matrix};

/// Workload rebalancing lab: simulate key-partitioned operators under
/// skewed, fluctuating workloads and emit plot-ready metrics.
#[derive(Parser)]
#[command(name = "rebalance-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix: every sweep point, algorithm, and repeat.
    Run(CommonArgs),
    /// Emit the cumulative distribution of per-instance load under pure
    /// hash routing.
    Cdf(CommonArgs),
    /// Execute the built-in worked examples and print pass/fail lines.
    Golden,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed; falls back to the config file, then REBALANCE_LAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Key domain size.
    #[arg(long)]
    keys: Option<u64>,
    /// Zipf skew exponent.
    #[arg(long)]
    skew: Option<f64>,
    /// Per-interval fluctuation rate.
    #[arg(long)]
    fluctuation: Option<f64>,
    /// Load imbalance tolerance.
    #[arg(long = "theta-max")]
    theta_max: Option<f64>,
    /// Migration priority exponent.
    #[arg(long)]
    beta: Option<f64>,
    /// Discretization exponent (gap is 2^r).
    #[arg(long = "level-r")]
    level_r: Option<u32>,
    /// State window in intervals.
    #[arg(long)]
    window: Option<usize>,
    /// Downstream instance count.
    #[arg(long)]
    instances: Option<usize>,
    /// Routing table capacity.
    #[arg(long = "table-capacity")]
    table_capacity: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            keys: self.keys,
            skew: self.skew,
            fluctuation: self.fluctuation,
            theta_max: self.theta_max,
            beta: self.beta,
            level_r: self.level_r,
            window: self.window,
            instances: self.instances,
            table_capacity: self.table_capacity,
            seed: self.seed,
        }
    }
}

fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| format!("{SEED_ENV_VAR} must be an unsigned integer, got `{text}`")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run(args) => {
            let env = env_seed()?;
            let spec = config::parse_config(args.config.as_deref(), &args.overrides(), env)
                .map_err(|e| e.to_string())?;
            let files = matrix::run_matrix(&spec, &args.out).map_err(|e| e.to_string())?;
            for file in &files {
                println!("wrote {}", file.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Cdf(args) => {
            let env = env_seed()?;
            let spec = config::parse_config(args.config.as_deref(), &args.overrides(), env)
                .map_err(|e| e.to_string())?;
            let path = cdf::skewness_cdf(&spec, &args.out).map_err(|e| e.to_string())?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Golden => {
            let checks = golden::run_golden_checks();
            let mut all_passed = true;
            for check in &checks {
                let status = if check.passed { "PASS" } else { "FAIL" };
                println!("{}: {status} ({})", check.name, check.detail);
                all_passed &= check.passed;
            }
            if all_passed {
                println!("{} checks passed", checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
