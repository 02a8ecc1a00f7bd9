use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kroncov::experiment::{self, Command, ExperimentError, RunContext};

#[derive(Parser)]
#[command(name = "kroncov", version, about = "Kronecker-structured spatiotemporal covariance estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw samples from an AR(1) x AR(1) Kronecker truth.
    Synth(Args),
    /// Fit one estimator to a sample CSV.
    Estimate(Args),
    /// Monte-Carlo normalized MSE over estimators and sample sizes.
    MseBench(Args),
    /// Windowed Mahalanobis anomaly detection with ROC output.
    Anomaly(Args),
    /// Kronecker and PCA spectra of a covariance.
    Spectrum(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: current directory).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo trials.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cmd: Command, args: Args) -> Result<(), ExperimentError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::Config(format!("--threads: {e}")))?;
    }
    let cfg = experiment::load_config(&args.config)?;
    let base = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_default();
    let ctx = RunContext::new(cfg, base, args.out, args.seed);
    for path in experiment::run(cmd, &ctx)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Synth(a) => (Command::Synth, a),
        Cmd::Estimate(a) => (Command::Estimate, a),
        Cmd::MseBench(a) => (Command::MseBench, a),
        Cmd::Anomaly(a) => (Command::Anomaly, a),
        Cmd::Spectrum(a) => (Command::Spectrum, a),
    };
    match run(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kroncov: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
