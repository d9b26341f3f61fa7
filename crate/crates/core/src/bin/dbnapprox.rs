use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbnapprox::harness::{self, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(
    name = "dbnapprox",
    version,
    about = "Density approximation experiments with deep belief networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form norms and Υ_q against quadrature.
    Norms(Common),
    /// Empirical L^q rate of sampled mixtures.
    Rate(Common),
    /// KL rate of the assembled networks on a compact set.
    KlRate(Common),
    /// One end-to-end approximation with its error certificate.
    Approximate(Common),
    /// RBM synthesis of distributions on unit vectors.
    SynthesizeRbm(Common),
    /// KL against sup-norm behaviour of the ramp densities.
    Counterexample(Common),
    /// Evaluate or sample a saved network.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "DBNAPPROX_THREADS")]
    threads: Option<usize>,
    /// Replaces the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Norms(c) => (ExperimentKind::Norms, c),
        Command::Rate(c) => (ExperimentKind::Rate, c),
        Command::KlRate(c) => (ExperimentKind::KlRate, c),
        Command::Approximate(c) => (ExperimentKind::Approximate, c),
        Command::SynthesizeRbm(c) => (ExperimentKind::SynthesizeRbm, c),
        Command::Counterexample(c) => (ExperimentKind::Counterexample, c),
        Command::Eval(c) => (ExperimentKind::Eval, c),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let opts = RunOptions {
        out_dir: common.out,
        seed_override: common.seed,
    };
    match harness::run(kind, &common.config, &opts) {
        Ok(report) => {
            // a closed stdout must not turn a finished run into a failure
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{kind}: {}", report.summary);
            for f in &report.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            if report.failures > 0 {
                eprintln!("{} rows recorded as failed", report.failures);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            ExitCode::FAILURE
        }
    }
}
