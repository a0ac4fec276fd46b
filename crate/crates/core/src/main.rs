use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparse_proxskip::runner::{emit_outputs, parse_config, run_search, run_single};
use sparse_proxskip::Error;

/// Federated sparse-training simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Output directory; overrides the config file.
    #[arg(long, global = true, env = "SPARSE_PROXSKIP_OUT")]
    out: Option<PathBuf>,
    /// Experiment seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for repeats and search candidates.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm with fixed hyperparameters.
    Run { config: PathBuf },
    /// Random-search γ and p for every configured algorithm.
    Search { config: PathBuf },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_OTHER);
        }
    }
    let (path, search) = match &cli.command {
        Command::Run { config } => (config, false),
        Command::Search { config } => (config, true),
    };
    let mut cfg = match parse_config(path) {
        Ok(c) => c,
        Err(Error::Io(e)) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let result = if search { run_search(&cfg) } else { run_single(&cfg) };
    let exp = match result {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Err(e) = emit_outputs(&exp, &cfg.output_dir) {
        eprintln!("error: writing outputs to {}: {e}", cfg.output_dir.display());
        return ExitCode::from(EXIT_OTHER);
    }
    for alg in &exp.summary.algorithms {
        println!(
            "{}: mean test metric {:.6} (se {:.6}){}",
            alg.name,
            alg.mean_metric,
            alg.std_error,
            if alg.any_diverged() { " [diverged]" } else { "" }
        );
    }
    if exp.summary.diverged {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    }
}
