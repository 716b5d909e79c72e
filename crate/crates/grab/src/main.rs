use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grab::cli::{cmd_bench, cmd_herding, cmd_run, CliError, HerdingArgs};
use grab::config::Overrides;
use grab_core::{KernelKind, Variant};

#[derive(Parser)]
#[command(name = "grab", version, about = "Gradient-balancing example orderers for SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured variant and seed, writing CSVs and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
    /// Measure herding discrepancy of an ordering on Gaussian vectors.
    Herding(HerdingFlags),
    /// Time each variant against random reshuffling.
    Bench {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
}

#[derive(Args)]
struct OverrideFlags {
    /// Output directory (beats GRAB_OUTPUT_DIR and the config file).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads; 0 picks one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
}

impl From<OverrideFlags> for Overrides {
    fn from(f: OverrideFlags) -> Self {
        Overrides {
            output_dir: f.output_dir,
            seeds: f.seeds,
            epochs: f.epochs,
            workers: f.workers,
            variants: f.variants,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelFlag {
    Deterministic,
    Probabilistic,
}

#[derive(Args)]
struct HerdingFlags {
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value = "MeanBalance")]
    variant: Variant,
    #[arg(long, value_enum, default_value = "deterministic")]
    kernel: KernelFlag,
    /// Bound for the probabilistic kernel; omitted means automatic.
    #[arg(long)]
    c_bound: Option<f64>,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides.into()).map(|s| {
            for v in &s.variants {
                eprintln!(
                    "{:<20} loss {:>10} acc {:>8}",
                    v.variant.name(),
                    fmt(v.final_train_loss),
                    fmt(v.final_test_accuracy)
                );
            }
        }),
        Command::Bench { config, overrides } => {
            cmd_bench(&config, &overrides.into(), io::stdout().lock()).map(|_| ())
        }
        Command::Herding(h) => {
            let args = HerdingArgs {
                n: h.n,
                d: h.d,
                epochs: h.epochs,
                variant: h.variant,
                kernel: match h.kernel {
                    KernelFlag::Deterministic => KernelKind::Deterministic,
                    KernelFlag::Probabilistic => KernelKind::Probabilistic,
                },
                c_bound: h.c_bound,
                depth: h.depth,
                batch_size: h.batch_size,
                seed: h.seed,
            };
            cmd_herding(&args, io::stdout().lock()).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}
