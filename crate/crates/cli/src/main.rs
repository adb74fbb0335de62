use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcl_cli::{cmd_ablate, cmd_gen_data, cmd_report, cmd_train, exit, CliError};
use pcl_core::data::SyntheticSpec;

/// Online class-incremental learning with a selective state-space model.
#[derive(Parser)]
#[command(name = "pcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config with flat dotted keys; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.tau=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train through the task stream and write the run artifacts.
    Train(RunArgs),
    /// Run baseline, w/o APA, w/o MF and full over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Number of seeds (overrides run.seeds).
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Incremental-accuracy curves of finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write Gaussian blobs in a CIFAR binary layout.
    GenData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 3072)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        separation: f64,
        #[arg(long, default_value_t = 0.1)]
        stddev: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let ledger = cmd_train(a.config.as_deref(), &a.set, &a.out)?;
            println!(
                "avg_accuracy {:.4}  avg_forgetting {:.4}",
                ledger.avg_accuracy, ledger.avg_forgetting
            );
        }
        Command::Ablate { run, seeds } => {
            let rows = cmd_ablate(run.config.as_deref(), &run.set, seeds, &run.out)?;
            let csv = pcl_cli::ablation_csv(&rows);
            for line in csv.lines().filter(|l| l.contains(",mean,")) {
                println!("{line}");
            }
        }
        Command::Report { runs, out } => print!("{}", cmd_report(&runs, &out)?),
        Command::GenData {
            classes,
            samples_per_class,
            dim,
            separation,
            stddev,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                num_classes: classes,
                dim,
                samples_per_class,
                separation,
                stddev,
                seed,
            };
            cmd_gen_data(&spec, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
