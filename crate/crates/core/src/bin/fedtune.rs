use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedtune::error::{Error, Result, ResultExt};
use fedtune::federation::RunOptions;
use fedtune::harness::{cmd_partition, cmd_report, cmd_train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedtune", version, about = "Federated fine-tuning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; keys left out keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set optimizer.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Experiment seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (same as `--set output.dir=PATH`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition the dataset and write shard CSVs plus a manifest.
    Partition(ConfigArgs),
    /// Train and write config.txt, shards, metrics.csv and model.bin.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Run clients on a thread pool between aggregations.
        #[arg(long)]
        parallel: bool,
    },
    /// Summarize metrics files and draw SVG curves.
    Report {
        /// metrics.csv files, one per run.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Directory for summary.txt and the charts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).context(|| path.display().to_string())?
        }
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.to_str().ok_or_else(|| Error::config("--out is not valid UTF-8"))?.to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition(args) => {
            let cfg = resolve(&args)?;
            let (manifest, entries) = cmd_partition(&cfg)?;
            for e in &entries {
                println!("shard {} size {} histogram {:?}", e.shard, e.size, e.histogram);
            }
            println!("wrote {}", manifest.display());
        }
        Command::Train { args, parallel } => {
            let cfg = resolve(&args)?;
            let opts = RunOptions {
                parallel,
                ..RunOptions::default()
            };
            let run = cmd_train(&cfg, &opts)?;
            if let Some(last) = run.log.final_global_record() {
                let f1 = last.macro_f1.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                println!("final round {} train loss {:.6} macro_f1 {f1}", last.round, last.loss.unwrap_or(f64::NAN));
            }
            println!("wrote {}", run.dir.display());
        }
        Command::Report { metrics, out } => {
            let report = cmd_report(&metrics, out.as_deref())?;
            print!("{}", report.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
