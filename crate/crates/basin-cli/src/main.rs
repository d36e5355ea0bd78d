//! `basin` command line: run declarative experiments and inspect their
//! artifacts.
//!
//! Every subcommand is a thin veneer over `basin run --config <file>` with
//! the experiment kind pinned; the config file is the contract and the
//! resolved echo written next to the results is the source of truth.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 success with
//! flagged seeds (partial).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use basin_cli::{run_config, CliError};

#[derive(Parser)]
#[command(name = "basin", version, about = "Train small MLPs and measure the basin volumes of their minima")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML)
    #[arg(long, short)]
    config: PathBuf,
    /// Override config fields, e.g. --set mc.directions=50
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overwrite an existing result for the same resolved config
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config whose kind field decides the experiment
    Run(RunArgs),
    /// Generate a dataset from the config's [dataset] block and cache it
    GenData {
        #[arg(long, short)]
        config: PathBuf,
        /// Cache file to write
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train models over the seed grid
    Train(RunArgs),
    /// Train and measure basin volumes (or measure existing checkpoints)
    Volume(RunArgs),
    /// Clean-vs-poisoned volume contrast on a base dataset
    PoisonScan(RunArgs),
    /// Volumes across dataset sizes plus the cross-landscape matrix
    DataScan(RunArgs),
    /// Volume dynamics across training checkpoints
    Grok(RunArgs),
    /// Analytic toy-basin validation of the estimator
    Oracle(RunArgs),
    /// Power-law fit of log volume against dataset size
    Fit(RunArgs),
    /// 2D loss-landscape slice
    Slice(RunArgs),
    /// Class-imbalance volume experiment
    Imbalance(RunArgs),
}

fn kind_override(kind: &str, mut args: RunArgs) -> RunArgs {
    args.overrides.insert(0, format!("kind=\"{kind}\""));
    args
}

fn run(args: RunArgs) -> Result<usize, CliError> {
    let summary = run_config(&args.config, &args.overrides, args.force)?;
    println!(
        "wrote {} (config {}, {:.1}s{})",
        summary.dir.display(),
        summary.config_hash,
        summary.wall_clock_secs,
        if summary.flagged_seeds > 0 {
            format!(", {} flagged seeds", summary.flagged_seeds)
        } else {
            String::new()
        }
    );
    Ok(summary.flagged_seeds)
}

fn gen_data(config: &PathBuf, out: &PathBuf, overrides: &[String]) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", config.display())))?;
    let patched = basin_cli::apply_overrides(&text, overrides)?;
    let cfg = basin_cli::RawConfig::from_toml(&patched)?.resolve()?;
    let factory = basin_cli::DataFactory::new(&cfg)?;
    let (train, _) = factory.train_test(cfg.seeds.split_seeds[0])?;
    basin_cli::write_dataset_cache(out, &train)?;
    println!(
        "wrote {} ({} rows, {} features, {} classes)",
        out.display(),
        train.len(),
        train.feature_dim(),
        train.num_classes
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::GenData {
            config,
            out,
            overrides,
        } => gen_data(&config, &out, &overrides).map(|()| 0),
        Command::Train(args) => run(kind_override("train", args)),
        Command::Volume(args) => run(kind_override("volume", args)),
        Command::PoisonScan(args) => run(kind_override("poison_scan", args)),
        Command::DataScan(args) => run(kind_override("data_scan", args)),
        Command::Grok(args) => run(kind_override("grok", args)),
        Command::Oracle(args) => run(kind_override("oracle", args)),
        Command::Fit(args) => run(kind_override("fit", args)),
        Command::Slice(args) => run(kind_override("slice", args)),
        Command::Imbalance(args) => run(kind_override("imbalance", args)),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
