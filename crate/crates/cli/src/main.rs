//! `eitphys`: generate a synthetic cohort, align it, train the per-frame
//! regressor and emit metrics and plots.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eitphys::phantom::{SplitScheme, Task};

use config::{ExperimentConfig, Overrides, VariantChoice};
use error::CliError;

#[derive(Parser)]
#[command(name = "eitphys", version, about = "Synthetic EIT phantom, training and evaluation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the cohort into <out>/dataset.
    Generate(Common),
    /// Estimate and remove device lags into <out>/aligned.
    Align(Common),
    /// Train one model per selected variant into <out>/runs.
    Train(Common),
    /// Score the test split; writes metrics.csv and summary.json.
    Eval(Common),
    /// Write target-vs-prediction SVG plots into <out>/plots.
    Report(Common),
    /// All of the above in order.
    Run(Common),
    /// Print the configuration.
    Config {
        /// Print the built-in defaults instead of the resolved configuration.
        #[arg(long)]
        defaults: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; every file is written below it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets both the cohort and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    patients: Option<usize>,
    /// Records per patient.
    #[arg(long)]
    records: Option<usize>,
    /// volume, flow, paw, pab or ptp (or 1-5).
    #[arg(long)]
    task: Option<Task>,
    /// 1, 2, 3 or all (ptp only).
    #[arg(long)]
    variant: Option<VariantChoice>,
    /// intra-patient or inter-patient.
    #[arg(long)]
    split: Option<SplitScheme>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            patients: self.patients,
            records: self.records,
            task: self.task,
            variant: self.variant,
            split: self.split,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Config { defaults: true, .. } => print!("{}", ExperimentConfig::default().to_toml()),
        Command::Config { common, .. } => print!("{}", common.resolve()?.to_toml()),
        Command::Generate(c) => {
            commands::generate(&c.resolve()?, c.force)?;
        }
        Command::Align(c) => {
            commands::align(&c.resolve()?, c.force)?;
        }
        Command::Train(c) => commands::train_all(&c.resolve()?, c.force)?,
        Command::Eval(c) => {
            commands::eval(&c.resolve()?, c.force)?;
        }
        Command::Report(c) => {
            commands::report(&c.resolve()?, c.force)?;
        }
        Command::Run(c) => {
            commands::run(&c.resolve()?, c.force)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
