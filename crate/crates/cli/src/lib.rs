//! `chipcut` command-line harness: config loading, experiment commands and
//! report emission.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use chipcut_core::tensor::Precision;
use clap::{Args, Parser, Subcommand};

use crate::config::{Experiment, ExperimentConfig, Overrides, ValidationError};

#[derive(Debug, Parser)]
#[command(
    name = "chipcut",
    version,
    about = "Bottleneck-ratio experiments for ResNets split across chips"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the bottlenecked graph and a per-layer shape table per ratio.
    Build(RunArgs),
    /// Execute the partitioned network and write traffic reports.
    Profile(RunArgs),
    /// Train and evaluate each ratio (Tiny) and write sweep.csv.
    Sweep(RunArgs),
    /// Summarize prior outputs into summary.json and gnuplot data files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arithmetic precision; overrides `precision`.
    #[arg(long, value_parser = ["single", "double"])]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding prior `sweep` and `profile` outputs.
    pub dir: Option<PathBuf>,
    /// Same as DIR.
    #[arg(long, conflicts_with = "dir")]
    pub out: Option<PathBuf>,
    /// Take the directory from this config's `output_dir`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    pub fn experiment(&self) -> Result<Experiment, ValidationError> {
        let precision = self
            .precision
            .as_deref()
            .map(|p| {
                p.parse::<Precision>()
                    .map_err(|e| ValidationError(e.to_string()))
            })
            .transpose()?;
        ExperimentConfig::load(&self.config)?.resolve(&Overrides {
            seed: self.seed,
            precision,
            out: self.out.clone(),
        })
    }
}

impl ReportArgs {
    fn dir(&self) -> Result<PathBuf, ValidationError> {
        if let Some(d) = self.dir.clone().or_else(|| self.out.clone()) {
            return Ok(d);
        }
        match &self.config {
            Some(path) => Ok(ExperimentConfig::load(path)?.output_dir),
            None => Err(ValidationError(
                "report: give a directory, --out or --config".into(),
            )),
        }
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

/// Runs one command, printing the files it wrote.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Build(args) => {
            let exp = args.experiment()?;
            print_written(&commands::cmd_build(&exp)?);
        }
        Command::Profile(args) => {
            let exp = args.experiment()?;
            let written = match exp.precision {
                Precision::Single => commands::cmd_profile::<f32>(&exp)?,
                Precision::Double => commands::cmd_profile::<f64>(&exp)?,
            };
            print_written(&written);
        }
        Command::Sweep(args) => {
            let exp = args.experiment()?;
            let (written, notes) = match exp.precision {
                Precision::Single => commands::cmd_sweep::<f32>(&exp)?,
                Precision::Double => commands::cmd_sweep::<f64>(&exp)?,
            };
            print_written(&written);
            match notes.ratio_two_bump {
                Some(true) => {
                    println!("note: accuracy peaks at r=2 (higher than r=1 and the next ratio)")
                }
                Some(false) => println!("note: no accuracy bump at r=2"),
                None => println!(
                    "note: r=2 bump not assessed (needs trained r=1, r=2 and a larger ratio)"
                ),
            }
        }
        Command::Report(args) => {
            let dir = args.dir()?;
            print_written(&commands::cmd_report(&dir)?.0);
        }
    }
    Ok(())
}

/// 1 for problems the user must fix in the config or inputs, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<chipcut_core::Error>() {
        Some(e) => core_exit_code(e),
        None => 2,
    }
}

fn core_exit_code(err: &chipcut_core::Error) -> u8 {
    use chipcut_core::Error;
    match err {
        Error::Config(_) | Error::Usage(_) => 1,
        Error::Sweep { source, .. } => core_exit_code(source),
        _ => 2,
    }
}
