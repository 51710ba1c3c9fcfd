//! `isac-sim`: runs one experiment pipeline from a TOML configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isac_harness::config::{load_config, ExperimentConfig, Pipeline};
use isac_harness::pipelines::run_pipeline;
use isac_harness::HarnessError;

/// Wideband ISAC simulation harness.
#[derive(Debug, Parser)]
#[command(name = "isac-sim", version, about)]
struct Cli {
    /// Experiment configuration file; defaults are used when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed, overriding the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Pipeline to run; the configured pipeline runs when omitted.
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Sweep the SE-CRB Pareto boundary.
    SweepPareto,
    /// Detect users and run squint-aware beam tracking.
    Track,
    /// Emit the squint trajectory, per-subcarrier pointing and beam patterns.
    BeamPattern,
    /// Frame-level efficiency of the RF-only and vision-aided frames.
    Efficiency,
    /// Check SE and CRB against user-target separation.
    CheckProp1,
    /// Check gain against distance to the beam trajectory.
    CheckProp2,
    /// Full loss-driven precoder search from detection to efficiency.
    LossOpt,
}

impl Command {
    fn pipeline(self) -> Pipeline {
        match self {
            Command::SweepPareto => Pipeline::ParetoSweep,
            Command::Track => Pipeline::TrackingEval,
            Command::BeamPattern => Pipeline::BeamPattern,
            Command::Efficiency => Pipeline::Efficiency,
            Command::CheckProp1 => Pipeline::Prop1Check,
            Command::CheckProp2 => Pipeline::Prop2Check,
            Command::LossOpt => Pipeline::LossOpt,
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::for_pipeline(cli.command.map_or(Pipeline::ParetoSweep, Command::pipeline)),
    };
    if let Some(cmd) = cli.command {
        cfg.pipeline = cmd.pipeline();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = resolve(&cli).and_then(|cfg| run_pipeline(&cfg));
    match outcome {
        Ok(run) => {
            let verdict = match run.pass {
                Some(true) => " (pass)",
                Some(false) => " (fail)",
                None => "",
            };
            println!("{}: wrote {} files to {}{verdict}", run.pipeline.name(), run.files.len(), run.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
