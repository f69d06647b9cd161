use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use facepipe_cli::commands;
use facepipe_cli::config::PipelineConfig;
use facepipe_core::synthetic::{run_benchmark, BenchmarkConfig};

/// 3D face identification pipeline.
#[derive(Debug, Parser)]
#[command(name = "facepipe", version)]
struct Cli {
    /// Pipeline config (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: number of processors).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Crop and align raw scans to the reference face.
    Preprocess { input: PathBuf, output: PathBuf },
    /// Expression and pose variants of preprocessed scans.
    Augment { input: PathBuf, output: PathBuf },
    /// Render clouds to normalized 16-bit PGM depth maps.
    Render {
        input: PathBuf,
        output: PathBuf,
        /// Also write random occlusion patch variants.
        #[arg(long)]
        patches: bool,
    },
    /// Identify probes against the gallery and write CMC / ROC reports.
    Evaluate {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the synthetic end-to-end benchmark and print its report as JSON.
    Benchmark {
        #[arg(long, default_value_t = 20)]
        identities: usize,
    },
    /// Write the toy model, its reference face and toy scans.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        identities: usize,
        #[arg(long, default_value_t = 2)]
        scans: usize,
        /// Sample spacing in mm.
        #[arg(long, default_value_t = 0.75)]
        spacing: f64,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let manifest = match cli.command {
        Command::Preprocess { input, output } => {
            commands::preprocess(&cfg, &input, &output, workers)?
        }
        Command::Augment { input, output } => commands::augment(&cfg, &input, &output, workers)?,
        Command::Render {
            input,
            output,
            patches,
        } => commands::render(&cfg, &input, &output, patches, workers)?,
        Command::Evaluate {
            gallery,
            probes,
            report,
        } => {
            commands::evaluate(&cfg, &gallery, &probes, &report, workers)?;
            return Ok(true);
        }
        Command::Benchmark { identities } => {
            let bench = BenchmarkConfig {
                identities,
                seed: cli.seed.unwrap_or(BenchmarkConfig::default().seed),
                ..BenchmarkConfig::default()
            };
            let report = run_benchmark(&bench)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(true);
        }
        Command::Synth {
            output,
            identities,
            scans,
            spacing,
        } => {
            commands::synth(&cfg, &output, identities, scans, spacing)?;
            return Ok(true);
        }
    };
    Ok(manifest.failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
