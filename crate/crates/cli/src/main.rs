use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hbrick_cli::run::{self, AccuracyOutputs};
use hbrick_cli::{CliError, ExperimentConfig, ExperimentReport, Format};

#[derive(Parser)]
#[command(name = "hbrick", version, about = "Count-min sketch experiments over compact counter arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format (overrides `format`).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Config override as `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Average absolute error, tails and heavy-hitter accuracy per backend.
    RunAccuracy {
        /// Write one sketch snapshot per (trace, backend) cell here.
        #[arg(long)]
        save_snapshot: Option<PathBuf>,
        /// Write per-packet heavy-hitter flags to this CSV file.
        #[arg(long)]
        flags: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Block-RAM accounting for flat, BRICK and HBRICK level profiles.
    RunMemory {
        #[command(flatten)]
        common: Common,
    },
    /// Pipeline hazard simulation across update strategies.
    RunPipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Write the configured synthetic trace as CSV to `--out`.
    GenTrace {
        #[command(flatten)]
        common: Common,
    },
    /// Answer point queries from a saved snapshot.
    Query {
        #[arg(long)]
        snapshot: PathBuf,
        /// Flow key `src_ip,dst_ip,src_port,dst_port,proto`; repeatable.
        #[arg(long = "key")]
        keys: Vec<String>,
        /// Query every flow of this trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Flow count by minimum counter bit width.
    Histogram {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(f) = common.format {
        cfg.format = f;
    }
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, mut report: ExperimentReport, started: Instant) -> Result<(), CliError> {
    report.wall_clock_ms = started.elapsed().as_millis() as u64;
    let text = report.render(cfg.format);
    match &cfg.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    match cli.command {
        Command::RunAccuracy {
            save_snapshot,
            flags,
            common,
        } => {
            let cfg = load(&common)?;
            let outputs = AccuracyOutputs {
                snapshot_dir: save_snapshot.as_deref(),
                flags: flags.as_deref(),
            };
            let r = run::run_accuracy(&cfg, &outputs)?;
            emit(&cfg, r, started)
        }
        Command::RunMemory { common } => {
            let cfg = load(&common)?;
            let r = run::run_memory(&cfg)?;
            emit(&cfg, r, started)
        }
        Command::RunPipeline { common } => {
            let cfg = load(&common)?;
            let r = run::run_pipeline(&cfg)?;
            emit(&cfg, r, started)
        }
        Command::GenTrace { common } => {
            let cfg = load(&common)?;
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| CliError::config("gen-trace needs --out PATH"))?;
            let n = run::gen_trace(&cfg, &out)?;
            eprintln!("wrote {n} packets to {}", out.display());
            Ok(())
        }
        Command::Query {
            snapshot,
            keys,
            trace,
            common,
        } => {
            let cfg = load(&common)?;
            let r = run::query(&cfg, &snapshot, &keys, trace.as_deref())?;
            emit(&cfg, r, started)
        }
        Command::Histogram { common } => {
            let cfg = load(&common)?;
            let r = run::histogram(&cfg)?;
            emit(&cfg, r, started)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
