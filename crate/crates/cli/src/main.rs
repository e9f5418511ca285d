mod args;
mod cmd;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;
use sonoscan_core::ocr::OcrError;

use crate::args::{Cli, Command};
use crate::config::{ConfigError, PipelineConfig, DEFAULT_SEED};

pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_EXTERNAL: u8 = 5;

/// Settings shared by every subcommand after merging flags over config.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub seed: u64,
    pub workers: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<OcrError>() {
            return match e {
                OcrError::EmptyCommand | OcrError::RotationStep { .. } => EXIT_CONFIG,
                OcrError::CommandMissing { .. }
                | OcrError::NonZeroExit { .. }
                | OcrError::MalformedOutput { .. } => EXIT_EXTERNAL,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn context(cli: &Cli) -> anyhow::Result<Ctx> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let workers = match cli.workers.or(cfg.workers) {
        Some(0) => return Err(ConfigError::Invalid("--workers must be at least 1".into()).into()),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        workers,
        cfg,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = context(&cli)?;
    match cli.command {
        Command::Scan(a) => cmd::scan::run(&ctx, a),
        Command::Train(a) => cmd::train::run(&ctx, a),
        Command::Dedup(a) => cmd::dedup::run(&ctx, a),
        Command::Cluster(a) => cmd::cluster::run(&ctx, a),
        Command::Pii(a) => cmd::pii::run(&ctx, a),
        Command::Eval(a) => cmd::eval::run(&ctx, a),
        Command::Serve(a) => cmd::serve::run(&ctx, a),
        Command::BoundaryBand(a) => cmd::band::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
