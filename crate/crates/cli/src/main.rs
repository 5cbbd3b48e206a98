//! `brwlab`: command-line front end of the branching random walk laboratory.
//!
//! Exit codes: 0 success, 1 a hard invariant failed or the run was cut short,
//! 2 configuration error (nothing written).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use brwlab::brw_engine::Caps;
use brwlab::exec::Executor;
use brwlab::rng::SeedRecord;
use clap::{Parser, Subcommand};

use crate::commands::{Ctx, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "brwlab",
    version,
    about = "Monte Carlo laboratory for boundary-case branching random walks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Config file, or the name of a built-in model without parameters.
    #[arg(long, global = true, default_value = "binary-gaussian")]
    config: String,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config and BRWLAB_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replication budget; overrides the config.
    #[arg(long, global = true)]
    replications: Option<u64>,
    /// Depth; overrides the config.
    #[arg(long, global = true)]
    n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Boundary-case moment checks of the offspring law.
    ValidateModel,
    /// Persistence constants, ladder heights and the renewal slope.
    RwConstants,
    /// Martingales, survival and minimum of plain trees.
    Simulate,
    /// Tail of the killed minimum by the spine estimator.
    TailKill,
    /// Tail of the minimum by direct counting and by first crossings.
    TailFull,
    /// Law of the recentred minimum against the Gumbel mixture.
    LimitLaw,
    /// Every exact identity at four standard errors.
    IdentitySuite,
    /// First-crossing decomposition of the tail of the minimum.
    Decompose,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ValidateModel => "validate-model",
            Command::RwConstants => "rw-constants",
            Command::Simulate => "simulate",
            Command::TailKill => "tail-kill",
            Command::TailFull => "tail-full",
            Command::LimitLaw => "limit-law",
            Command::IdentitySuite => "identity-suite",
            Command::Decompose => "decompose",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(brwlab::Error),
}

impl From<brwlab::Error> for CliError {
    fn from(e: brwlab::Error) -> Self {
        match e {
            brwlab::Error::Config(_)
            | brwlab::Error::InvalidArgument(_)
            | brwlab::Error::UnsupportedModel { .. } => CliError::Config(e.to_string()),
            e => CliError::Run(e),
        }
    }
}

fn context(cli: &Cli) -> Result<Ctx, CliError> {
    let cfg = config::load(&cli.common.config).map_err(CliError::Config)?;
    if let Some(op) = &cfg.experiment.operation {
        if op != cli.command.name() {
            return Err(CliError::Config(format!(
                "config is for `{op}`, not `{}`",
                cli.command.name()
            )));
        }
    }
    let model = cfg.model.build()?;
    let mut exp = cfg.experiment.clone();
    if cli.common.replications.is_some() {
        exp.replications = cli.common.replications;
    }
    if cli.common.n.is_some() {
        exp.n = cli.common.n;
    }
    let exec = match cli.common.workers.or(cfg.execution.workers) {
        Some(w) => Executor::new(w)?,
        None => Executor::from_env()?,
    };
    let mut caps = Caps::default();
    if let Some(p) = cfg.execution.max_population {
        caps.max_population = p;
    }
    Ok(Ctx {
        model,
        exp,
        seed: SeedRecord::new(cli.common.seed.or(cfg.execution.seed).unwrap_or(0)),
        exec,
        out: cli
            .common
            .out
            .clone()
            .or(cfg.execution.out.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        caps,
        cache_dir: cfg.execution.cache_dir.clone(),
    })
}

fn dispatch(command: Command, ctx: &Ctx) -> Result<Outcome, CliError> {
    match command {
        Command::ValidateModel => commands::validate_model(ctx),
        Command::RwConstants => commands::rw_constants(ctx),
        Command::Simulate => commands::simulate(ctx),
        Command::TailKill => commands::tail_kill(ctx),
        Command::TailFull => commands::tail_full(ctx),
        Command::LimitLaw => commands::limit_law(ctx),
        Command::IdentitySuite => commands::identity_suite(ctx),
        Command::Decompose => commands::decompose(ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match context(&cli) {
        Ok(c) => c,
        Err(CliError::Config(m)) | Err(CliError::Run(brwlab::Error::Config(m))) => {
            eprintln!("configuration error: {m}");
            return ExitCode::from(2);
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cancel = ctx.exec.cancel_handle();
    if let Err(e) = ctrlc::set_handler(move || cancel.store(true, Ordering::Relaxed)) {
        eprintln!("warning: cannot install the interrupt handler: {e}");
    }
    match dispatch(cli.command, &ctx) {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
            if o.partial {
                eprintln!("interrupted: outputs are partial");
                ExitCode::from(1)
            } else if o.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("invariant failure: see verdicts in the JSON summary");
                ExitCode::from(1)
            }
        }
        Err(CliError::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
