mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, Outcome};
use error::CliError;
use wizbook::par::Exec;

#[derive(Parser)]
#[command(name = "wizbook", version, about = "Wizard training, magic-book distillation, synthesis and BMC")]
struct Cli {
    /// TOML configuration.
    #[arg(short, long, global = true, default_value = "wizbook.toml")]
    config: PathBuf,
    /// Print the JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Override the artifact directory.
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the wizard by Q-learning.
    Train,
    /// Distill the wizard into a tree or forest book.
    Extract,
    /// Agreement and macro-F1 of the book against the wizard.
    Fidelity,
    /// Passengers collected per episode by wizard, book and baselines.
    Perf,
    /// Build and export the advice arena.
    Arena,
    /// Solve the advice game and evaluate the controller.
    Synth,
    /// Solve the bus game against the book-restricted taxi.
    Multiagent,
    /// Enumerate witnesses for the configured specs and bounds.
    Bmc,
    /// Gather a first-passenger dataset and fit an explanation tree.
    Xai,
    /// Roll out one policy.
    Simulate {
        #[arg(long, default_value = "book")]
        policy: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check exported traces against the book and wizard.
    Replay { traces: PathBuf },
}

fn load_config(cli: &Cli) -> Result<config::Config, CliError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| CliError::io(&cli.config, e))?;
    let mut cfg: config::Config =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", cli.config.display())))?;
    cfg.grid.validate().map_err(|e| CliError::Validation(format!("grid: {e}")))?;
    if let Some(a) = &cli.artifacts {
        cfg.paths.artifacts = a.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let ctx = Ctx { cfg: load_config(cli)?, exec: if cli.sequential { Exec::Sequential } else { Exec::Parallel } };
    match &cli.cmd {
        Cmd::Train => commands::train(&ctx),
        Cmd::Extract => commands::extract(&ctx),
        Cmd::Fidelity => commands::fidelity_cmd(&ctx),
        Cmd::Perf => commands::perf(&ctx),
        Cmd::Arena => commands::arena(&ctx),
        Cmd::Synth => commands::synth(&ctx),
        Cmd::Multiagent => commands::multiagent(&ctx),
        Cmd::Bmc => commands::bmc_cmd(&ctx),
        Cmd::Xai => commands::xai_cmd(&ctx),
        Cmd::Simulate { policy, steps, out } => commands::simulate(&ctx, policy, *steps, out.as_deref()),
        Cmd::Replay { traces } => commands::replay(&ctx, traces),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serializes"));
            } else {
                println!("{}", out.summary);
            }
            match out.negative {
                Some(msg) => {
                    eprintln!("wizbook: {msg}");
                    ExitCode::from(4)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("wizbook: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
