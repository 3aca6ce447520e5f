//! `pointprobe`: data generation, training, attacks and attribution analyses
//! for point-cloud classifiers.

mod bundle;
mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
pub use config::ConfigError;

#[derive(Debug, thiserror::Error)]
#[error("{failures} metric(s) failed; partial bundle written")]
pub struct PartialFailure {
    pub failures: usize,
    /// Every failure came from the oracle.
    pub oracle: bool,
}

#[derive(Parser)]
#[command(name = "pointprobe", version, about)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "POINTPROBE_WORKERS")]
    workers: Option<usize>,
    /// External model command speaking the line protocol.
    #[arg(long, global = true)]
    oracle_cmd: Option<String>,
    /// Shapley permutations per attribution.
    #[arg(long, global = true)]
    permutations: Option<usize>,
    #[arg(long, global = true)]
    regions: Option<usize>,
    /// Comma-separated metric list.
    #[arg(long, global = true, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as text clouds plus a manifest.
    GenData,
    /// Train the built-in classifier.
    Train,
    /// Train the built-in classifier on adversarial rotations and translations.
    AdvTrain,
    /// Attack test clouds with rotations and translations.
    Attack,
    /// Run the selected metrics and write a report bundle.
    Analyze,
    /// Summarize an analyze bundle (the --out directory) as markdown.
    Report,
    /// Train several recipes and compare their sensitivities.
    Compare,
    /// Serve a weight file over the line protocol on stdin/stdout.
    #[command(hide = true)]
    Serve {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(p) = e.downcast_ref::<PartialFailure>() {
        return if p.oracle { 3 } else { 4 };
    }
    if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
        return 2;
    }
    if commands::is_oracle(e) {
        return 3;
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let over = Overrides {
        seed: cli.seed,
        oracle_cmd: cli.oracle_cmd,
        permutations: cli.permutations,
        regions: cli.regions,
        metrics: cli.metrics,
        out: cli.out,
    };
    if let Command::Serve { weights } = &cli.command {
        return commands::serve_cmd(weights);
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &over)?;
    if cli.workers == Some(0) {
        return Err(ConfigError("--workers must be at least 1".into()).into());
    }
    pointprobe::par::with_workers(cli.workers, || match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::AdvTrain => commands::adv_train_cmd(&cfg),
        Command::Attack => commands::attack_cmd(&cfg),
        Command::Analyze => commands::analyze_cmd(&cfg),
        Command::Report => commands::report_cmd(&cfg.out).map(|r| print!("{r}")),
        Command::Compare => commands::compare_cmd(&cfg),
        Command::Serve { .. } => unreachable!(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
