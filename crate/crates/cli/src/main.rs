use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mgan_core::harness::{run_analyze, run_eval, run_train};
use mgan_core::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "mgan", version, about = "Multi-graph attention value decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint; prints JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export embeddings, credit weights and PCA projections as CSV.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::StructureMismatch { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let out = out
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| {
                    PathBuf::from(format!("runs/{}_{}_seed{}", cfg.env.name(), cfg.algorithm, cfg.train.seed))
                });
            cfg.out_dir = Some(out.display().to_string());
            let summary = run_train(&cfg, &out)?;
            if let Some(last) = summary.metrics.last() {
                println!("{}", serde_json::to_string(last)?);
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Eval { ckpt, env, episodes, seed } => {
            let result = run_eval(&ckpt, &env, episodes, seed)?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Analyze { ckpt, env, episodes, out, seed } => {
            let summary = run_analyze(&ckpt, &env, episodes, &out, seed)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
