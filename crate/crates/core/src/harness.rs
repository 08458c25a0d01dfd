//! File-level entry points behind the `mgan` command.
//!
//! A training run directory holds:
//!
//! ```text
//! resolved_config.toml   every setting, defaults included
//! run.json               version string and seed
//! metrics.jsonl          one MetricRecord per evaluation
//! checkpoints/step_N.bin one checkpoint per evaluation
//! checkpoint.bin         final parameters and optimizer state
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{analyze, weight_hp_correlation, write_analysis_csv, write_pca_csv};
use crate::autodiff::{Checkpoint, ParameterTree};
use crate::config::RunConfig;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::model::{Dims, Model};
use crate::rollout::{evaluate, EvalResult};
use crate::train::{MetricRecord, Trainer};

pub const VERSION: &str = concat!("mgan-core ", env!("CARGO_PKG_VERSION"));

#[derive(Serialize)]
struct RunInfo<'a> {
    version: &'a str,
    seed: u64,
    algorithm: String,
    env: &'a str,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub metrics: Vec<MetricRecord>,
    pub env_steps: u64,
    pub out_dir: PathBuf,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step}.bin")
}

/// Trains with `cfg`, writing everything into `out_dir`. Starts from
/// `cfg.checkpoint` when set.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(cfg)?;
    if let Some(path) = &cfg.checkpoint {
        trainer.restore(&Checkpoint::load(path)?)?;
    }
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    fs::write(
        out_dir.join("resolved_config.toml"),
        format!("# {VERSION}\n{}", cfg.to_toml_string()),
    )?;
    let info = RunInfo {
        version: VERSION,
        seed: cfg.train.seed,
        algorithm: cfg.algorithm.to_string(),
        env: cfg.env.name(),
    };
    fs::write(out_dir.join("run.json"), serde_json::to_string_pretty(&info)? + "\n")?;

    let mut log = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
    let mut io_error: Option<Error> = None;
    let metrics = trainer.run(|rec, t| {
        let written = serde_json::to_writer(&mut log, rec)
            .map_err(Error::from)
            .and_then(|_| log.write_all(b"\n").map_err(Error::from))
            .and_then(|_| log.flush().map_err(Error::from))
            .and_then(|_| t.checkpoint().save(ckpt_dir.join(checkpoint_name(rec.step))));
        match written {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                io_error = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    trainer.checkpoint().save(out_dir.join("checkpoint.bin"))?;
    Ok(TrainSummary {
        metrics,
        env_steps: trainer.env_steps(),
        out_dir: out_dir.to_path_buf(),
    })
}

/// A checkpoint bound to an environment, with its structure verified.
pub struct LoadedRun {
    pub config: RunConfig,
    pub env: Box<dyn Env>,
    pub model: Model,
    pub params: ParameterTree,
}

/// Loads `ckpt` and prepares `env_name`. The environment keeps the
/// checkpoint's settings when the names agree and uses defaults otherwise.
pub fn load_run(ckpt: &Path, env_name: &str) -> Result<LoadedRun> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let config = RunConfig::from_toml_str(&checkpoint.meta)
        .map_err(|e| Error::Checkpoint(format!("embedded run config is unreadable: {e}")))?;
    let env_cfg = if config.env.name() == env_name {
        config.env.clone()
    } else {
        EnvConfig::by_name(env_name)?
    };
    let env = env_cfg.build()?;
    let model = Model::new(config.algorithm, config.model.clone(), Dims::from(env.spec()));
    let expected = model.init_params(&mut ChaCha8Rng::seed_from_u64(0))?;
    expected.check_structure(&checkpoint.params)?;
    Ok(LoadedRun {
        config,
        env,
        model,
        params: checkpoint.params,
    })
}

pub fn run_eval(ckpt: &Path, env_name: &str, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::config("episodes", "must be positive"));
    }
    let mut run = load_run(ckpt, env_name)?;
    evaluate(run.env.as_mut(), &run.model, &run.params, episodes, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalyzeSummary {
    pub rows: usize,
    pub steps: usize,
    pub pca_rows: usize,
    /// Pearson correlation of credit weight with hit points, when defined.
    pub weight_hp_correlation: Option<f64>,
}

/// Writes `analysis.csv` and `pca.csv` into `out_dir`.
pub fn run_analyze(ckpt: &Path, env_name: &str, episodes: usize, out_dir: &Path, seed: u64) -> Result<AnalyzeSummary> {
    let mut run = load_run(ckpt, env_name)?;
    let result = analyze(run.env.as_mut(), &run.model, &run.params, episodes, seed)?;
    fs::create_dir_all(out_dir)?;
    write_analysis_csv(BufWriter::new(File::create(out_dir.join("analysis.csv"))?), &result.records)?;
    write_pca_csv(BufWriter::new(File::create(out_dir.join("pca.csv"))?), &result.pca)?;
    Ok(AnalyzeSummary {
        rows: result.records.len(),
        steps: result.steps,
        pca_rows: result.pca.len(),
        weight_hp_correlation: weight_hp_correlation(&result.records),
    })
}
