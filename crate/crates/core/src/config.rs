//! Run configuration, read from and written to TOML.
//!
//! ```toml
//! algorithm = "mgan"
//!
//! [env]
//! name = "matrix"
//! payoff = [[10.0, 0.0], [0.0, 10.0]]
//!
//! [train]
//! total_steps = 20000
//! seed = 3
//! ```
//!
//! Only `env.name` and `train.total_steps` are required.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::mixer::Algorithm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Environment steps (summed episode lengths) to train for.
    pub total_steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::epsilon_start")]
    pub epsilon_start: f64,
    #[serde(default = "defaults::epsilon_end")]
    pub epsilon_end: f64,
    #[serde(default = "defaults::epsilon_anneal_steps")]
    pub epsilon_anneal_steps: u64,
    /// Replay capacity in episodes.
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    /// Episodes per training batch.
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Training steps between target-network copies.
    #[serde(default = "defaults::target_update_period")]
    pub target_update_period: u64,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::rms_alpha")]
    pub rms_alpha: f64,
    #[serde(default = "defaults::rms_eps")]
    pub rms_eps: f64,
    #[serde(default = "defaults::grad_norm_clip")]
    pub grad_norm_clip: f64,
    /// Environment steps between greedy evaluations.
    #[serde(default = "defaults::eval_period")]
    pub eval_period: u64,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of graph encoders.
    #[serde(default = "defaults::graphs")]
    pub graphs: usize,
    #[serde(default = "defaults::hidden")]
    pub agent_hidden: usize,
    #[serde(default = "defaults::hidden")]
    pub rnn_hidden: usize,
    #[serde(default = "defaults::emb_dim")]
    pub emb_dim: usize,
    /// QMIX mixing width.
    #[serde(default = "defaults::emb_dim")]
    pub qmix_embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            graphs: defaults::graphs(),
            agent_hidden: defaults::hidden(),
            rnn_hidden: defaults::hidden(),
            emb_dim: defaults::emb_dim(),
            qmix_embed: defaults::emb_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub checkpoint: Option<String>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

pub mod defaults {
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn epsilon_start() -> f64 {
        1.0
    }
    pub fn epsilon_end() -> f64 {
        0.05
    }
    pub fn epsilon_anneal_steps() -> u64 {
        50_000
    }
    pub fn buffer_capacity() -> usize {
        5000
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn target_update_period() -> u64 {
        200
    }
    pub fn lr() -> f64 {
        5e-4
    }
    pub fn rms_alpha() -> f64 {
        0.99
    }
    pub fn rms_eps() -> f64 {
        1e-5
    }
    pub fn grad_norm_clip() -> f64 {
        10.0
    }
    pub fn eval_period() -> u64 {
        10_000
    }
    pub fn eval_episodes() -> usize {
        32
    }
    pub fn graphs() -> usize {
        4
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn emb_dim() -> usize {
        32
    }
}

impl TrainConfig {
    pub fn with_steps(total_steps: u64) -> Self {
        Self {
            total_steps,
            seed: 0,
            gamma: defaults::gamma(),
            epsilon_start: defaults::epsilon_start(),
            epsilon_end: defaults::epsilon_end(),
            epsilon_anneal_steps: defaults::epsilon_anneal_steps(),
            buffer_capacity: defaults::buffer_capacity(),
            batch_size: defaults::batch_size(),
            target_update_period: defaults::target_update_period(),
            lr: defaults::lr(),
            rms_alpha: defaults::rms_alpha(),
            rms_eps: defaults::rms_eps(),
            grad_norm_clip: defaults::grad_norm_clip(),
            eval_period: defaults::eval_period(),
            eval_episodes: defaults::eval_episodes(),
        }
    }

    /// Linear anneal from `epsilon_start` to `epsilon_end`.
    pub fn epsilon_at(&self, env_steps: u64) -> f64 {
        if env_steps >= self.epsilon_anneal_steps {
            return self.epsilon_end;
        }
        let frac = env_steps as f64 / self.epsilon_anneal_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("train.{field}"), reason))
            }
        };
        check((0.0..1.0).contains(&self.gamma), "gamma", "must lie in [0, 1)")?;
        check((0.0..=1.0).contains(&self.epsilon_start), "epsilon_start", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.epsilon_end), "epsilon_end", "must lie in [0, 1]")?;
        check(self.buffer_capacity > 0, "buffer_capacity", "must be positive")?;
        check(self.batch_size > 0, "batch_size", "must be positive")?;
        check(
            self.batch_size <= self.buffer_capacity,
            "batch_size",
            "must not exceed buffer_capacity",
        )?;
        check(self.target_update_period > 0, "target_update_period", "must be positive")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        check((0.0..1.0).contains(&self.rms_alpha), "rms_alpha", "must lie in [0, 1)")?;
        check(self.rms_eps > 0.0, "rms_eps", "must be positive")?;
        check(self.grad_norm_clip > 0.0, "grad_norm_clip", "must be positive")?;
        check(self.eval_period > 0, "eval_period", "must be positive")?;
        check(self.eval_episodes > 0, "eval_episodes", "must be positive")
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, f) in [
            (self.graphs, "graphs"),
            (self.agent_hidden, "agent_hidden"),
            (self.rnn_hidden, "rnn_hidden"),
            (self.emb_dim, "emb_dim"),
            (self.qmix_embed, "qmix_embed"),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model.{f}"), "must be positive"));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn new(env: EnvConfig, algorithm: Algorithm, train: TrainConfig) -> Self {
        Self {
            algorithm,
            out_dir: None,
            checkpoint: None,
            env,
            train,
            model: ModelConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.env.build().map(|_| ())
    }

    /// Every field, defaults included.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }
}

fn config_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field") || msg.contains("variant"))
        .unwrap_or("config")
        .to_string();
    Error::Config {
        field,
        reason: msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_materialises_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [env]
            name = "matrix"
            [train]
            total_steps = 100
            "#,
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Mgan);
        assert_eq!(cfg.model.graphs, 4);
        assert_eq!(cfg.train.eval_episodes, 32);
        assert_eq!(cfg.train.batch_size, 32);
        let text = cfg.to_toml_string();
        assert!(text.contains("epsilon_anneal_steps = 50000"));
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_field_is_named() {
        let err = RunConfig::from_toml_str("[env]\nname = \"matrix\"\n[train]\nseed = 1\n").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "total_steps"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_gamma_is_named() {
        let err = RunConfig::from_toml_str(
            "[env]\nname = \"two_step\"\n[train]\ntotal_steps = 1\ngamma = 1.0\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "train.gamma"));
    }

    #[test]
    fn unknown_env_is_rejected() {
        assert!(RunConfig::from_toml_str("[env]\nname = \"smac\"\n[train]\ntotal_steps = 1\n").is_err());
    }

    #[test]
    fn epsilon_schedule_is_linear() {
        let t = TrainConfig::with_steps(1);
        assert_eq!(t.epsilon_at(0), 1.0);
        assert!((t.epsilon_at(25_000) - 0.525).abs() < 1e-12);
        assert_eq!(t.epsilon_at(80_000), 0.05);
    }
}
