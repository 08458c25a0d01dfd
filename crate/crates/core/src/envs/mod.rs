//! Cooperative environments with shared reward.

mod matrix;
mod oracle;
mod skirmish;
mod two_step;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use matrix::MatrixGame;
pub use oracle::{brute_force_optimal, MAX_ENUMERATION};
pub use skirmish::{SkirmishConfig, SkirmishGrid};
pub use two_step::TwoStepGame;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub horizon: usize,
    pub success: String,
}

/// Everything the agents and the learner see after `reset` or `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub reward: f64,
    /// The episode is over (for any reason).
    pub terminated: bool,
    /// The episode ended because the horizon was reached.
    pub truncated: bool,
    pub success: bool,
    pub alive: Vec<bool>,
    pub avail_actions: Vec<Vec<bool>>,
    /// Per-agent hit points normalised to `[0, 1]`, when the env has them.
    pub health: Option<Vec<f64>>,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. Identical seeds give identical episodes.
    fn reset(&mut self, seed: u64) -> StepResult;

    /// Advances one timestep. Errors after termination or on an
    /// unavailable action.
    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;

    fn clone_box(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Environment selection as written in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Matrix {
        #[serde(default = "default_payoff")]
        payoff: Vec<Vec<f64>>,
    },
    TwoStep,
    Skirmish(SkirmishConfig),
}

fn default_payoff() -> Vec<Vec<f64>> {
    vec![vec![10.0, 0.0], vec![0.0, 10.0]]
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Matrix { .. } => "matrix",
            EnvConfig::TwoStep => "two_step",
            EnvConfig::Skirmish(_) => "skirmish",
        }
    }

    /// Default parameters for a named environment.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "matrix" => Ok(EnvConfig::Matrix {
                payoff: default_payoff(),
            }),
            "two_step" => Ok(EnvConfig::TwoStep),
            "skirmish" => Ok(EnvConfig::Skirmish(SkirmishConfig::default())),
            other => Err(crate::error::Error::config(
                "env.name",
                format!("unknown environment `{other}` (expected matrix, two_step or skirmish)"),
            )),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        Ok(match self {
            EnvConfig::Matrix { payoff } => Box::new(MatrixGame::new(payoff.clone())?),
            EnvConfig::TwoStep => Box::new(TwoStepGame::new()),
            EnvConfig::Skirmish(cfg) => Box::new(SkirmishGrid::new(cfg.clone())?),
        })
    }
}

pub(crate) fn agent_id_one_hot(id: usize, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i == id { 1.0 } else { 0.0 })
}
