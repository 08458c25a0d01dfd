//! Multi-graph attention value decomposition for cooperative multi-agent
//! Q-learning, with VDN and QMIX mixers for comparison.
//!
//! Agents share one recurrent Q-network. The MGAN mixer encodes the alive
//! agents as a complete graph several times over, turns each encoding into a
//! softmax credit assignment, and combines the resulting per-graph values
//! with non-negative state-conditioned weights.

pub mod agent;
pub mod analysis;
pub mod array;
pub mod autodiff;
pub mod config;
pub mod envs;
pub mod error;
pub mod graph;
pub mod harness;
pub mod learner;
pub mod mixer;
pub mod model;
pub mod replay;
pub mod rollout;
pub mod train;

pub use array::RealArray;
pub use autodiff::{Checkpoint, Gradients, ParameterTree, RmsProp, Tape, Var};
pub use config::{ModelConfig, RunConfig, TrainConfig};
pub use envs::{Env, EnvConfig, EnvSpec, StepResult};
pub use error::{Error, Result};
pub use mixer::Algorithm;
pub use model::{Dims, Model};
pub use rollout::EvalResult;
pub use train::{MetricRecord, Trainer};
