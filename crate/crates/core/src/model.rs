//! Full network: shared agent Q-network plus the selected mixer.

use rand::Rng;

use crate::agent::{self, AgentNetShape};
use crate::array::RealArray;
use crate::autodiff::{ParameterTree, Tape, Var};
use crate::config::ModelConfig;
use crate::envs::EnvSpec;
use crate::error::Result;
use crate::graph;
use crate::mixer::{self, Algorithm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
}

impl From<&EnvSpec> for Dims {
    fn from(spec: &EnvSpec) -> Self {
        Self {
            n_agents: spec.n_agents,
            n_actions: spec.n_actions,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub algorithm: Algorithm,
    pub cfg: ModelConfig,
    pub dims: Dims,
}

impl Model {
    pub fn new(algorithm: Algorithm, cfg: ModelConfig, dims: Dims) -> Self {
        Self { algorithm, cfg, dims }
    }

    pub fn agent_shape(&self) -> AgentNetShape {
        AgentNetShape {
            obs_dim: self.dims.obs_dim,
            n_actions: self.dims.n_actions,
            n_agents: self.dims.n_agents,
            hidden: self.cfg.agent_hidden,
            rnn_hidden: self.cfg.rnn_hidden,
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterTree> {
        let mut tree = ParameterTree::new();
        agent::init_agent_params(&mut tree, &self.agent_shape(), rng)?;
        match self.algorithm {
            Algorithm::Mgan => {
                graph::init_graph_params(&mut tree, self.dims.obs_dim, self.cfg.emb_dim, self.cfg.graphs, rng)?;
                mixer::init_hyper_params(&mut tree, self.dims.state_dim, self.cfg.graphs, rng)?;
            }
            Algorithm::Vdn => {}
            Algorithm::Qmix => {
                mixer::init_qmix_params(&mut tree, self.dims.n_agents, self.dims.state_dim, self.cfg.qmix_embed, rng)?;
            }
        }
        Ok(tree)
    }

    /// `Q_tot` for `m` stacked timesteps: `chosen_q [m×n]`,
    /// `features [(m·n)×obs]`, `state [m×s]`. `adjacency` is the stacked
    /// alive-adjacency and `credit_mask [m×n]` the softmax mask.
    #[allow(clippy::too_many_arguments)]
    pub fn mix(
        &self,
        tape: &mut Tape,
        tree: &ParameterTree,
        chosen_q: Var,
        features: Var,
        adjacency: &[f64],
        state: Var,
        credit_mask: &RealArray,
    ) -> Result<Var> {
        match self.algorithm {
            Algorithm::Mgan => mixer::mgan_mix_with_adjacency(
                tape,
                tree,
                self.cfg.graphs,
                chosen_q,
                features,
                adjacency,
                state,
                credit_mask,
            ),
            Algorithm::Vdn => mixer::vdn_mix(tape, chosen_q),
            Algorithm::Qmix => mixer::qmix_mix(tape, tree, chosen_q, state),
        }
    }
}
