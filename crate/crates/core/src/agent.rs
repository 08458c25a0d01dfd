//! Shared recurrent per-agent Q-network and action selection.
//!
//! Every agent runs through the same `agent.*` parameters; the agent-id
//! one-hot in the input is the only thing that tells them apart.

use rand::Rng;

use crate::array::RealArray;
use crate::autodiff::{gru_cell, init_gru, ParameterTree, Tape, Var};
use crate::error::{Error, Result};

/// Large negative surrogate for unavailable actions.
pub const MASKED_Q: f64 = -1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentObservation {
    pub features: Vec<f64>,
    pub avail_actions: Vec<bool>,
    pub agent_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentQValues {
    pub q: Vec<f64>,
}

/// GRU hidden state summarising one agent's action-observation history.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentNetShape {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub hidden: usize,
    pub rnn_hidden: usize,
}

impl AgentNetShape {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }
}

/// `[features ‖ one-hot(last_action) ‖ one-hot(agent_id)]`. `last_action` is
/// `None` at the first step of an episode.
pub fn build_agent_input(
    obs: &AgentObservation,
    last_action: Option<usize>,
    n_actions: usize,
    n_agents: usize,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(obs.features.len() + n_actions + n_agents);
    input.extend_from_slice(&obs.features);
    write_agent_suffix(&mut input, last_action, obs.agent_id, n_actions, n_agents);
    input
}

pub(crate) fn write_agent_suffix(
    out: &mut Vec<f64>,
    last_action: Option<usize>,
    agent_id: usize,
    n_actions: usize,
    n_agents: usize,
) {
    let start = out.len();
    out.resize(start + n_actions + n_agents, 0.0);
    if let Some(a) = last_action {
        out[start + a] = 1.0;
    }
    out[start + n_actions + agent_id] = 1.0;
}

pub fn init_agent_params<R: Rng + ?Sized>(
    tree: &mut ParameterTree,
    shape: &AgentNetShape,
    rng: &mut R,
) -> Result<()> {
    tree.insert_linear("agent.fc1", shape.input_dim(), shape.hidden, rng)?;
    init_gru(tree, "agent.gru", shape.hidden, shape.rnn_hidden, rng)?;
    tree.insert_linear("agent.fc2", shape.rnn_hidden, shape.n_actions, rng)
}

/// Batched step: `inputs [b×in]`, `h [b×rnn]` → (`q [b×|U|]`, `h' [b×rnn]`).
pub fn agent_step(tape: &mut Tape, tree: &ParameterTree, inputs: Var, h: Var) -> Result<(Var, Var)> {
    let x = tape.dense(tree, "agent.fc1", inputs)?;
    let x = tape.relu(x)?;
    let h_next = gru_cell(tape, tree, "agent.gru", x, h)?;
    let q = tape.dense(tree, "agent.fc2", h_next)?;
    Ok((q, h_next))
}

/// Single-agent forward without gradient tracking.
pub fn agent_forward(
    input: &[f64],
    state: &RecurrentState,
    params: &ParameterTree,
) -> Result<(AgentQValues, RecurrentState)> {
    let mut tape = Tape::frozen();
    let x = tape.constant(RealArray::matrix(1, input.len(), input.to_vec())?)?;
    let h = tape.constant(RealArray::matrix(1, state.h.len(), state.h.clone())?)?;
    let (q, h_next) = agent_step(&mut tape, params, x, h)?;
    Ok((
        AgentQValues {
            q: tape.value(q).data().to_vec(),
        },
        RecurrentState {
            h: tape.value(h_next).data().to_vec(),
        },
    ))
}

/// Argmax over available actions; the lowest index wins ties.
pub fn greedy_action(q: &[f64], avail: &[bool]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        let v = if ok { v } else { MASKED_Q };
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::NoAvailableAction)
}

/// ε-greedy: with probability ε a uniform draw over available actions,
/// otherwise [`greedy_action`].
pub fn select_action<R: Rng + ?Sized>(q: &[f64], avail: &[bool], epsilon: f64, rng: &mut R) -> Result<usize> {
    if !avail.iter().any(|&a| a) {
        return Err(Error::NoAvailableAction);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let choices: Vec<usize> = avail
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect();
        return Ok(choices[rng.random_range(0..choices.len())]);
    }
    greedy_action(q, avail)
}
