//! Acting in an environment with the shared agent network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{agent_step, select_action, write_agent_suffix};
use crate::array::RealArray;
use crate::autodiff::{ParameterTree, Tape};
use crate::envs::{Env, StepResult};
use crate::error::{Error, Result};
use crate::model::{Dims, Model};
use crate::replay::Episode;

/// Drives agents through one episode. `observe` sees every pre-action
/// step result together with the step index.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut dyn Env,
    model: &Model,
    params: &ParameterTree,
    epsilon: f64,
    env_seed: u64,
    rng: &mut R,
    mut observe: impl FnMut(usize, &StepResult) -> Result<()>,
) -> Result<Episode> {
    let dims = Dims::from(env.spec());
    let (n, u) = (dims.n_agents, dims.n_actions);
    let shape = model.agent_shape();
    let mut current = env.reset(env_seed);
    let mut episode = Episode::start(dims, &current);
    let mut h = RealArray::zeros(&[n, shape.rnn_hidden]);
    let mut last: Option<Vec<usize>> = None;
    loop {
        observe(episode.len, &current)?;
        let mut inputs = Vec::with_capacity(n * shape.input_dim());
        for (a, obs) in current.observations.iter().enumerate() {
            inputs.extend_from_slice(obs);
            write_agent_suffix(&mut inputs, last.as_ref().map(|l| l[a]), a, u, n);
        }
        let mut tape = Tape::frozen();
        let x = tape.constant(RealArray::matrix(n, shape.input_dim(), inputs)?)?;
        let hv = tape.constant(h)?;
        let (q, h_next) = agent_step(&mut tape, params, x, hv)?;
        let qv = tape.value(q);
        let actions = (0..n)
            .map(|a| select_action(qv.row(a), &current.avail_actions[a], epsilon, rng))
            .collect::<Result<Vec<_>>>()?;
        h = tape.value(h_next).clone();
        let next = env.step(&actions)?;
        episode.record_step(&actions, &next);
        if next.terminated {
            return Ok(episode);
        }
        last = Some(actions);
        current = next;
    }
}

/// ε-greedy episode for the replay buffer.
pub fn collect_episode<R: Rng + ?Sized>(
    env: &mut dyn Env,
    model: &Model,
    params: &ParameterTree,
    epsilon: f64,
    env_seed: u64,
    rng: &mut R,
) -> Result<Episode> {
    run_episode(env, model, params, epsilon, env_seed, rng, |_, _| Ok(()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub win_rate: f64,
    pub episodes: usize,
}

/// Environment seed for evaluation episode `k`.
pub fn eval_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

/// Greedy evaluation over `episodes` fresh episodes.
pub fn evaluate(
    env: &mut dyn Env,
    model: &Model,
    params: &ParameterTree,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::config("episodes", "must be positive"));
    }
    // Unused at ε = 0, but keeps the signature of the acting path.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut wins) = (0.0, 0usize);
    for k in 0..episodes {
        let ep = collect_episode(env, model, params, 0.0, eval_seed(seed, k), &mut rng)?;
        total += ep.total_return();
        wins += ep.success as usize;
    }
    Ok(EvalResult {
        mean_return: total / episodes as f64,
        win_rate: wins as f64 / episodes as f64,
        episodes,
    })
}
