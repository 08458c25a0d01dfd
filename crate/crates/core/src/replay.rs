//! Episode storage, padded batches and the FIFO replay buffer.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::agent::write_agent_suffix;
use crate::array::RealArray;
use crate::envs::StepResult;
use crate::error::{Error, Result};
use crate::model::Dims;

/// One full trajectory. Per-timestep arrays hold `len + 1` entries for
/// observations (the final one follows the last action) and `len` entries
/// for actions and rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub dims: Dims,
    pub len: usize,
    pub obs: Vec<f64>,
    pub state: Vec<f64>,
    pub avail: Vec<bool>,
    pub alive: Vec<bool>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Ended in a true terminal state; targets do not bootstrap past it.
    pub terminated: bool,
    /// Ended by the horizon cutoff.
    pub truncated: bool,
    pub success: bool,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: usize,
    actions: &'a [usize],
    reward: f64,
    alive: &'a [bool],
    state: &'a [f64],
}

impl Episode {
    pub fn start(dims: Dims, first: &StepResult) -> Self {
        let mut ep = Self {
            dims,
            len: 0,
            obs: Vec::new(),
            state: Vec::new(),
            avail: Vec::new(),
            alive: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            truncated: false,
            success: false,
        };
        ep.record_observation(first);
        ep
    }

    fn record_observation(&mut self, r: &StepResult) {
        for o in &r.observations {
            self.obs.extend_from_slice(o);
        }
        self.state.extend_from_slice(&r.state);
        for a in &r.avail_actions {
            self.avail.extend_from_slice(a);
        }
        self.alive.extend_from_slice(&r.alive);
    }

    pub fn record_step(&mut self, actions: &[usize], r: &StepResult) {
        self.actions.extend_from_slice(actions);
        self.rewards.push(r.reward);
        self.len += 1;
        self.record_observation(r);
        if r.terminated {
            self.truncated = r.truncated;
            self.terminated = !r.truncated;
            self.success = r.success;
        }
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// `R_t = Σ_l γ^l r_{t+l}` for every step.
    pub fn discounted_returns(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let mut acc = 0.0;
        for t in (0..self.len).rev() {
            acc = self.rewards[t] + gamma * acc;
            out[t] = acc;
        }
        out
    }

    pub fn actions_at(&self, t: usize) -> &[usize] {
        let n = self.dims.n_agents;
        &self.actions[t * n..(t + 1) * n]
    }

    pub fn alive_at(&self, t: usize) -> &[bool] {
        let n = self.dims.n_agents;
        &self.alive[t * n..(t + 1) * n]
    }

    /// Writes one JSON object per step.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        let sd = self.dims.state_dim;
        for t in 0..self.len {
            let line = TraceLine {
                t,
                actions: self.actions_at(t),
                reward: self.rewards[t],
                alive: self.alive_at(t),
                state: &self.state[t * sd..(t + 1) * sd],
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Episodes padded to a common length and laid out time-major: the row for
/// `(t, b, a)` is `(t·B + b)·n + a`.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub dims: Dims,
    pub batch_size: usize,
    pub max_len: usize,
    /// `(T+1)·B·n·obs_dim`
    pub obs: Vec<f64>,
    /// `(T+1)·B·state_dim`
    pub state: Vec<f64>,
    /// `(T+1)·B·n·|U|`, 1 for available
    pub avail: Vec<f64>,
    /// `(T+1)·B·n`
    pub alive: Vec<f64>,
    /// `(T+1)·B·n`; padding steps hold 0
    pub actions: Vec<usize>,
    /// `T·B`
    pub rewards: Vec<f64>,
    /// `T·B`, 1 at a true terminal step
    pub terminated: Vec<f64>,
    /// `T·B`, 0 for padding
    pub filled: Vec<f64>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&Episode]) -> Result<Self> {
        let first = episodes.first().ok_or(Error::EmptyBatch)?;
        let dims = first.dims;
        let b_size = episodes.len();
        let t_max = episodes.iter().map(|e| e.len).max().unwrap_or(0);
        if t_max == 0 {
            return Err(Error::EmptyBatch);
        }
        let (n, od, sd, u) = (dims.n_agents, dims.obs_dim, dims.state_dim, dims.n_actions);
        let steps = t_max + 1;
        let mut batch = Self {
            dims,
            batch_size: b_size,
            max_len: t_max,
            obs: vec![0.0; steps * b_size * n * od],
            state: vec![0.0; steps * b_size * sd],
            avail: vec![1.0; steps * b_size * n * u],
            alive: vec![0.0; steps * b_size * n],
            actions: vec![0; steps * b_size * n],
            rewards: vec![0.0; t_max * b_size],
            terminated: vec![0.0; t_max * b_size],
            filled: vec![0.0; t_max * b_size],
        };
        for (b, ep) in episodes.iter().enumerate() {
            if ep.dims != dims {
                return Err(Error::Shape {
                    op: "EpisodeBatch::from_episodes",
                    lhs: vec![n, od, sd, u],
                    rhs: vec![ep.dims.n_agents, ep.dims.obs_dim, ep.dims.state_dim, ep.dims.n_actions],
                });
            }
            for t in 0..=ep.len {
                let row = t * b_size + b;
                batch.obs[row * n * od..(row + 1) * n * od].copy_from_slice(&ep.obs[t * n * od..(t + 1) * n * od]);
                batch.state[row * sd..(row + 1) * sd].copy_from_slice(&ep.state[t * sd..(t + 1) * sd]);
                for (dst, src) in batch.avail[row * n * u..(row + 1) * n * u]
                    .iter_mut()
                    .zip(&ep.avail[t * n * u..(t + 1) * n * u])
                {
                    *dst = *src as u8 as f64;
                }
                for (dst, src) in batch.alive[row * n..(row + 1) * n].iter_mut().zip(ep.alive_at(t)) {
                    *dst = *src as u8 as f64;
                }
                if t < ep.len {
                    batch.actions[row * n..(row + 1) * n].copy_from_slice(ep.actions_at(t));
                    batch.rewards[row] = ep.rewards[t];
                    batch.filled[row] = 1.0;
                    if t + 1 == ep.len && ep.terminated {
                        batch.terminated[row] = 1.0;
                    }
                }
            }
        }
        Ok(batch)
    }

    pub fn agent_input_dim(&self) -> usize {
        self.dims.obs_dim + self.dims.n_actions + self.dims.n_agents
    }

    /// Agent-network inputs for step `t`: `[B·n × (obs + |U| + n)]`.
    pub fn agent_inputs(&self, t: usize) -> Result<RealArray> {
        let (n, od, u) = (self.dims.n_agents, self.dims.obs_dim, self.dims.n_actions);
        let rows = self.batch_size * n;
        let mut data = Vec::with_capacity(rows * self.agent_input_dim());
        for b in 0..self.batch_size {
            for a in 0..n {
                let row = (t * self.batch_size + b) * n + a;
                data.extend_from_slice(&self.obs[row * od..(row + 1) * od]);
                let last = (t > 0).then(|| {
                    let prev = ((t - 1) * self.batch_size + b) * n + a;
                    self.actions[prev]
                });
                write_agent_suffix(&mut data, last, a, u, n);
            }
        }
        RealArray::matrix(rows, self.agent_input_dim(), data)
    }

    /// Node features for steps `t0..t1`: `[((t1−t0)·B·n) × obs_dim]`.
    pub fn obs_rows(&self, t0: usize, t1: usize) -> Result<RealArray> {
        let w = self.batch_size * self.dims.n_agents;
        let od = self.dims.obs_dim;
        RealArray::matrix((t1 - t0) * w, od, self.obs[t0 * w * od..t1 * w * od].to_vec())
    }

    pub fn state_rows(&self, t0: usize, t1: usize) -> Result<RealArray> {
        let sd = self.dims.state_dim;
        let b = self.batch_size;
        RealArray::matrix((t1 - t0) * b, sd, self.state[t0 * b * sd..t1 * b * sd].to_vec())
    }

    pub fn alive_rows(&self, t0: usize, t1: usize) -> Result<RealArray> {
        let n = self.dims.n_agents;
        let b = self.batch_size;
        RealArray::matrix((t1 - t0) * b, n, self.alive[t0 * b * n..t1 * b * n].to_vec())
    }

    pub fn actions_at(&self, t: usize) -> &[usize] {
        let w = self.batch_size * self.dims.n_agents;
        &self.actions[t * w..(t + 1) * w]
    }

    pub fn avail_at(&self, t: usize) -> &[f64] {
        let w = self.batch_size * self.dims.n_agents * self.dims.n_actions;
        &self.avail[t * w..(t + 1) * w]
    }

    pub fn filled_steps(&self) -> usize {
        self.filled.iter().filter(|&&f| f > 0.0).count()
    }
}

/// FIFO ring of whole episodes with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Draws `count` distinct episodes uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<&Episode>> {
        if count == 0 || count > self.episodes.len() {
            return Err(Error::EmptyBatch);
        }
        let picks = rand::seq::index::sample(rng, self.episodes.len(), count);
        Ok(picks.into_iter().map(|i| &self.episodes[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, TwoStepGame};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_step_episode(first: [usize; 2], second: [usize; 2]) -> Episode {
        let mut env = TwoStepGame::new();
        let r = env.reset(0);
        let mut ep = Episode::start(Dims::from(env.spec()), &r);
        let r = env.step(&first).unwrap();
        ep.record_step(&first, &r);
        let r = env.step(&second).unwrap();
        ep.record_step(&second, &r);
        ep
    }

    fn tagged(len: usize, tag: f64) -> Episode {
        let dims = Dims {
            n_agents: 1,
            n_actions: 1,
            obs_dim: 1,
            state_dim: 1,
        };
        Episode {
            dims,
            len,
            obs: vec![tag; len + 1],
            state: vec![tag; len + 1],
            avail: vec![true; len + 1],
            alive: vec![true; len + 1],
            actions: vec![0; len],
            rewards: vec![tag; len],
            terminated: true,
            truncated: false,
            success: false,
        }
    }

    #[test]
    fn episode_records_terminal_step() {
        let ep = two_step_episode([1, 0], [1, 1]);
        assert_eq!(ep.len, 2);
        assert!(ep.terminated && !ep.truncated && ep.success);
        assert_eq!(ep.total_return(), 8.0);
        assert_eq!(ep.obs.len(), 3 * 2 * 5);
    }

    #[test]
    fn discounted_returns_match_definition() {
        let mut ep = tagged(3, 0.0);
        ep.rewards = vec![1.0, 2.0, 4.0];
        let g = ep.discounted_returns(0.5);
        assert_eq!(g, vec![1.0 + 0.5 * 2.0 + 0.25 * 4.0, 2.0 + 0.5 * 4.0, 4.0]);
    }

    #[test]
    fn padding_is_marked_unfilled() {
        let a = tagged(3, 1.0);
        let b = tagged(1, 2.0);
        let batch = EpisodeBatch::from_episodes(&[&a, &b]).unwrap();
        assert_eq!(batch.max_len, 3);
        // rows t·B + b
        assert_eq!(batch.filled, vec![1.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(batch.terminated, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(batch.rewards[1], 2.0);
        assert_eq!(batch.filled_steps(), 4);
        // padded alive is zero
        assert_eq!(batch.alive_rows(2, 3).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn agent_inputs_carry_last_action() {
        let ep = two_step_episode([1, 0], [1, 1]);
        let batch = EpisodeBatch::from_episodes(&[&ep]).unwrap();
        let x0 = batch.agent_inputs(0).unwrap();
        assert_eq!(x0.row(0), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let x1 = batch.agent_inputs(1).unwrap();
        // branch B state, agent 0 took action 1, id 0
        assert_eq!(x1.row(0), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(x1.row(1), &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn buffer_evicts_fifo_and_bounds_sampling() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(tagged(1, i as f64));
        }
        assert_eq!(buf.len(), 3);
        let tags: Vec<f64> = buf.iter().map(|e| e.rewards[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(4, &mut rng).is_err());
        let s = buf.sample(3, &mut rng).unwrap();
        let mut got: Vec<f64> = s.iter().map(|e| e.rewards[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn trace_has_one_line_per_step() {
        let ep = two_step_episode([0, 0], [1, 0]);
        let mut out = Vec::new();
        ep.write_trace(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(v["reward"], 7.0);
    }
}
