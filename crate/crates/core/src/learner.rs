//! TD targets, loss and parameter updates.

use crate::agent::{agent_step, greedy_action};
use crate::array::RealArray;
use crate::autodiff::{Gradients, ParameterTree, RmsProp, Tape, Var};
use crate::config::TrainConfig;
use crate::error::Result;
use crate::graph::build_block_adjacency;
use crate::model::Model;
use crate::replay::EpisodeBatch;

/// Softmax mask for the credit weights. Rows where nobody is alive (padding
/// or a wiped-out team) get all ones so the softmax stays defined; those rows
/// are either masked out of the loss or multiplied by `1 − terminated = 0`.
pub fn credit_mask(alive: &RealArray) -> RealArray {
    let mut mask = alive.clone();
    let n = alive.cols();
    for row in mask.data_mut().chunks_mut(n) {
        if row.iter().all(|&a| a == 0.0) {
            row.fill(1.0);
        }
    }
    mask
}

/// Per-agent Q-values for steps `0..steps`, unrolled from a zero hidden
/// state. Each entry is `[B·n × |U|]`.
pub fn agent_q_sequence(
    model: &Model,
    tape: &mut Tape,
    tree: &ParameterTree,
    batch: &EpisodeBatch,
    steps: usize,
) -> Result<Vec<Var>> {
    let rows = batch.batch_size * model.dims.n_agents;
    let mut h = tape.constant(RealArray::zeros(&[rows, model.cfg.rnn_hidden]))?;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.constant(batch.agent_inputs(t)?)?;
        let (q, h_next) = agent_step(tape, tree, x, h)?;
        out.push(q);
        h = h_next;
    }
    Ok(out)
}

/// Mixes already-chosen per-agent values for steps `t0..t1`.
fn mix_steps(
    model: &Model,
    tape: &mut Tape,
    tree: &ParameterTree,
    batch: &EpisodeBatch,
    chosen: &[Var],
    t0: usize,
    t1: usize,
) -> Result<Var> {
    let n = model.dims.n_agents;
    let rows = (t1 - t0) * batch.batch_size;
    let stacked = tape.concat_rows(chosen)?;
    let chosen_q = tape.reshape(stacked, &[rows, n])?;
    let features = tape.constant(batch.obs_rows(t0, t1)?)?;
    let state = tape.constant(batch.state_rows(t0, t1)?)?;
    let alive = batch.alive_rows(t0, t1)?;
    let adjacency = build_block_adjacency(alive.data(), n);
    let mask = credit_mask(&alive);
    model.mix(tape, tree, chosen_q, features, &adjacency, state, &mask)
}

/// `y = r + γ (1 − terminated) Q_tot(s', u'*; θ⁻)` with `u'*` the per-agent
/// greedy actions under the target network. Returns `[T·B × 1]`.
pub fn td_targets(model: &Model, target: &ParameterTree, batch: &EpisodeBatch, gamma: f64) -> Result<RealArray> {
    let t_max = batch.max_len;
    let (n, u) = (model.dims.n_agents, model.dims.n_actions);
    let mut tape = Tape::frozen();
    let qs = agent_q_sequence(model, &mut tape, target, batch, t_max + 1)?;
    let mut chosen = Vec::with_capacity(t_max);
    for (t, &q) in qs.iter().enumerate().skip(1) {
        let qv = tape.value(q);
        let avail = batch.avail_at(t);
        let mut best = Vec::with_capacity(qv.rows());
        for r in 0..qv.rows() {
            let mask: Vec<bool> = avail[r * u..(r + 1) * u].iter().map(|&a| a > 0.0).collect();
            best.push(greedy_action(qv.row(r), &mask)?);
        }
        chosen.push(tape.gather_cols(q, &best)?);
    }
    debug_assert_eq!(tape.value(chosen[0]).rows(), batch.batch_size * n);
    let next = mix_steps(model, &mut tape, target, batch, &chosen, 1, t_max + 1)?;
    let next = tape.value(next).data();
    let y = (0..t_max * batch.batch_size)
        .map(|i| batch.rewards[i] + gamma * (1.0 - batch.terminated[i]) * next[i])
        .collect();
    RealArray::matrix(t_max * batch.batch_size, 1, y)
}

/// Builds the masked TD loss on `tape`; `targets` enter as constants.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    params: &ParameterTree,
    batch: &EpisodeBatch,
    targets: &RealArray,
) -> Result<Var> {
    let t_max = batch.max_len;
    let qs = agent_q_sequence(model, tape, params, batch, t_max)?;
    let chosen = qs
        .iter()
        .enumerate()
        .map(|(t, &q)| tape.gather_cols(q, batch.actions_at(t)))
        .collect::<Result<Vec<_>>>()?;
    let q_tot = mix_steps(model, tape, params, batch, &chosen, 0, t_max)?;
    let mask = RealArray::matrix(batch.filled.len(), 1, batch.filled.clone())?;
    tape.masked_mse(q_tot, targets, &mask)
}

/// Loss value and gradients for every trainable parameter.
pub fn loss_and_grads(
    model: &Model,
    params: &ParameterTree,
    batch: &EpisodeBatch,
    targets: &RealArray,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let loss = batch_loss(model, &mut tape, params, batch, targets)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss, params)?;
    Ok((value, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Online parameters, target copy and optimizer state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub model: Model,
    pub params: ParameterTree,
    pub target: ParameterTree,
    pub optimizer: RmsProp,
    gamma: f64,
    grad_norm_clip: f64,
    target_update_period: u64,
    train_steps: u64,
}

impl Learner {
    pub fn new(model: Model, params: ParameterTree, cfg: &TrainConfig) -> Self {
        let optimizer = RmsProp::new(&params, cfg.lr, cfg.rms_alpha, cfg.rms_eps);
        Self {
            model,
            target: params.clone(),
            params,
            optimizer,
            gamma: cfg.gamma,
            grad_norm_clip: cfg.grad_norm_clip,
            target_update_period: cfg.target_update_period,
            train_steps: 0,
        }
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.params)
    }

    pub fn train_step(&mut self, batch: &EpisodeBatch) -> Result<TrainStats> {
        let targets = td_targets(&self.model, &self.target, batch, self.gamma)?;
        let (loss, mut grads) = loss_and_grads(&self.model, &self.params, batch, &targets)?;
        let grad_norm = grads.global_norm();
        if grad_norm > self.grad_norm_clip {
            grads.scale(self.grad_norm_clip / grad_norm);
        }
        self.optimizer.step(&mut self.params, &grads)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.target_update_period) {
            self.sync_target()?;
        }
        Ok(TrainStats { loss, grad_norm })
    }
}
