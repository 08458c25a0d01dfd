//! Mixing of individual Q-values into `Q_tot`.
//!
//! MGAN: for each graph encoder `g`, `Q_g = Σ_a softmax(c_g)_a · Q_a` over
//! alive agents; then `Q_tot = Σ_g |W_w s + b_w|_g · Q_g + (W_b s + b_b)`.
//! The absolute value keeps every mixing weight non-negative, so `Q_tot` is
//! monotone in each `Q_a`.
//!
//! VDN and QMIX are provided as baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::RealArray;
use crate::autodiff::{ParameterTree, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{self, EmbeddingSet};

pub const HYPER_W: &str = "hyper.w";
pub const HYPER_B: &str = "hyper.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Mgan,
    Vdn,
    Qmix,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Mgan => "mgan",
            Algorithm::Vdn => "vdn",
            Algorithm::Qmix => "qmix",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mgan" => Ok(Algorithm::Mgan),
            "vdn" => Ok(Algorithm::Vdn),
            "qmix" => Ok(Algorithm::Qmix),
            other => Err(Error::config("algorithm", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Hypernetwork generating the positive mixing weights over the `G` graph
/// values and the state-dependent bias.
pub fn init_hyper_params<R: Rng + ?Sized>(
    tree: &mut ParameterTree,
    state_dim: usize,
    graphs: usize,
    rng: &mut R,
) -> Result<()> {
    tree.insert_linear(HYPER_W, state_dim, graphs, rng)?;
    tree.insert_linear(HYPER_B, state_dim, 1, rng)
}

pub fn init_qmix_params<R: Rng + ?Sized>(
    tree: &mut ParameterTree,
    n_agents: usize,
    state_dim: usize,
    embed: usize,
    rng: &mut R,
) -> Result<()> {
    tree.insert_linear("mixer.hyper_w1", state_dim, n_agents * embed, rng)?;
    tree.insert_linear("mixer.hyper_b1", state_dim, embed, rng)?;
    tree.insert_linear("mixer.hyper_w2", state_dim, embed, rng)?;
    tree.insert_linear("mixer.v1", state_dim, embed, rng)?;
    tree.insert_linear("mixer.v2", embed, 1, rng)
}

/// Row-wise credit softmax of `scalars` (`[(m·n)×1]` or `[m×n]`) under the
/// alive mask `[m×n]`. Dead agents get exactly zero weight.
pub fn credit_weights(tape: &mut Tape, scalars: Var, alive: &RealArray) -> Result<Var> {
    let c = tape.reshape(scalars, &[alive.rows(), alive.cols()])?;
    tape.masked_softmax(c, alive)
}

/// `Q_g` per row: credit-weighted sum of the chosen individual values.
pub fn graph_values(tape: &mut Tape, weights: Var, chosen_q: Var) -> Result<Var> {
    let wq = tape.mul(weights, chosen_q)?;
    tape.sum_cols(wq)
}

/// `Σ_g |affine_w(s)|_g · Q_g + affine_b(s)`, giving `[m×1]`.
pub fn hyper_mix(tape: &mut Tape, tree: &ParameterTree, state: Var, q_graphs: Var) -> Result<Var> {
    let w = tape.dense(tree, HYPER_W, state)?;
    let w = tape.abs(w)?;
    let b = tape.dense(tree, HYPER_B, state)?;
    let wq = tape.mul(w, q_graphs)?;
    let s = tape.sum_cols(wq)?;
    tape.add(s, b)
}

/// Full MGAN mixer over `m` stacked timesteps.
///
/// `chosen_q [m×n]`, `features [(m·n)×obs]`, `state [m×s]`, `alive [m×n]`.
/// The graph adjacency is rebuilt from `alive`.
pub fn mgan_mix(
    tape: &mut Tape,
    tree: &ParameterTree,
    graphs: usize,
    chosen_q: Var,
    features: Var,
    state: Var,
    alive: &RealArray,
) -> Result<Var> {
    let n = alive.cols();
    let adjacency = graph::build_block_adjacency(alive.data(), n);
    mgan_mix_with_adjacency(tape, tree, graphs, chosen_q, features, &adjacency, state, alive)
}

/// As [`mgan_mix`] but with an explicit adjacency, and with `credit_mask`
/// used for the softmax. The two differ only for rows with nobody alive,
/// which the learner pads with an all-ones credit mask.
#[allow(clippy::too_many_arguments)]
pub fn mgan_mix_with_adjacency(
    tape: &mut Tape,
    tree: &ParameterTree,
    graphs: usize,
    chosen_q: Var,
    features: Var,
    adjacency: &[f64],
    state: Var,
    credit_mask: &RealArray,
) -> Result<Var> {
    let n = credit_mask.cols();
    let mut q_graphs: Option<Var> = None;
    for g in 0..graphs {
        let (_, c) = graph::encode(tape, tree, g, features, adjacency, n)?;
        let w = credit_weights(tape, c, credit_mask)?;
        let qg = graph_values(tape, w, chosen_q)?;
        q_graphs = Some(match q_graphs {
            None => qg,
            Some(acc) => tape.concat_cols(acc, qg)?,
        });
    }
    let q_graphs = q_graphs.ok_or_else(|| Error::config("graphs", "must be at least 1"))?;
    hyper_mix(tape, tree, state, q_graphs)
}

pub fn vdn_mix(tape: &mut Tape, chosen_q: Var) -> Result<Var> {
    tape.sum_cols(chosen_q)
}

/// Two-layer QMIX mixer with state-conditioned non-negative weights.
pub fn qmix_mix(tape: &mut Tape, tree: &ParameterTree, chosen_q: Var, state: Var) -> Result<Var> {
    let embed = tree.value("mixer.hyper_b1.bias")?.len();
    let w1 = tape.dense(tree, "mixer.hyper_w1", state)?;
    let w1 = tape.abs(w1)?;
    let b1 = tape.dense(tree, "mixer.hyper_b1", state)?;
    let hidden = tape.row_vec_mat(chosen_q, w1, embed)?;
    let hidden = tape.add(hidden, b1)?;
    let hidden = tape.elu(hidden)?;
    let w2 = tape.dense(tree, "mixer.hyper_w2", state)?;
    let w2 = tape.abs(w2)?;
    let v = tape.dense(tree, "mixer.v1", state)?;
    let v = tape.relu(v)?;
    let v = tape.dense(tree, "mixer.v2", v)?;
    let hw = tape.mul(hidden, w2)?;
    let y = tape.sum_cols(hw)?;
    tape.add(y, v)
}

// Single-instance conveniences evaluated on a frozen tape.

fn alive_row(alive: &[bool]) -> Result<RealArray> {
    RealArray::matrix(1, alive.len(), alive.iter().map(|&a| a as u8 as f64).collect())
}

fn row(values: &[f64]) -> Result<RealArray> {
    RealArray::matrix(1, values.len(), values.to_vec())
}

/// `Q_g = Σ_{a alive} Q_a · softmax(c_g)_a`.
pub fn graph_value(chosen_q: &[f64], c_g: &[f64], alive: &[bool]) -> Result<f64> {
    let mut tape = Tape::frozen();
    let q = tape.constant(row(chosen_q)?)?;
    let c = tape.constant(row(c_g)?)?;
    let w = credit_weights(&mut tape, c, &alive_row(alive)?)?;
    let v = graph_values(&mut tape, w, q)?;
    Ok(tape.value(v).data()[0])
}

pub fn hyper_mix_value(state: &[f64], q_graphs: &[f64], tree: &ParameterTree) -> Result<f64> {
    let mut tape = Tape::frozen();
    let s = tape.constant(row(state)?)?;
    let q = tape.constant(row(q_graphs)?)?;
    let v = hyper_mix(&mut tape, tree, s, q)?;
    Ok(tape.value(v).data()[0])
}

/// `Q_tot` from per-agent chosen values and precomputed transform scalars.
pub fn q_tot_forward(
    chosen_q: &[f64],
    embeddings: &EmbeddingSet,
    state: &[f64],
    alive: &[bool],
    tree: &ParameterTree,
) -> Result<f64> {
    if embeddings.graphs() == 0 {
        return Err(Error::config("graphs", "must be at least 1"));
    }
    let q_graphs = embeddings
        .scalars
        .iter()
        .map(|c| graph_value(chosen_q, c.data(), alive))
        .collect::<Result<Vec<_>>>()?;
    hyper_mix_value(state, &q_graphs, tree)
}

pub fn vdn_value(chosen_q: &[f64]) -> f64 {
    chosen_q.iter().sum()
}

pub fn qmix_value(chosen_q: &[f64], state: &[f64], tree: &ParameterTree) -> Result<f64> {
    let mut tape = Tape::frozen();
    let q = tape.constant(row(chosen_q)?)?;
    let s = tape.constant(row(state)?)?;
    let v = qmix_mix(&mut tape, tree, q, s)?;
    Ok(tape.value(v).data()[0])
}
