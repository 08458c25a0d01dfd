//! Tape gradients against central finite differences.

mod common;

use common::*;
use mgan_core::agent::{agent_step, init_agent_params, AgentNetShape};
use mgan_core::autodiff::{gru_cell, init_gru};
use mgan_core::graph::{build_block_adjacency, encode, init_graph_params, layer_prefix, TRANSFORM_PREFIX};
use mgan_core::learner::{batch_loss, td_targets};
use mgan_core::{Algorithm, ParameterTree, RealArray, Result, Tape, Var};

fn tree_with(entries: &[(&str, RealArray)]) -> ParameterTree {
    let mut t = ParameterTree::new();
    for (name, v) in entries {
        t.insert(*name, v.clone(), true).unwrap();
    }
    t
}

/// `Σ w ⊙ v` with fixed random `w`, so no output direction is degenerate.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let w = random_matrix(&mut rng(seed), 1, shape.iter().product(), 1.0).reshaped(&shape)?;
    let w = tape.constant(w)?;
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn unary_check(op: impl Fn(&mut Tape, Var) -> Result<Var>, seed: u64) -> f64 {
    let tree = tree_with(&[("x", random_matrix(&mut rng(seed), 3, 4, 2.0))]);
    fd_check(&tree, &all_picks(&tree), |tape, t| {
        let x = tape.param(t, "x")?;
        let y = op(tape, x)?;
        weighted_sum(tape, y, seed + 1)
    })
}

#[test]
fn linear_weight_gradient_of_sum() {
    let mut r = rng(1);
    let tree = tree_with(&[
        ("x", random_matrix(&mut r, 3, 4, 1.0)),
        ("w", random_matrix(&mut r, 2, 4, 1.0)),
        ("b", random_matrix(&mut r, 1, 2, 1.0).reshaped(&[2]).unwrap()),
    ]);
    let err = fd_check(&tree, &all_picks(&tree), |tape, t| {
        let x = tape.param(t, "x")?;
        let w = tape.param(t, "w")?;
        let b = tape.param(t, "b")?;
        let y = tape.linear(x, w, Some(b))?;
        tape.sum(y)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn elementwise_ops() {
    for (name, err) in [
        ("relu", unary_check(|t, x| t.relu(x), 2)),
        ("sigmoid", unary_check(|t, x| t.sigmoid(x), 3)),
        ("tanh", unary_check(|t, x| t.tanh(x), 4)),
        ("abs", unary_check(|t, x| t.abs(x), 5)),
        ("elu", unary_check(|t, x| t.elu(x), 6)),
        ("scale", unary_check(|t, x| t.scale(x, -1.7), 7)),
        ("square", unary_check(|t, x| t.mul(x, x), 8)),
        ("sub", unary_check(|t, x| {
            let y = t.tanh(x)?;
            t.sub(x, y)
        }, 9)),
        ("add", unary_check(|t, x| {
            let y = t.sigmoid(x)?;
            t.add(y, x)
        }, 10)),
    ] {
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn shape_ops() {
    for (name, err) in [
        ("concat_cols", unary_check(|t, x| {
            let y = t.tanh(x)?;
            t.concat_cols(x, y)
        }, 11)),
        ("concat_rows", unary_check(|t, x| {
            let y = t.sigmoid(x)?;
            t.concat_rows(&[y, x, y])
        }, 12)),
        ("slice_cols", unary_check(|t, x| t.slice_cols(x, 1, 2), 13)),
        ("reshape", unary_check(|t, x| {
            let y = t.reshape(x, &[2, 6])?;
            t.tanh(y)
        }, 14)),
        ("gather_cols", unary_check(|t, x| t.gather_cols(x, &[3, 0, 2]), 15)),
        ("sum_cols", unary_check(|t, x| t.sum_cols(x), 16)),
    ] {
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn masked_softmax_gradient() {
    let mask = RealArray::matrix(3, 4, vec![1., 1., 0., 1., 0., 1., 0., 0., 1., 1., 1., 1.]).unwrap();
    let err = unary_check(move |t, x| t.masked_softmax(x, &mask), 17);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn graph_attention_gradient() {
    // two graphs of two nodes; the second has an isolated node
    let adj = vec![1., 1., 1., 1., 1., 0., 0., 0.];
    let tree = tree_with(&[("h", random_matrix(&mut rng(18), 4, 3, 1.5))]);
    let err = fd_check(&tree, &all_picks(&tree), |tape, t| {
        let h = tape.param(t, "h")?;
        let a = tape.graph_attention(h, &adj, 2)?;
        weighted_sum(tape, a, 19)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn masked_mse_and_row_vec_mat() {
    let mut r = rng(20);
    let tree = tree_with(&[("q", random_matrix(&mut r, 3, 2, 1.0)), ("w", random_matrix(&mut r, 3, 8, 1.0))]);
    let target = random_matrix(&mut r, 3, 4, 1.0);
    let mask = RealArray::matrix(3, 4, vec![1., 0., 1., 1., 1., 1., 0., 1., 0., 0., 1., 1.]).unwrap();
    let err = fd_check(&tree, &all_picks(&tree), |tape, t| {
        let q = tape.param(t, "q")?;
        let w = tape.param(t, "w")?;
        let y = tape.row_vec_mat(q, w, 4)?;
        tape.masked_mse(y, &target, &mask)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gru_cell_gate_weights() {
    let mut r = rng(21);
    let mut tree = ParameterTree::new();
    init_gru(&mut tree, "gru", 3, 3, &mut r).unwrap();
    let x = random_matrix(&mut r, 2, 3, 1.0);
    let h = random_matrix(&mut r, 2, 3, 1.0);
    let err = fd_check(&tree, &all_picks(&tree), |tape, t| {
        let x = tape.constant(x.clone())?;
        let h = tape.constant(h.clone())?;
        let h2 = gru_cell(tape, t, "gru", x, h)?;
        tape.sum(h2)
    });
    assert!(err < 1e-5, "{err}");
}

#[test]
fn agent_q_wrt_gru_params() {
    let mut r = rng(22);
    let shape = AgentNetShape {
        obs_dim: 3,
        n_actions: 3,
        n_agents: 2,
        hidden: 5,
        rnn_hidden: 4,
    };
    let mut tree = ParameterTree::new();
    init_agent_params(&mut tree, &shape, &mut r).unwrap();
    let x0 = random_matrix(&mut r, 2, shape.input_dim(), 1.0);
    let x1 = random_matrix(&mut r, 2, shape.input_dim(), 1.0);
    let picks: Vec<_> = all_picks(&tree).into_iter().filter(|(n, _)| n.starts_with("agent.gru")).collect();
    let err = fd_check(&tree, &picks, |tape, t| {
        let h = tape.constant(RealArray::zeros(&[2, 4]))?;
        let x0 = tape.constant(x0.clone())?;
        let (_, h) = agent_step(tape, t, x0, h)?;
        let x1 = tape.constant(x1.clone())?;
        let (q, _) = agent_step(tape, t, x1, h)?;
        // q[agent 0, action 0]
        let q0 = tape.slice_cols(q, 0, 1)?;
        let w = tape.constant(RealArray::matrix(2, 1, vec![1.0, 0.0])?)?;
        let p = tape.mul(q0, w)?;
        tape.sum(p)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn encoder_scalar_wrt_first_layer() {
    let mut r = rng(23);
    let mut tree = ParameterTree::new();
    init_graph_params(&mut tree, 4, 5, 1, &mut r).unwrap();
    let features = random_matrix(&mut r, 3, 4, 1.0);
    let adj = build_block_adjacency(&[1.0, 1.0, 1.0], 3);
    let prefix = layer_prefix(0, 0);
    let picks: Vec<_> = all_picks(&tree).into_iter().filter(|(n, _)| n.starts_with(&prefix)).collect();
    let err = fd_check(&tree, &picks, |tape, t| {
        let x = tape.constant(features.clone())?;
        let (_, c) = encode(tape, t, 0, x, &adj, 3)?;
        let w = tape.constant(RealArray::matrix(3, 1, vec![1.0, 0.0, 0.0])?)?;
        let p = tape.mul(c, w)?;
        tape.sum(p)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn loss_wrt_transform_and_everything() {
    let mut env = small_skirmish();
    for algorithm in [Algorithm::Mgan, Algorithm::Qmix, Algorithm::Vdn] {
        let (model, params, batch) = random_batch(&mut env, algorithm, small_model_config(), 4, 31);
        let mut target = params.clone();
        target.value_mut("agent.fc2.bias").unwrap().data_mut()[0] += 0.3;
        let y = td_targets(&model, &target, &batch, 0.9).unwrap();
        let mut picks = random_picks(&params, 60, &mut rng(32));
        if algorithm == Algorithm::Mgan {
            picks.extend(all_picks(&params).into_iter().filter(|(n, _)| n.starts_with(TRANSFORM_PREFIX)));
        }
        let err = fd_check(&params, &picks, |tape, t| batch_loss(&model, tape, t, &batch, &y));
        assert!(err < 1e-4, "{algorithm}: {err}");
    }
}
