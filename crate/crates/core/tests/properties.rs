//! Invariants checked over random inputs.

mod common;

use common::*;
use mgan_core::agent::greedy_action;
use mgan_core::autodiff::Checkpoint;
use mgan_core::graph::{build_adjacency, encode_graph, init_graph_params, AgentGraph};
use mgan_core::{Algorithm, ParameterTree, RealArray, RmsProp, Tape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logits_and_mask() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1usize..5, 1usize..7).prop_flat_map(|(rows, cols)| {
        (
            Just(cols),
            prop::collection::vec(-50.0f64..50.0, rows * cols),
            prop::collection::vec(prop::bool::ANY, rows * cols),
        )
            .prop_map(|(cols, logits, live)| {
                let mut mask: Vec<f64> = live.iter().map(|&b| b as u8 as f64).collect();
                // one live entry per row at least
                for row in mask.chunks_mut(cols) {
                    row[0] = 1.0;
                }
                (cols, logits, mask)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_softmax_is_a_distribution((cols, logits, mask) in logits_and_mask()) {
        let rows = logits.len() / cols;
        let mut tape = Tape::frozen();
        let x = tape.constant(RealArray::matrix(rows, cols, logits).unwrap()).unwrap();
        let m = RealArray::matrix(rows, cols, mask.clone()).unwrap();
        let p = tape.masked_softmax(x, &m).unwrap();
        let p = tape.value(p);
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, live) in row.iter().zip(&mask[r * cols..(r + 1) * cols]) {
                prop_assert!(*v >= 0.0);
                if *live == 0.0 {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn encoders_are_permutation_equivariant(seed in any::<u64>(), n in 2usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = ParameterTree::new();
        init_graph_params(&mut tree, 3, 4, 2, &mut r).unwrap();
        let features = random_matrix(&mut r, n, 3, 1.5);
        let alive: Vec<bool> = (0..n).map(|i| i == 0 || (seed >> i) & 1 == 1).collect();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&i| features.row(i).to_vec()).collect();
        let permuted_alive: Vec<bool> = perm.iter().map(|&i| alive[i]).collect();
        let a = encode_graph(&AgentGraph::from_alive(&alive, features.clone()).unwrap(), &tree, 2).unwrap();
        let b = encode_graph(
            &AgentGraph::from_alive(&permuted_alive, RealArray::from_rows(&permuted_rows).unwrap()).unwrap(),
            &tree,
            2,
        )
        .unwrap();
        for g in 0..2 {
            for (j, &i) in perm.iter().enumerate() {
                prop_assert!((a.scalars[g].data()[i] - b.scalars[g].data()[j]).abs() < 1e-12);
                for (x, y) in a.embeddings[g].row(i).iter().zip(b.embeddings[g].row(j)) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric_with_alive_self_loops(alive in prop::collection::vec(prop::bool::ANY, 1..8)) {
        let n = alive.len();
        let adj = build_adjacency(&alive);
        for u in 0..n {
            prop_assert_eq!(adj[u * n + u], alive[u] as u8 as f64);
            for v in 0..n {
                prop_assert_eq!(adj[u * n + v], adj[v * n + u]);
                prop_assert_eq!(adj[u * n + v] == 1.0, alive[u] && alive[v]);
            }
        }
    }

    #[test]
    fn mixers_are_monotone(seed in any::<u64>(), n in 2usize..5, qmix in prop::bool::ANY) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let alg = if qmix { Algorithm::Qmix } else { Algorithm::Mgan };
        let inst = MixInstance::random(alg, n, &mut r);
        let q = random_matrix(&mut r, 1, n, 5.0).into_data();
        for slope in inst.q_slopes(&q) {
            prop_assert!(slope >= -1e-9, "{}", slope);
        }
    }

    #[test]
    fn greedy_actions_maximise_q_tot(seed in any::<u64>(), n in 2usize..4, u in 2usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let inst = MixInstance::random(Algorithm::Mgan, n, &mut r);
        let q: Vec<Vec<f64>> = (0..n).map(|_| random_matrix(&mut r, 1, u, 3.0).into_data()).collect();
        let (greedy, best) = inst.igm_gap(&q);
        prop_assert!((greedy - best).abs() < 1e-9);
    }

    #[test]
    fn greedy_ignores_unavailable(q in prop::collection::vec(-10.0f64..10.0, 2..8), pick in any::<prop::sample::Index>()) {
        let mut avail = vec![false; q.len()];
        avail[pick.index(q.len())] = true;
        prop_assert_eq!(greedy_action(&q, &avail).unwrap(), pick.index(q.len()));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), step in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterTree::new();
        params.insert_linear("a", 3, 2, &mut r).unwrap();
        params.insert("b", random_matrix(&mut r, 2, 2, 1.0), false).unwrap();
        let acc = params.clone();
        let ckpt = Checkpoint {
            meta: format!("seed = {seed}"),
            params,
            optimizer: RmsProp::from_parts(5e-4, 0.99, 1e-5, step, acc),
        };
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        prop_assert_eq!(Checkpoint::read_from(bytes.as_slice()).unwrap(), ckpt);
    }
}
