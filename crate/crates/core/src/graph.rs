//! Agent graph construction and the attention-aggregator graph encoders.
//!
//! Each of the `G` encoders is a two-layer network. A layer aggregates
//! neighbour features with dot-product attention and then combines the
//! aggregate with the node's own features through a shared
//! `ReLU(W·[a_v ‖ h_v] + b)`. A single transform affine, shared by all
//! encoders, maps every final embedding to the scalar used for credit.

use rand::Rng;

use crate::array::RealArray;
use crate::autodiff::{ParameterTree, Tape, Var};
use crate::error::{Error, Result};

pub const GCN_LAYERS: usize = 2;
pub const TRANSFORM_PREFIX: &str = "transform";

/// Adjacency plus node features for one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentGraph {
    /// `n × n` row-major {0,1} matrix.
    pub adjacency: Vec<f64>,
    /// `[n × obs_dim]`; each node starts from its agent's local observation.
    pub node_features: RealArray,
}

impl AgentGraph {
    pub fn from_alive(alive: &[bool], node_features: RealArray) -> Result<Self> {
        if node_features.rows() != alive.len() {
            return Err(Error::Shape {
                op: "AgentGraph::from_alive",
                lhs: vec![alive.len()],
                rhs: node_features.shape().to_vec(),
            });
        }
        node_features.ensure_finite("AgentGraph::from_alive")?;
        Ok(Self {
            adjacency: build_adjacency(alive),
            node_features,
        })
    }

    pub fn nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.nodes();
        (0..n).filter(move |&u| self.adjacency[v * n + u] != 0.0)
    }
}

/// Per-encoder embeddings and transform scalars for one batch of graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    /// One `[rows × emb_dim]` array per encoder.
    pub embeddings: Vec<RealArray>,
    /// One `[rows]` array of `c_{g,v}` per encoder.
    pub scalars: Vec<RealArray>,
}

impl EmbeddingSet {
    pub fn graphs(&self) -> usize {
        self.scalars.len()
    }
}

/// `e_uv = 1` iff both `u` and `v` are alive (self-loops included).
pub fn build_adjacency(alive: &[bool]) -> Vec<f64> {
    let n = alive.len();
    let mut adj = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            if alive[u] && alive[v] {
                adj[u * n + v] = 1.0;
            }
        }
    }
    adj
}

/// Stacked adjacency for `blocks` graphs given a flat `[blocks × n]` alive mask.
pub fn build_block_adjacency(alive: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(alive.len() * n);
    for block in alive.chunks(n) {
        let mask: Vec<bool> = block.iter().map(|&a| a != 0.0).collect();
        out.extend(build_adjacency(&mask));
    }
    out
}

pub fn layer_prefix(graph: usize, layer: usize) -> String {
    format!("graph.{graph}.layer.{layer}.combine")
}

pub fn init_graph_params<R: Rng + ?Sized>(
    tree: &mut ParameterTree,
    in_dim: usize,
    emb_dim: usize,
    graphs: usize,
    rng: &mut R,
) -> Result<()> {
    for g in 0..graphs {
        let mut d = in_dim;
        for k in 0..GCN_LAYERS {
            tree.insert_linear(&layer_prefix(g, k), 2 * d, emb_dim, rng)?;
            d = emb_dim;
        }
    }
    tree.insert_linear(TRANSFORM_PREFIX, emb_dim, 1, rng)
}

pub fn attention_aggregate(tape: &mut Tape, features: Var, adjacency: &[f64], nodes: usize) -> Result<Var> {
    tape.graph_attention(features, adjacency, nodes)
}

/// `ReLU(W·[aggregated ‖ original] + b)` with the layer's shared weights.
pub fn combine(tape: &mut Tape, tree: &ParameterTree, prefix: &str, aggregated: Var, original: Var) -> Result<Var> {
    if tape.value(aggregated).shape() != tape.value(original).shape() {
        return Err(Error::Shape {
            op: "combine",
            lhs: tape.value(aggregated).shape().to_vec(),
            rhs: tape.value(original).shape().to_vec(),
        });
    }
    let cat = tape.concat_cols(aggregated, original)?;
    let y = tape.dense(tree, prefix, cat)?;
    tape.relu(y)
}

/// Runs encoder `graph` over stacked node features `[(blocks·nodes) × d]`.
/// Returns the final embeddings and the transform scalars `[(blocks·nodes) × 1]`.
pub fn encode(
    tape: &mut Tape,
    tree: &ParameterTree,
    graph: usize,
    features: Var,
    adjacency: &[f64],
    nodes: usize,
) -> Result<(Var, Var)> {
    let mut h = features;
    for k in 0..GCN_LAYERS {
        let a = attention_aggregate(tape, h, adjacency, nodes)?;
        h = combine(tape, tree, &layer_prefix(graph, k), a, h)?;
    }
    let c = tape.dense(tree, TRANSFORM_PREFIX, h)?;
    Ok((h, c))
}

/// Evaluates all encoders on one graph without gradient tracking.
pub fn encode_graph(graph: &AgentGraph, tree: &ParameterTree, graphs: usize) -> Result<EmbeddingSet> {
    let mut tape = Tape::frozen();
    let x = tape.constant(graph.node_features.clone())?;
    let mut set = EmbeddingSet {
        embeddings: Vec::with_capacity(graphs),
        scalars: Vec::with_capacity(graphs),
    };
    for g in 0..graphs {
        let (h, c) = encode(&mut tape, tree, g, x, &graph.adjacency, graph.nodes())?;
        set.embeddings.push(tape.value(h).clone());
        set.scalars.push(RealArray::vector(tape.value(c).data().to_vec()));
    }
    Ok(set)
}
