//! Importance-gated propagation over the knowledge graph.
//!
//! Starting from the objects detected in a window, each round proposes the
//! unvisited neighbors of the active set as candidates, scores each with the
//! importance network, and activates those scoring strictly above the
//! threshold γ. A node evaluated once — accepted or rejected — is never
//! proposed again. The surviving nodes are turned into a fixed-size block of
//! context vectors that conditions the attention rectifiers.

use crate::error::Result;
use crate::graph::{KnowledgeGraph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::params::{ParamStore, TapeBinding};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{sigmoid_kernel, Tensor};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Parameter names for the node-embedding table and the two small networks
/// (importance scorer `fi`, context producer `fc`).
pub const EMBED: &str = "kg.embed";
pub const FI_W1: &str = "kg.fi.w1";
pub const FI_B1: &str = "kg.fi.b1";
pub const FI_W2: &str = "kg.fi.w2";
pub const FI_B2: &str = "kg.fi.b2";
pub const FC_W1: &str = "kg.fc.w1";
pub const FC_B1: &str = "kg.fc.b1";
pub const FC_W2: &str = "kg.fc.w2";
pub const FC_B2: &str = "kg.fc.b2";

/// Register embedding table plus importance/context networks.
///
/// Dense weights use the crate-wide uniform(±1/√fan_in) init.
pub fn init_kg_params<S: Scalar>(
    params: &mut ParamStore<S>,
    n_nodes: usize,
    d_kg: usize,
    feat_dim: usize,
    fi_hidden: usize,
    d_ctx: usize,
    rng: &mut ChaCha8Rng,
) {
    let dense = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (rows as f64).sqrt();
        Tensor::<S>::uniform(rows, cols, -bound, bound, rng)
    };
    let d_in = d_kg + feat_dim;
    params.insert(EMBED, dense(n_nodes, d_kg, rng));
    params.insert(FI_W1, dense(d_in, fi_hidden, rng));
    params.insert(FI_B1, Tensor::zeros(1, fi_hidden));
    params.insert(FI_W2, dense(fi_hidden, 1, rng));
    params.insert(FI_B2, Tensor::zeros(1, 1));
    params.insert(FC_W1, dense(d_in, d_ctx, rng));
    params.insert(FC_B1, Tensor::zeros(1, d_ctx));
    params.insert(FC_W2, dense(d_ctx, d_ctx, rng));
    params.insert(FC_B2, Tensor::zeros(1, d_ctx));
}

/// Number of scalars `init_kg_params` registers, for the parameter-count
/// bookkeeping in the model.
pub fn kg_param_count(
    n_nodes: usize,
    d_kg: usize,
    feat_dim: usize,
    fi_hidden: usize,
    d_ctx: usize,
) -> usize {
    let d_in = d_kg + feat_dim;
    n_nodes * d_kg                      // embedding table
        + d_in * fi_hidden + fi_hidden  // fi layer 1
        + fi_hidden + 1                 // fi layer 2
        + d_in * d_ctx + d_ctx          // fc layer 1
        + d_ctx * d_ctx + d_ctx         // fc layer 2
}

/// Importance of one node given the window's visual summary: a sigmoid MLP
/// over [node embedding ‖ visual summary], in (0,1).
///
/// The score only gates set membership and ordering — both hard decisions —
/// so this path carries no gradient and runs off-tape.
pub fn importance<S: Scalar>(
    node: NodeId,
    visual: &Tensor<S>,
    params: &ParamStore<S>,
) -> S {
    let emb = Tensor::row(params.get(EMBED).row_slice(node.0).to_vec());
    let mut x = emb.data().to_vec();
    x.extend_from_slice(visual.data());
    let x = Tensor::row(x);
    let h = x
        .matmul(params.get(FI_W1))
        .expect("fi.w1 shape")
        .add_row(params.get(FI_B1))
        .map(|v| v.max(S::zero()));
    let y = h
        .matmul(params.get(FI_W2))
        .expect("fi.w2 shape")
        .add_row(params.get(FI_B2));
    sigmoid_kernel(y.data()[0])
}

/// Snapshot of a finished propagation.
#[derive(Clone, Debug)]
pub struct PropagationState<S> {
    /// Rounds actually executed (may stop early once no candidates remain).
    pub step: usize,
    pub active: BTreeSet<NodeId>,
    /// Candidate set of the last executed round.
    pub candidates: BTreeSet<NodeId>,
    /// Score of every node that was ever evaluated, including the initial set.
    pub importance: BTreeMap<NodeId, S>,
}

/// Core propagation loop with an arbitrary scoring function, so tests can
/// drive it with stub importance tables.
pub fn propagate_with<S: Scalar, F>(
    graph: &KnowledgeGraph,
    initial: &BTreeSet<NodeId>,
    gamma: S,
    rounds: usize,
    score: F,
) -> PropagationState<S>
where
    F: Fn(NodeId) -> S,
{
    let mut active = initial.clone();
    let mut visited = initial.clone();
    let mut importance = BTreeMap::new();
    for &n in initial {
        importance.insert(n, score(n));
    }
    let mut candidates = BTreeSet::new();
    let mut step = 0;
    for _ in 0..rounds {
        let frontier: BTreeSet<NodeId> = active
            .iter()
            .flat_map(|&n| graph.neighbors(n).iter().copied())
            .filter(|n| !visited.contains(n))
            .collect();
        if frontier.is_empty() {
            break;
        }
        step += 1;
        candidates = frontier.clone();
        for c in frontier {
            let s = score(c);
            importance.insert(c, s);
            if s > gamma {
                active.insert(c);
            }
            visited.insert(c);
        }
    }
    PropagationState {
        step,
        active,
        candidates,
        importance,
    }
}

/// Propagation scored by the learned importance network.
pub fn propagate<S: Scalar>(
    graph: &KnowledgeGraph,
    initial: &BTreeSet<NodeId>,
    visual: &Tensor<S>,
    gamma: S,
    rounds: usize,
    params: &ParamStore<S>,
) -> PropagationState<S> {
    propagate_with(graph, initial, gamma, rounds, |n| {
        importance(n, visual, params)
    })
}

/// Active nodes ordered by descending importance (ties broken by ascending
/// node id), truncated to `n_max`.
pub fn ordered_nodes<S: Scalar>(state: &PropagationState<S>, n_max: usize) -> Vec<NodeId> {
    let mut nodes: Vec<NodeId> = state.active.iter().copied().collect();
    nodes.sort_by(|a, b| {
        let ia = state.importance[a].to_f64_lossy();
        let ib = state.importance[b].to_f64_lossy();
        ib.partial_cmp(&ia)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    nodes.truncate(n_max);
    nodes
}

/// Fixed-size context block for the rectification networks.
#[derive(Clone, Debug)]
pub struct ContextSet<S> {
    /// n_max × d_ctx; rows beyond `count` are zero padding.
    pub vectors: Tensor<S>,
    pub count: usize,
    /// Index of the frame this context came from, when propagation runs
    /// per frame rather than once per window.
    pub frame: Option<usize>,
}

/// Build the context rows on a tape: one context-network output per node, in
/// the given order, zero-padded to `n_max` rows. Differentiable into the
/// embedding table and the context network.
pub fn context_rows_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &TapeBinding,
    nodes: &[NodeId],
    visual: &Tensor<S>,
    n_max: usize,
    d_ctx: usize,
) -> Result<Var> {
    assert!(nodes.len() <= n_max, "context nodes exceed n_max");
    if nodes.is_empty() {
        return Ok(tape.zeros(n_max, d_ctx));
    }
    let ids: Vec<usize> = nodes.iter().map(|n| n.0).collect();
    let embs = tape.embed(binding.var(EMBED), &ids);
    let vis_rows = Tensor::from_rows(&vec![visual.data().to_vec(); nodes.len()]);
    let vis = tape.leaf(vis_rows);
    let x = tape.concat_cols(&[embs, vis]);
    let h0 = tape.affine(x, binding.var(FC_W1), binding.var(FC_B1))?;
    let h = tape.relu(h0);
    let rows = tape.affine(h, binding.var(FC_W2), binding.var(FC_B2))?;
    if nodes.len() == n_max {
        Ok(rows)
    } else {
        let pad = tape.zeros(n_max - nodes.len(), d_ctx);
        Ok(tape.concat_rows(&[rows, pad]))
    }
}

/// Value-level context vectors (runs the tape program and extracts values).
pub fn context_vectors<S: Scalar>(
    state: &PropagationState<S>,
    visual: &Tensor<S>,
    n_max: usize,
    d_ctx: usize,
    params: &ParamStore<S>,
    frame: Option<usize>,
) -> Result<ContextSet<S>> {
    let nodes = ordered_nodes(state, n_max);
    let mut tape = Tape::new();
    let binding = TapeBinding::bind(&mut tape, params);
    let rows = context_rows_on_tape(&mut tape, &binding, &nodes, visual, n_max, d_ctx)?;
    Ok(ContextSet {
        vectors: tape.tensor(rows),
        count: nodes.len(),
        frame,
    })
}
