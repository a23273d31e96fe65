use std::collections::BTreeSet;
use std::path::Path;

use anticipate_core::graph::propagate::{init_kg_params, propagate};
use anticipate_core::graph::{KnowledgeGraph, NodeKind, Relation, SceneAnnotation};
use anticipate_core::error::Result;
use anticipate_core::rng::{stream_rng, streams};
use anticipate_core::tensor::params::ParamStore;
use anticipate_core::tensor::Tensor;

use super::Ctx;

pub fn run(
    ctx: &Ctx,
    graph_path: Option<&Path>,
    scene: Option<&str>,
    gamma: Option<f64>,
    rounds: Option<usize>,
) -> Result<()> {
    let cfg = ctx.load_config()?;
    let graph = match graph_path {
        Some(p) => KnowledgeGraph::load(p)?,
        None => cfg.data.load_graph()?.0,
    };

    let ids: Vec<_> = graph.node_ids().collect();
    let objects = ids.iter().filter(|&&n| graph.kind(n) == NodeKind::Object).count();
    let affordances = ids.len() - objects;
    let (mut has_aff, mut tool_for) = (0, 0);
    for e in graph.edges() {
        match e.relation {
            Relation::HasAffordance => has_aff += 1,
            Relation::ToolFor => tool_for += 1,
        }
    }
    println!(
        "{} nodes ({objects} objects, {affordances} affordances); {} edges \
         ({has_aff} has-affordance, {tool_for} tool-for)",
        ids.len(),
        has_aff + tool_for
    );
    for &id in &ids {
        let kind = match graph.kind(id) {
            NodeKind::Object => "object",
            NodeKind::Affordance => "affordance",
        };
        let neighbors: Vec<&str> = graph.neighbors(id).iter().map(|&n| graph.name(n)).collect();
        println!(
            "  {kind:<10} {:<16} degree {:<2} -> {}",
            graph.name(id),
            neighbors.len(),
            neighbors.join(", ")
        );
    }

    let Some(scene) = scene else {
        return Ok(());
    };
    let names: SceneAnnotation = scene
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let initial = graph.detect_objects(&names)?;
    let gamma = gamma.unwrap_or(cfg.model.prop_gamma);
    let rounds = rounds.unwrap_or(cfg.model.prop_steps);

    // Fresh seeded scorer parameters and a zero visual summary: this probes
    // the graph topology under the configured threshold, not a trained
    // model's opinion.
    let mut params = ParamStore::<f64>::new();
    let mut rng = stream_rng(ctx.seed_for(&cfg), streams::PARAM_INIT);
    init_kg_params(
        &mut params,
        graph.node_count(),
        cfg.model.d_kg,
        cfg.model.feat_dim,
        cfg.model.fi_hidden,
        cfg.model.d_ctx,
        &mut rng,
    );
    let visual = Tensor::<f64>::zeros(1, cfg.model.feat_dim);

    println!();
    println!(
        "propagation from {{{}}} with gamma {gamma}, {rounds} rounds, seed {}:",
        initial
            .iter()
            .map(|&n| graph.name(n))
            .collect::<Vec<_>>()
            .join(", "),
        ctx.seed_for(&cfg)
    );
    let state = propagate(&graph, &initial, &visual, gamma, rounds, &params);
    let active_names: Vec<&str> = state.active.iter().map(|&n| graph.name(n)).collect();
    println!(
        "rounds executed: {}; active set ({}): {}",
        state.step,
        state.active.len(),
        active_names.join(", ")
    );
    println!("importance of every evaluated node:");
    let accepted: BTreeSet<_> = state.active.iter().copied().collect();
    for (&node, &score) in &state.importance {
        let mark = if initial.contains(&node) {
            "initial"
        } else if accepted.contains(&node) {
            "accepted"
        } else {
            "rejected"
        };
        println!("  {:<16} {score:.4}  {mark}", graph.name(node));
    }
    Ok(())
}
