//! Encoder–decoder forward pass.
//!
//! The forward is split in two stages. [`plan_context`] runs the
//! non-differentiable part: object detection from scene annotations and
//! threshold-gated propagation through the knowledge graph, yielding an
//! ordered node list. [`forward_with_context`] is the purely differentiable
//! remainder — context rows, rectifiers, transformer, heads — conditioned on
//! that fixed node list. Gradient tests target the second stage directly so
//! finite differences never straddle a discrete propagation decision.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head, AttnVars};
use super::rectify::{rectifier, stacked_eye, RectVars};
use super::{ForwardOptions, ForwardOutputs, Inspection, ModelConfig, SiteWeights};
use crate::error::{Error, Result};
use crate::graph::propagate::{context_rows_on_tape, ordered_nodes, propagate, PropagationState};
use crate::graph::{KnowledgeGraph, NodeId, SceneAnnotation};
use crate::scalar::Scalar;
use crate::tensor::params::{ParamStore, TapeBinding};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Result of the discrete context-selection stage.
#[derive(Debug, Clone)]
pub struct ContextPlan<S: Scalar> {
    /// Active nodes, most important first, truncated to the context budget.
    pub nodes: Vec<NodeId>,
    pub state: PropagationState<S>,
}

/// Detects scene objects and propagates importance through the graph.
///
/// In the default mode all observed scenes are unioned and propagation runs
/// once from that seed set. In per-frame mode each frame propagates from its
/// own scene with its own features as the visual cue, and the results merge
/// by maximum importance — useful when the visible object set changes inside
/// the observation window.
pub fn plan_context<S: Scalar>(
    graph: &KnowledgeGraph,
    scenes: &[SceneAnnotation],
    frames: &Tensor<S>,
    visual: &Tensor<S>,
    params: &ParamStore<S>,
    cfg: &ModelConfig,
) -> Result<ContextPlan<S>> {
    let gamma = S::of(cfg.prop_gamma);
    let state = if cfg.per_frame_ctx {
        let mut importance: BTreeMap<NodeId, S> = BTreeMap::new();
        let mut active = std::collections::BTreeSet::new();
        let mut candidates = std::collections::BTreeSet::new();
        let mut step = 0;
        for (f, scene) in scenes.iter().enumerate() {
            let initial = graph.detect_objects(scene)?;
            let vis = Tensor::row(frames.row_slice(f).to_vec());
            let st = propagate(graph, &initial, &vis, gamma, cfg.prop_steps, params);
            for (n, s) in st.importance {
                let slot = importance.entry(n).or_insert(s);
                if s > *slot {
                    *slot = s;
                }
            }
            active.extend(st.active);
            candidates.extend(st.candidates);
            step = step.max(st.step);
        }
        PropagationState {
            step,
            active,
            candidates,
            importance,
        }
    } else {
        let mut union = SceneAnnotation::new();
        for scene in scenes {
            union.extend(scene.iter().cloned());
        }
        let initial = graph.detect_objects(&union)?;
        propagate(graph, &initial, visual, gamma, cfg.prop_steps, params)
    };
    let nodes = ordered_nodes(&state, cfg.n_ctx);
    Ok(ContextPlan { nodes, state })
}

fn layer_norm(tape: &mut Tape<impl Scalar>, binding: &TapeBinding, prefix: &str, x: Var) -> Var {
    tape.layer_norm(
        x,
        binding.var(&format!("{prefix}.gain")),
        binding.var(&format!("{prefix}.bias")),
        1e-5,
    )
}

fn feed_forward<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &TapeBinding,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let h = tape.affine(
        x,
        binding.var(&format!("{prefix}.w1")),
        binding.var(&format!("{prefix}.b1")),
    )?;
    let h = tape.gelu(h);
    tape.affine(
        h,
        binding.var(&format!("{prefix}.w2")),
        binding.var(&format!("{prefix}.b2")),
    )
}

fn maybe_dropout<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Var {
    match rng {
        Some(r) if p > 0.0 => tape.dropout(x, p, r),
        _ => x,
    }
}

/// The differentiable forward, conditioned on an already-chosen context.
/// `plan: None` is the ablated model: no context rows, no rectification.
#[allow(clippy::too_many_arguments)]
pub fn forward_with_context<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &TapeBinding,
    cfg: &ModelConfig,
    graph: &KnowledgeGraph,
    frames: &Tensor<S>,
    visual: &Tensor<S>,
    plan: Option<&ContextPlan<S>>,
    opts: &ForwardOptions,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutputs<S>> {
    let n = frames.rows();
    if n == 0 {
        return Err(Error::Data("forward needs at least one observed frame".into()));
    }
    if n > cfg.max_frames {
        return Err(Error::Data(format!(
            "{n} observed frames exceed the positional table ({} rows)",
            cfg.max_frames
        )));
    }
    if frames.cols() != cfg.feat_dim {
        return Err(Error::Data(format!(
            "frames have {} feature dims, model expects {}",
            frames.cols(),
            cfg.feat_dim
        )));
    }

    let dk = cfg.d_model / cfg.n_heads;
    let blocks = if cfg.rect_per_head { cfg.n_heads } else { 1 };
    let (rect_e, rect_d) = match plan {
        None => (None, None),
        Some(_) if opts.force_identity_rect => {
            let re = tape.leaf(stacked_eye(blocks, dk));
            let rd = tape.leaf(stacked_eye(blocks, dk));
            (Some(re), Some(rd))
        }
        Some(plan) => {
            let ctx = context_rows_on_tape(
                tape,
                binding,
                &plan.nodes,
                visual,
                cfg.n_ctx,
                cfg.d_ctx,
            )?;
            let pe = RectVars::bind(binding, "rect.e");
            let pd = RectVars::bind(binding, "rect.d");
            let re = rectifier(tape, &pe, ctx, plan.nodes.len(), cfg.rect_hidden, blocks, dk)?;
            let rd = rectifier(tape, &pd, ctx, plan.nodes.len(), cfg.rect_hidden, blocks, dk)?;
            (Some(re), Some(rd))
        }
    };

    let mut attention_log: Vec<SiteWeights<S>> = Vec::new();
    let mut capture = |site: String, tensors: Vec<Tensor<S>>| {
        attention_log.push(SiteWeights {
            site,
            heads: tensors,
        });
    };

    // Encoder over the observed frames.
    let x0 = tape.leaf(frames.clone());
    let xp = tape.affine(x0, binding.var("input.proj.w"), binding.var("input.proj.b"))?;
    let pos = binding.var("input.pos");
    let pos_n = tape.slice_rows(pos, 0..n);
    let mut x = tape.add(xp, pos_n);
    x = maybe_dropout(tape, x, opts.dropout, &mut rng);
    for l in 0..cfg.n_encoder_layers {
        let p = AttnVars::bind(binding, &format!("enc.{l}.attn"));
        let mut weights = opts.inspect.then(Vec::new);
        let a = multi_head(tape, &p, x, x, cfg.n_heads, rect_e, weights.as_mut())?;
        if let Some(w) = weights {
            capture(format!("enc.{l}.self"), w);
        }
        let a = maybe_dropout(tape, a, opts.dropout, &mut rng);
        let s = tape.add(x, a);
        x = layer_norm(tape, binding, &format!("enc.{l}.ln1"), s);
        let f = feed_forward(tape, binding, &format!("enc.{l}.ff"), x)?;
        let f = maybe_dropout(tape, f, opts.dropout, &mut rng);
        let s = tape.add(x, f);
        x = layer_norm(tape, binding, &format!("enc.{l}.ln2"), s);
    }
    let enc_out = x;

    // Decoder: learned query slots attend to the encoded observation.
    let mut y = binding.var("dec.queries");
    for l in 0..cfg.n_decoder_layers {
        let p_self = AttnVars::bind(binding, &format!("dec.{l}.self"));
        let mut w_self = opts.inspect.then(Vec::new);
        let a = multi_head(tape, &p_self, y, y, cfg.n_heads, rect_d, w_self.as_mut())?;
        if let Some(w) = w_self {
            capture(format!("dec.{l}.self"), w);
        }
        let a = maybe_dropout(tape, a, opts.dropout, &mut rng);
        let s = tape.add(y, a);
        y = layer_norm(tape, binding, &format!("dec.{l}.ln1"), s);

        let p_cross = AttnVars::bind(binding, &format!("dec.{l}.cross"));
        let mut w_cross = opts.inspect.then(Vec::new);
        let c = multi_head(tape, &p_cross, y, enc_out, cfg.n_heads, rect_d, w_cross.as_mut())?;
        if let Some(w) = w_cross {
            capture(format!("dec.{l}.cross"), w);
        }
        let c = maybe_dropout(tape, c, opts.dropout, &mut rng);
        let s = tape.add(y, c);
        y = layer_norm(tape, binding, &format!("dec.{l}.ln2"), s);

        let f = feed_forward(tape, binding, &format!("dec.{l}.ff"), y)?;
        let f = maybe_dropout(tape, f, opts.dropout, &mut rng);
        let s = tape.add(y, f);
        y = layer_norm(tape, binding, &format!("dec.{l}.ln3"), s);
    }

    let obs_logits = tape.affine(enc_out, binding.var("head.obs.w"), binding.var("head.obs.b"))?;
    let act_logits = tape.affine(y, binding.var("head.act.w"), binding.var("head.act.b"))?;
    let dur_col = tape.affine(y, binding.var("head.dur.w"), binding.var("head.dur.b"))?;
    let dur_row = tape.transpose(dur_col);
    let durations = tape.softmax_rows(dur_row);

    let inspection = opts.inspect.then(|| Inspection {
        context_nodes: plan
            .map(|p| {
                p.nodes
                    .iter()
                    .map(|&n| {
                        (
                            graph.name(n).to_string(),
                            p.state.importance[&n].to_f64_lossy(),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default(),
        r_enc: rect_e.map(|r| tape.tensor(r)),
        r_dec: rect_d.map(|r| tape.tensor(r)),
        attention: attention_log,
    });

    Ok(ForwardOutputs {
        obs_logits,
        act_logits,
        durations,
        ctx_count: plan.map_or(0, |p| p.nodes.len()),
        inspection,
    })
}

/// Full forward: context planning (when the knowledge graph is enabled)
/// followed by the differentiable stage.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &TapeBinding,
    cfg: &ModelConfig,
    graph: &KnowledgeGraph,
    params: &ParamStore<S>,
    frames: &Tensor<S>,
    scenes: &[SceneAnnotation],
    opts: &ForwardOptions,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutputs<S>> {
    if scenes.len() != frames.rows() {
        return Err(Error::Data(format!(
            "{} scene annotations for {} frames",
            scenes.len(),
            frames.rows()
        )));
    }
    let visual = frames.mean_rows();
    let plan = if opts.use_kg {
        Some(plan_context(graph, scenes, frames, &visual, params, cfg)?)
    } else {
        None
    };
    forward_with_context(
        tape,
        binding,
        cfg,
        graph,
        frames,
        &visual,
        plan.as_ref(),
        opts,
        rng,
    )
}
