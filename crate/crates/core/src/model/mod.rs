//! The anticipation model: a transformer encoder–decoder whose attention is
//! rectified by matrices derived from knowledge-graph context.
//!
//! Observed frames are projected, position-tagged and self-encoded; a fixed
//! set of learned query slots cross-attends to the encoding and each slot
//! emits a future action class plus a share of the prediction horizon.
//! Scene objects detected in the observation seed a propagation through the
//! object–affordance graph, and the surviving nodes' context vectors drive
//! two LSTMs that bend every attention score matrix — encoder
//! self-attention with `R_e`, decoder self- and cross-attention with
//! `R_d` — via `R = I + ΔR`.

pub mod attention;
pub mod net;
pub mod rectify;

pub use net::{forward_on_tape, forward_with_context, plan_context, ContextPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::propagate::{init_kg_params, kg_param_count};
use crate::graph::KnowledgeGraph;
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;
use crate::tensor::params::{ParamStore, TapeBinding};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    /// Decoder query slots — the maximum number of future segments the model
    /// can emit.
    pub n_queries: usize,
    /// Action classes including the trailing "none" class.
    pub n_classes: usize,
    pub max_frames: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    /// Context slots fed to the rectifiers (`N_max`).
    pub n_ctx: usize,
    pub d_ctx: usize,
    pub d_kg: usize,
    pub fi_hidden: usize,
    pub rect_hidden: usize,
    /// Importance threshold a frontier node must exceed to join the context.
    ///
    /// The scorer sits behind a hard accept/reject decision, so it receives
    /// no gradient and keeps its initialization, which scores every node
    /// near 0.5. The default threshold is therefore above that band: a
    /// fresh model's context is exactly the detected scene objects, and
    /// propagation only adds nodes once someone deliberately lowers the
    /// threshold or supplies a stronger scorer.
    pub prop_gamma: f64,
    pub prop_steps: usize,
    /// One rectifier block per head instead of a shared one.
    pub rect_per_head: bool,
    /// Propagate from every observed frame separately and merge.
    pub per_frame_ctx: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 64,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            n_queries: 8,
            n_classes: 14,
            max_frames: 256,
            ff_mult: 4,
            dropout: 0.1,
            n_ctx: 16,
            d_ctx: 32,
            d_kg: 32,
            fi_hidden: 16,
            rect_hidden: 32,
            prop_gamma: 0.75,
            prop_steps: 3,
            rect_per_head: false,
            per_frame_ctx: false,
        }
    }
}

impl ModelConfig {
    /// Small enough for finite-difference sweeps in tests.
    pub fn tiny() -> Self {
        ModelConfig {
            feat_dim: 10,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            n_queries: 3,
            n_classes: 5,
            max_frames: 16,
            ff_mult: 2,
            dropout: 0.0,
            n_ctx: 4,
            d_ctx: 6,
            d_kg: 5,
            fi_hidden: 4,
            rect_hidden: 5,
            prop_gamma: 0.5,
            prop_steps: 2,
            rect_per_head: false,
            per_frame_ctx: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        for (what, v) in [
            ("feat_dim", self.feat_dim),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("n_queries", self.n_queries),
            ("max_frames", self.max_frames),
            ("ff_mult", self.ff_mult),
            ("n_ctx", self.n_ctx),
            ("d_ctx", self.d_ctx),
            ("d_kg", self.d_kg),
            ("fi_hidden", self.fi_hidden),
            ("rect_hidden", self.rect_hidden),
        ] {
            if v == 0 {
                return fail(format!("{what} must be positive"));
            }
        }
        if self.n_classes < 2 {
            return fail("n_classes must cover at least one action plus none".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.prop_gamma) {
            return fail(format!("prop_gamma {} must lie in [0, 1]", self.prop_gamma));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn rect_blocks(&self) -> usize {
        if self.rect_per_head {
            self.n_heads
        } else {
            1
        }
    }
}

/// Registers every weight of the model, in a fixed order so initialization
/// is reproducible. Dense weights draw from uniform(±1/√fan_in); biases
/// start at zero, layer-norm gains at one, and the rectifier output layers
/// at exactly zero so both rectifiers begin as the identity.
pub fn init_params<S: Scalar>(
    cfg: &ModelConfig,
    n_nodes: usize,
    master_seed: u64,
) -> ParamStore<S> {
    let mut rng = stream_rng(master_seed, streams::PARAM_INIT);
    let mut params = ParamStore::new();
    let d = cfg.d_model;
    let ff = cfg.ff_mult * d;
    let mut dense = |params: &mut ParamStore<S>, name: String, rows: usize, cols: usize| {
        let bound = 1.0 / (rows as f64).sqrt();
        let t = Tensor::uniform(rows, cols, -bound, bound, &mut rng);
        params.insert(&name, t);
    };
    let zeros = |params: &mut ParamStore<S>, name: String, rows: usize, cols: usize| {
        params.insert(&name, Tensor::zeros(rows, cols));
    };
    let ones = |params: &mut ParamStore<S>, name: String, cols: usize| {
        params.insert(&name, Tensor::new(vec![1, cols], vec![S::one(); cols]));
    };
    let attn = |params: &mut ParamStore<S>,
                dense: &mut dyn FnMut(&mut ParamStore<S>, String, usize, usize),
                prefix: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            dense(params, format!("{prefix}.{w}"), d, d);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            zeros(params, format!("{prefix}.{b}"), 1, d);
        }
    };
    let norm = |params: &mut ParamStore<S>, prefix: &str| {
        ones(params, format!("{prefix}.gain"), d);
        zeros(params, format!("{prefix}.bias"), 1, d);
    };

    dense(&mut params, "input.proj.w".into(), cfg.feat_dim, d);
    zeros(&mut params, "input.proj.b".into(), 1, d);
    dense(&mut params, "input.pos".into(), cfg.max_frames, d);

    for l in 0..cfg.n_encoder_layers {
        attn(&mut params, &mut dense, &format!("enc.{l}.attn"));
        norm(&mut params, &format!("enc.{l}.ln1"));
        dense(&mut params, format!("enc.{l}.ff.w1"), d, ff);
        zeros(&mut params, format!("enc.{l}.ff.b1"), 1, ff);
        dense(&mut params, format!("enc.{l}.ff.w2"), ff, d);
        zeros(&mut params, format!("enc.{l}.ff.b2"), 1, d);
        norm(&mut params, &format!("enc.{l}.ln2"));
    }

    dense(&mut params, "dec.queries".into(), cfg.n_queries, d);
    for l in 0..cfg.n_decoder_layers {
        attn(&mut params, &mut dense, &format!("dec.{l}.self"));
        norm(&mut params, &format!("dec.{l}.ln1"));
        attn(&mut params, &mut dense, &format!("dec.{l}.cross"));
        norm(&mut params, &format!("dec.{l}.ln2"));
        dense(&mut params, format!("dec.{l}.ff.w1"), d, ff);
        zeros(&mut params, format!("dec.{l}.ff.b1"), 1, ff);
        dense(&mut params, format!("dec.{l}.ff.w2"), ff, d);
        zeros(&mut params, format!("dec.{l}.ff.b2"), 1, d);
        norm(&mut params, &format!("dec.{l}.ln3"));
    }

    dense(&mut params, "head.obs.w".into(), d, cfg.n_classes);
    zeros(&mut params, "head.obs.b".into(), 1, cfg.n_classes);
    dense(&mut params, "head.act.w".into(), d, cfg.n_classes);
    zeros(&mut params, "head.act.b".into(), 1, cfg.n_classes);
    dense(&mut params, "head.dur.w".into(), d, 1);
    zeros(&mut params, "head.dur.b".into(), 1, 1);

    let r_out = cfg.rect_blocks() * cfg.head_dim() * cfg.head_dim();
    for side in ["rect.e", "rect.d"] {
        dense(&mut params, format!("{side}.lstm.wx"), cfg.d_ctx, 4 * cfg.rect_hidden);
        dense(&mut params, format!("{side}.lstm.wh"), cfg.rect_hidden, 4 * cfg.rect_hidden);
        zeros(&mut params, format!("{side}.lstm.b"), 1, 4 * cfg.rect_hidden);
        zeros(&mut params, format!("{side}.out.w"), cfg.rect_hidden, r_out);
        zeros(&mut params, format!("{side}.out.b"), 1, r_out);
    }

    init_kg_params(
        &mut params,
        n_nodes,
        cfg.d_kg,
        cfg.feat_dim,
        cfg.fi_hidden,
        cfg.d_ctx,
        &mut rng,
    );
    params
}

/// Closed-form scalar count of [`init_params`].
pub fn param_count(cfg: &ModelConfig, n_nodes: usize) -> usize {
    let d = cfg.d_model;
    let ff = cfg.ff_mult * d;
    let attn = 4 * d * d + 4 * d;
    let norm = 2 * d;
    let ff_block = d * ff + ff + ff * d + d;
    let enc = attn + ff_block + 2 * norm;
    let dec = 2 * attn + ff_block + 3 * norm;
    let input = cfg.feat_dim * d + d + cfg.max_frames * d;
    let heads = 2 * (d * cfg.n_classes + cfg.n_classes) + d + 1;
    let r_out = cfg.rect_blocks() * cfg.head_dim() * cfg.head_dim();
    let rect = cfg.d_ctx * 4 * cfg.rect_hidden
        + cfg.rect_hidden * 4 * cfg.rect_hidden
        + 4 * cfg.rect_hidden
        + cfg.rect_hidden * r_out
        + r_out;
    input
        + cfg.n_encoder_layers * enc
        + cfg.n_queries * d
        + cfg.n_decoder_layers * dec
        + heads
        + 2 * rect
        + kg_param_count(n_nodes, cfg.d_kg, cfg.feat_dim, cfg.fi_hidden, cfg.d_ctx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub use_kg: bool,
    /// Replace both rectifiers with exact identities while keeping the rest
    /// of the knowledge-graph path; isolates what rectification contributes.
    pub force_identity_rect: bool,
    /// Dropout probability; active only when a dropout RNG is supplied.
    pub dropout: f64,
    pub inspect: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            use_kg: true,
            force_identity_rect: false,
            dropout: 0.0,
            inspect: false,
        }
    }
}

/// Post-softmax attention weights of one site, one matrix per head.
#[derive(Debug, Clone)]
pub struct SiteWeights<S: Scalar> {
    /// E.g. `enc.0.self` or `dec.1.cross`.
    pub site: String,
    pub heads: Vec<Tensor<S>>,
}

/// Everything worth looking at inside one forward pass.
#[derive(Debug, Clone)]
pub struct Inspection<S: Scalar> {
    /// Context nodes in rectifier order with their importance scores.
    pub context_nodes: Vec<(String, f64)>,
    pub r_enc: Option<Tensor<S>>,
    pub r_dec: Option<Tensor<S>>,
    pub attention: Vec<SiteWeights<S>>,
}

impl<S: Scalar> Inspection<S> {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("context nodes ({}):\n", self.context_nodes.len()));
        for (name, score) in &self.context_nodes {
            out.push_str(&format!("  {name:<16} {score:.4}\n"));
        }
        let mut matrix = |label: &str, t: &Tensor<S>| {
            out.push_str(&format!("{label} ({}x{}):\n", t.rows(), t.cols()));
            for r in 0..t.rows() {
                let cells: Vec<String> = t
                    .row_slice(r)
                    .iter()
                    .map(|v| format!("{:+.4}", v.to_f64_lossy()))
                    .collect();
                out.push_str(&format!("  {}\n", cells.join(" ")));
            }
        };
        if let Some(r) = &self.r_enc {
            matrix("R[encoder]", r);
        }
        if let Some(r) = &self.r_dec {
            matrix("R[decoder]", r);
        }
        for site in &self.attention {
            for (h, w) in site.heads.iter().enumerate() {
                matrix(&format!("attention {} head {h}", site.site), w);
            }
        }
        out
    }
}

/// Tape variables produced by one forward pass. The caller owns the tape, so
/// these can feed a loss (training) or be read out (inference).
#[derive(Debug)]
pub struct ForwardOutputs<S: Scalar> {
    /// Per observed frame, `n_obs x n_classes`.
    pub obs_logits: Var,
    /// Per query slot, `n_queries x n_classes`.
    pub act_logits: Var,
    /// Duration simplex over slots, `1 x n_queries`, rows sum to one.
    pub durations: Var,
    pub ctx_count: usize,
    pub inspection: Option<Inspection<S>>,
}

/// Decoded, tape-free prediction for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Argmax class per query slot.
    pub slot_classes: Vec<usize>,
    /// Horizon share per slot; sums to one.
    pub slot_durations: Vec<f64>,
    /// Recognized class of the last observed frame.
    pub observed_class: usize,
    pub ctx_count: usize,
}

impl Prediction {
    pub fn check(&self) -> Result<()> {
        if self.slot_classes.len() != self.slot_durations.len() {
            return Err(Error::Numeric(format!(
                "{} classes vs {} durations",
                self.slot_classes.len(),
                self.slot_durations.len()
            )));
        }
        let sum: f64 = self.slot_durations.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || !sum.is_finite() {
            return Err(Error::Numeric(format!(
                "duration simplex sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// A configured model bound to its knowledge graph.
#[derive(Debug, Clone)]
pub struct Anticipator<S: Scalar> {
    pub config: ModelConfig,
    pub graph: KnowledgeGraph,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Anticipator<S> {
    pub fn new(config: ModelConfig, graph: KnowledgeGraph, master_seed: u64) -> Result<Self> {
        config.validate()?;
        if graph.node_count() == 0 {
            return Err(Error::Config("knowledge graph has no nodes".into()));
        }
        let params = init_params(&config, graph.node_count(), master_seed);
        Ok(Anticipator {
            config,
            graph,
            params,
        })
    }

    /// Forward pass with this model's parameters already bound to `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        binding: &TapeBinding,
        frames: &Tensor<S>,
        scenes: &[crate::graph::SceneAnnotation],
        opts: &ForwardOptions,
        rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> Result<ForwardOutputs<S>> {
        net::forward_on_tape(
            tape,
            binding,
            &self.config,
            &self.graph,
            &self.params,
            frames,
            scenes,
            opts,
            rng,
        )
    }

    /// One inference pass, decoded to plain data.
    pub fn predict(
        &self,
        frames: &Tensor<S>,
        scenes: &[crate::graph::SceneAnnotation],
        opts: &ForwardOptions,
    ) -> Result<(Prediction, Option<Inspection<S>>)> {
        let mut tape = Tape::new();
        let binding = TapeBinding::bind(&mut tape, &self.params);
        let out = self.forward(&mut tape, &binding, frames, scenes, opts, None)?;
        let act = tape.tensor(out.act_logits);
        let dur = tape.tensor(out.durations);
        let obs = tape.tensor(out.obs_logits);
        let prediction = Prediction {
            slot_classes: (0..act.rows()).map(|r| argmax(act.row_slice(r))).collect(),
            slot_durations: dur.data().iter().map(|v| v.to_f64_lossy()).collect(),
            observed_class: argmax(obs.row_slice(obs.rows() - 1)),
            ctx_count: out.ctx_count,
        };
        prediction.check()?;
        Ok((prediction, out.inspection))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{builtin_graph, SceneAnnotation};
    use crate::tensor::check::rel_err;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_window(cfg: &ModelConfig, n: usize) -> (Tensor<f64>, Vec<SceneAnnotation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let frames = Tensor::randn(n, cfg.feat_dim, &mut rng);
        let scene: SceneAnnotation = ["knife", "tomato", "board"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        (frames, vec![scene; n])
    }

    #[test]
    fn parameter_count_formula_matches_the_store() {
        let graph = builtin_graph();
        for per_head in [false, true] {
            let cfg = ModelConfig {
                rect_per_head: per_head,
                ..ModelConfig::tiny()
            };
            let params = init_params::<f64>(&cfg, graph.node_count(), 3);
            assert_eq!(params.total_scalars(), param_count(&cfg, graph.node_count()));
        }
        let cfg = ModelConfig::default();
        let params = init_params::<f64>(&cfg, graph.node_count(), 3);
        assert_eq!(params.total_scalars(), param_count(&cfg, graph.node_count()));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = ModelConfig::default();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.n_classes = 1;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
    }

    #[test]
    fn forward_shapes_and_duration_simplex() {
        let cfg = ModelConfig::tiny();
        let model = Anticipator::<f64>::new(cfg.clone(), builtin_graph(), 5).unwrap();
        let (frames, scenes) = toy_window(&cfg, 7);
        let (pred, inspection) = model
            .predict(&frames, &scenes, &ForwardOptions::default())
            .unwrap();
        assert_eq!(pred.slot_classes.len(), cfg.n_queries);
        assert_eq!(pred.slot_durations.len(), cfg.n_queries);
        assert!(pred.slot_classes.iter().all(|&c| c < cfg.n_classes));
        assert!(pred.ctx_count > 0, "kitchen scene should activate context");
        assert!(inspection.is_none());
        pred.check().unwrap();
    }

    #[test]
    fn zeroed_rectifier_heads_ignore_the_graph_bitwise() {
        let cfg = ModelConfig::tiny();
        let mut model = Anticipator::<f64>::new(cfg.clone(), builtin_graph(), 11).unwrap();
        let r_out = cfg.rect_blocks() * cfg.head_dim() * cfg.head_dim();
        for side in ["rect.e", "rect.d"] {
            model.params.set(
                &format!("{side}.out.w"),
                Tensor::zeros(cfg.rect_hidden, r_out),
            );
        }
        let (frames, scenes) = toy_window(&cfg, 6);

        let run = |opts: &ForwardOptions| {
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, &model.params);
            let out = model
                .forward(&mut tape, &binding, &frames, &scenes, opts, None)
                .unwrap();
            (
                tape.tensor(out.obs_logits),
                tape.tensor(out.act_logits),
                tape.tensor(out.durations),
            )
        };
        let with_kg = run(&ForwardOptions::default());
        let without = run(&ForwardOptions {
            use_kg: false,
            ..Default::default()
        });
        assert_eq!(with_kg.0.data(), without.0.data());
        assert_eq!(with_kg.1.data(), without.1.data());
        assert_eq!(with_kg.2.data(), without.2.data());
    }

    #[test]
    fn forced_identity_neutralizes_a_trained_rectifier() {
        let cfg = ModelConfig::tiny();
        let mut model = Anticipator::<f64>::new(cfg.clone(), builtin_graph(), 11).unwrap();
        // Pretend training moved the rectifier output layers.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r_out = cfg.rect_blocks() * cfg.head_dim() * cfg.head_dim();
        for side in ["rect.e", "rect.d"] {
            model.params.set(
                &format!("{side}.out.w"),
                Tensor::uniform(cfg.rect_hidden, r_out, -0.3, 0.3, &mut rng),
            );
        }
        let (frames, scenes) = toy_window(&cfg, 6);

        let run = |opts: &ForwardOptions| {
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, &model.params);
            let out = model
                .forward(&mut tape, &binding, &frames, &scenes, opts, None)
                .unwrap();
            (tape.tensor(out.act_logits), tape.tensor(out.durations))
        };
        let rectified = run(&ForwardOptions::default());
        let forced = run(&ForwardOptions {
            force_identity_rect: true,
            ..Default::default()
        });
        let without = run(&ForwardOptions {
            use_kg: false,
            ..Default::default()
        });
        assert!(
            rectified.0.max_abs_diff(&without.0) > 1e-6,
            "nonzero rectifier should change the logits"
        );
        assert_eq!(forced.0.data(), without.0.data());
        assert_eq!(forced.1.data(), without.1.data());
    }

    #[test]
    fn importance_network_gets_no_gradient_from_the_loss_path() {
        let cfg = ModelConfig::tiny();
        let model = Anticipator::<f64>::new(cfg.clone(), builtin_graph(), 7).unwrap();
        let (frames, scenes) = toy_window(&cfg, 5);
        let mut params = model.params.clone();
        // At the zero init the rectifier output layer would also block all
        // gradient into the context network, so move it off zero first.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r_out = cfg.rect_blocks() * cfg.head_dim() * cfg.head_dim();
        for side in ["rect.e", "rect.d"] {
            params.set(
                &format!("{side}.out.w"),
                Tensor::uniform(cfg.rect_hidden, r_out, -0.2, 0.2, &mut rng),
            );
        }
        let mut tape = Tape::new();
        let binding = TapeBinding::bind(&mut tape, &params);
        let out = model
            .forward(&mut tape, &binding, &frames, &scenes, &ForwardOptions::default(), None)
            .unwrap();
        let s1 = crate::tensor::check::weighted_sum(&mut tape, out.act_logits, 1);
        let s2 = crate::tensor::check::weighted_sum(&mut tape, out.durations, 2);
        let loss = tape.add(s1, s2);
        tape.backward(loss).unwrap();
        binding.scatter_grads(&tape, &mut params);
        for name in ["kg.fi.w1", "kg.fi.b1", "kg.fi.w2", "kg.fi.b2"] {
            assert!(
                params.grad_of(name).data().iter().all(|&g| g == 0.0),
                "{name} picked up gradient through a hard decision"
            );
        }
        // The context network, by contrast, must receive signal.
        let fc_grad: f64 = params
            .grad_of("kg.fc.w1")
            .data()
            .iter()
            .map(|g| g.abs())
            .sum();
        assert!(fc_grad > 0.0, "context network is disconnected");
    }

    #[test]
    fn analytic_gradients_match_finite_differences_end_to_end() {
        let cfg = ModelConfig::tiny();
        let graph = builtin_graph();
        let model = Anticipator::<f64>::new(cfg.clone(), graph.clone(), 13).unwrap();
        let (frames, scenes) = toy_window(&cfg, 5);
        let visual = frames.mean_rows();
        let plan = plan_context(&graph, &scenes, &frames, &visual, &model.params, &cfg).unwrap();
        assert!(!plan.nodes.is_empty());

        let scalar_of = |params: &ParamStore<f64>| -> f64 {
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, params);
            let out = forward_with_context(
                &mut tape,
                &binding,
                &cfg,
                &graph,
                &frames,
                &visual,
                Some(&plan),
                &ForwardOptions::default(),
                None,
            )
            .unwrap();
            let s1 = crate::tensor::check::weighted_sum(&mut tape, out.obs_logits, 101);
            let s2 = crate::tensor::check::weighted_sum(&mut tape, out.act_logits, 202);
            let s3 = crate::tensor::check::weighted_sum(&mut tape, out.durations, 303);
            let s12 = tape.add(s1, s2);
            let loss = tape.add(s12, s3);
            tape.data(loss)[0]
        };

        let mut params = model.params.clone();
        {
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, &params);
            let out = forward_with_context(
                &mut tape,
                &binding,
                &cfg,
                &graph,
                &frames,
                &visual,
                Some(&plan),
                &ForwardOptions::default(),
                None,
            )
            .unwrap();
            let s1 = crate::tensor::check::weighted_sum(&mut tape, out.obs_logits, 101);
            let s2 = crate::tensor::check::weighted_sum(&mut tape, out.act_logits, 202);
            let s3 = crate::tensor::check::weighted_sum(&mut tape, out.durations, 303);
            let s12 = tape.add(s1, s2);
            let loss = tape.add(s12, s3);
            tape.backward(loss).unwrap();
            binding.scatter_grads(&tape, &mut params);
        }

        let h = 1e-6;
        let mut worst = 0.0f64;
        let names: Vec<String> = params.iter().map(|e| e.name.clone()).collect();
        for name in &names {
            let len = params.get(name).data().len();
            // Every scalar of small tensors; a deterministic stride through
            // large ones keeps the sweep under a second.
            let stride = (len / 24).max(1);
            for idx in (0..len).step_by(stride) {
                let analytic = params.grad_of(name).data()[idx];
                let mut probe = params.clone();
                let mut t = probe.get(name).clone();
                let orig = t.data()[idx];
                t.data_mut()[idx] = orig + h;
                probe.set(name, t.clone());
                let up = scalar_of(&probe);
                t.data_mut()[idx] = orig - h;
                probe.set(name, t);
                let down = scalar_of(&probe);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max(rel_err(analytic, fd));
            }
        }
        assert!(worst < 1e-4, "worst gradient mismatch {worst}");
    }

    #[test]
    fn per_frame_context_floods_to_the_same_nodes() {
        let cfg = ModelConfig {
            prop_gamma: 0.0,
            prop_steps: 3,
            n_ctx: 32,
            ..ModelConfig::tiny()
        };
        let graph = builtin_graph();
        let params = init_params::<f64>(&cfg, graph.node_count(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = Tensor::randn(2, cfg.feat_dim, &mut rng);
        let visual = frames.mean_rows();
        let scene = |names: &[&str]| -> SceneAnnotation {
            names.iter().map(|s| s.to_string()).collect()
        };
        let scenes = vec![scene(&["knife"]), scene(&["tomato"])];

        let windowed = plan_context(&graph, &scenes, &frames, &visual, &params, &cfg).unwrap();
        let per_frame_cfg = ModelConfig {
            per_frame_ctx: true,
            ..cfg
        };
        let per_frame =
            plan_context(&graph, &scenes, &frames, &visual, &params, &per_frame_cfg).unwrap();
        assert_eq!(windowed.state.active, per_frame.state.active);
    }

    #[test]
    fn unknown_scene_object_is_an_error() {
        let cfg = ModelConfig::tiny();
        let model = Anticipator::<f64>::new(cfg.clone(), builtin_graph(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let frames = Tensor::randn(3, cfg.feat_dim, &mut rng);
        let scene: SceneAnnotation = ["flamethrower"].iter().map(|s| s.to_string()).collect();
        let err = model
            .predict(&frames, &vec![scene; 3], &ForwardOptions::default())
            .unwrap_err();
        assert!(err.to_string().contains("flamethrower"));
    }

    #[test]
    fn inspection_renders_context_and_matrices() {
        let cfg = ModelConfig::tiny();
        let model = Anticipator::<f64>::new(cfg.clone(), builtin_graph(), 5).unwrap();
        let (frames, scenes) = toy_window(&cfg, 4);
        let opts = ForwardOptions {
            inspect: true,
            ..Default::default()
        };
        let (_, inspection) = model.predict(&frames, &scenes, &opts).unwrap();
        let inspection = inspection.unwrap();
        assert!(!inspection.context_nodes.is_empty());
        assert!(inspection.r_enc.is_some());
        let text = inspection.render();
        assert!(text.contains("R[encoder]"));
        assert!(text.contains("attention enc.0.self head 0"));
        // The top context node survives truncation, whatever it is.
        assert!(text.contains(&inspection.context_nodes[0].0));
    }
}
