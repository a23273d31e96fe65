//! TOML run configuration shared by every subcommand.
//!
//! Every field has a default, so an empty (or absent) file is a valid
//! configuration; unknown keys are rejected rather than silently ignored.

use std::path::Path;

use anticipate_core::data::generate::GenSettings;
use anticipate_core::data::{builtin_grammar, ActionGrammar, BUILTIN_GRAMMAR};
use anticipate_core::error::{Error, Result};
use anticipate_core::eval::EvalGrid;
use anticipate_core::graph::{builtin_graph, KnowledgeGraph, BUILTIN_GRAPH};
use anticipate_core::model::ModelConfig;
use anticipate_core::train::{LossWeights, TrainSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for generation, initialization and training. The
    /// `--seed` flag overrides it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a configuration file, or returns the defaults when no path is
    /// given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot render configuration: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    /// Standard deviation of the per-dimension frame-feature noise.
    pub sigma: f64,
    pub feat_dim: usize,
    /// Fraction of episodes that go to the training split.
    pub train_fraction: f64,
    /// Grammar file; empty means the built-in kitchen grammar.
    pub grammar: String,
    /// Graph file; empty means the built-in kitchen graph.
    pub graph: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 500,
            sigma: 0.4,
            feat_dim: 64,
            train_fraction: 0.8,
            grammar: String::new(),
            graph: String::new(),
        }
    }
}

impl DataConfig {
    pub fn gen_settings(&self, seed: u64) -> GenSettings {
        GenSettings {
            n_episodes: self.episodes,
            seed,
            sigma: self.sigma,
            feat_dim: self.feat_dim,
        }
    }

    /// Parsed grammar plus its raw text (datasets store the text verbatim).
    pub fn load_grammar(&self) -> Result<(ActionGrammar, String)> {
        if self.grammar.is_empty() {
            return Ok((builtin_grammar(), BUILTIN_GRAMMAR.to_string()));
        }
        let text = std::fs::read_to_string(&self.grammar)
            .map_err(|e| Error::io(self.grammar.clone(), e))?;
        let grammar = ActionGrammar::parse(&text, &self.grammar)?;
        Ok((grammar, text))
    }

    pub fn load_graph(&self) -> Result<(KnowledgeGraph, String)> {
        if self.graph.is_empty() {
            return Ok((builtin_graph(), BUILTIN_GRAPH.to_string()));
        }
        let text = std::fs::read_to_string(&self.graph)
            .map_err(|e| Error::io(self.graph.clone(), e))?;
        let graph = KnowledgeGraph::parse(&text, &self.graph)?;
        Ok((graph, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Observation percentages sampled per training example.
    pub alphas: Vec<u32>,
    /// Prediction percentage of the training windows.
    pub beta: u32,
    /// Steps between progress lines and best-checkpoint probes.
    pub log_every: usize,
    pub obs_weight: f64,
    pub act_weight: f64,
    pub dur_weight: f64,
    /// Clip the global gradient norm to this value; 0 disables.
    pub clip_norm: f64,
    /// Linear learning-rate warmup over this many steps; 0 disables.
    pub warmup: usize,
    /// Decay the learning rate as √(warmup/step) after warmup.
    pub decay_lr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let t = TrainSettings::default();
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            alphas: t.alphas,
            beta: t.beta,
            log_every: t.log_every,
            obs_weight: w.obs,
            act_weight: w.act,
            dur_weight: w.dur,
            clip_norm: t.clip_norm,
            warmup: t.warmup_steps,
            decay_lr: t.decay_lr,
        }
    }
}

impl TrainConfig {
    pub fn settings(&self, seed: u64, use_kg: bool) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            alphas: self.alphas.clone(),
            beta: self.beta,
            weights: LossWeights {
                obs: self.obs_weight,
                act: self.act_weight,
                dur: self.dur_weight,
            },
            use_kg,
            log_every: self.log_every,
            clip_norm: self.clip_norm,
            warmup_steps: self.warmup,
            decay_lr: self.decay_lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub alphas: Vec<u32>,
    pub betas: Vec<u32>,
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let grid = EvalGrid::default();
        EvalConfig {
            alphas: grid.alphas,
            betas: grid.betas,
            split: "test".to_string(),
        }
    }
}

impl EvalConfig {
    pub fn grid(&self) -> EvalGrid {
        EvalGrid {
            alphas: self.alphas.clone(),
            betas: self.betas.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_config() {
        let parsed: RunConfig = toml::from_str("").unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 99\n[train]\nsteps = 5\n[model]\nd_model = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.steps, 5);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.n_heads, ModelConfig::default().n_heads);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[train]\nstep = 5\n").unwrap_err();
        assert!(err.to_string().contains("step"));
    }

    #[test]
    fn empty_paths_mean_builtins() {
        let cfg = DataConfig::default();
        let (grammar, text) = cfg.load_grammar().unwrap();
        assert_eq!(grammar.n_actions(), 13);
        assert_eq!(text, BUILTIN_GRAMMAR);
        let (graph, _) = cfg.load_graph().unwrap();
        assert!(graph.node_count() > 0);
    }
}
