pub mod eval;
pub mod gen_data;
pub mod inspect_graph;
pub mod predict;
pub mod train;

use std::path::{Path, PathBuf};

use anticipate_core::data::store::Dataset;
use anticipate_core::error::{Error, Result};
use anticipate_core::graph::KnowledgeGraph;
use anticipate_core::model::{Anticipator, ModelConfig};
use anticipate_core::tensor::optim::Adam;
use anticipate_core::train::load_checkpoint;

use crate::config::RunConfig;

/// Global flags, resolved once in `main` and passed to every command.
pub struct Ctx {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_kg: bool,
    pub deterministic: bool,
}

impl Ctx {
    pub fn load_config(&self) -> Result<RunConfig> {
        RunConfig::load(self.config_path.as_deref())
    }

    /// Like [`Ctx::load_config`], but when no `--config` was given and the
    /// run directory holds a snapshot from training, the snapshot wins —
    /// evaluation and prediction then use exactly the trained shapes.
    pub fn load_config_or_snapshot(&self, run_dir: &Path) -> Result<RunConfig> {
        if self.config_path.is_none() {
            let snapshot = run_dir.join("config.toml");
            if snapshot.exists() {
                return RunConfig::load(Some(&snapshot));
            }
        }
        self.load_config()
    }

    pub fn seed_for(&self, cfg: &RunConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }
}

/// Dimension agreement between a model configuration and a dataset, checked
/// before any training or inference touches the data.
pub fn check_model_against(cfg: &ModelConfig, ds: &Dataset) -> Result<()> {
    let n_classes = ds.grammar.n_classes();
    if cfg.n_classes != n_classes {
        return Err(Error::Config(format!(
            "model.n_classes is {} but the dataset grammar has {n_classes} classes \
             (including the none class)",
            cfg.n_classes
        )));
    }
    if let Some(ep) = ds.episodes.first() {
        let feat = ep.frames.cols();
        if cfg.feat_dim != feat {
            return Err(Error::Config(format!(
                "model.feat_dim is {} but the dataset stores {feat}-dimensional features",
                cfg.feat_dim
            )));
        }
    }
    let longest = ds.episodes.iter().map(|e| e.len()).max().unwrap_or(0);
    if longest > cfg.max_frames {
        return Err(Error::Config(format!(
            "model.max_frames is {} but the dataset has a {longest}-frame episode; \
             raise max_frames so any observation window fits",
            cfg.max_frames
        )));
    }
    let chain = ds.grammar.max_chain_len();
    if chain > cfg.n_queries {
        return Err(Error::Config(format!(
            "model.n_queries is {} but the grammar can produce {chain} future segments",
            cfg.n_queries
        )));
    }
    Ok(())
}

/// Rebuilds a model from its configuration and restores a checkpoint into
/// it. Returns the optimizer (with moments) and the step to resume from.
pub fn restore_model(
    ckpt: &Path,
    cfg: &ModelConfig,
    graph: KnowledgeGraph,
) -> Result<(Anticipator<f32>, Adam<f32>, usize)> {
    let mut model = Anticipator::<f32>::new(cfg.clone(), graph, 0)?;
    let mut opt = Adam::new(0.0, &model.params);
    let step = load_checkpoint(ckpt, &mut model.params, &mut opt)?;
    Ok((model, opt, step))
}

/// The checkpoint a run directory points at by default.
pub fn default_checkpoint(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoint.akpt")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
