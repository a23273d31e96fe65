//! Windowed evaluation over an (alpha, beta) grid.
//!
//! For every episode and observation percentage the model runs once; its
//! slot predictions are then decoded against each prediction percentage in
//! the grid. Durations are a simplex over slots, so one prediction scales to
//! any horizon — the decode allocates `horizon * share_i` frames per slot by
//! largest remainder. Next-action accuracy is independent of beta: it
//! compares slot 0 against the first ground-truth segment after the
//! observation boundary.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::generate::EpisodeSample;
use crate::data::window::{decode_durations, segments_from_labels, window, EpisodeWindow};
use crate::error::{Error, Result};
use crate::metrics::{edit_distance, moc_accuracy, next_action_accuracy, normalized_edit};
use crate::model::{Anticipator, ForwardOptions, Prediction};
use crate::scalar::Scalar;
use crate::train::window_frames;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub alphas: Vec<u32>,
    pub betas: Vec<u32>,
}

impl Default for EvalGrid {
    fn default() -> Self {
        EvalGrid {
            alphas: vec![5, 10],
            betas: vec![10, 20, 30, 50],
        }
    }
}

/// Aggregated metrics of one (alpha, beta) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCell {
    pub alpha: u32,
    pub beta: u32,
    /// Mean-over-classes accuracy, averaged over windows.
    pub moc: f64,
    /// Mean segment edit distance.
    pub edit_raw: f64,
    /// Mean length-normalized segment edit distance.
    pub edit_norm: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextActionCell {
    pub alpha: u32,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub episodes: usize,
    pub cells: Vec<EvalCell>,
    pub next_action: Vec<NextActionCell>,
    /// Windows that did not fit their episode (alpha + beta over 100% of a
    /// short episode) and were left out.
    pub skipped: usize,
}

impl EvalReport {
    pub fn cell(&self, alpha: u32, beta: u32) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.alpha == alpha && c.beta == beta)
    }

    /// Mean MoC across all beta cells of one alpha.
    pub fn moc_at_alpha(&self, alpha: u32) -> Option<f64> {
        let cells: Vec<&EvalCell> = self.cells.iter().filter(|c| c.alpha == alpha).collect();
        if cells.is_empty() {
            return None;
        }
        Some(cells.iter().map(|c| c.moc).sum::<f64>() / cells.len() as f64)
    }

    pub fn next_action_at_alpha(&self, alpha: u32) -> Option<f64> {
        self.next_action
            .iter()
            .find(|c| c.alpha == alpha)
            .map(|c| c.accuracy)
    }

    /// Fixed-width table, one row per grid cell.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "split {}: {} episodes, {} skipped windows\n",
            self.split, self.episodes, self.skipped
        ));
        out.push_str("alpha%  beta%     MoC    edit  edit_norm      n\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:>6}  {:>5}  {:>6.3}  {:>6.2}  {:>9.3}  {:>5}\n",
                c.alpha, c.beta, c.moc, c.edit_raw, c.edit_norm, c.n
            ));
        }
        for c in &self.next_action {
            out.push_str(&format!(
                "next action @ {:>2}% observed: {:.3}  (n={})\n",
                c.alpha, c.accuracy, c.n
            ));
        }
        out
    }
}

/// One evaluated window, suitable for line-delimited JSON dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredRecord {
    pub episode: String,
    pub activity: String,
    pub alpha: u32,
    pub beta: u32,
    pub gt: Vec<usize>,
    pub pred: Vec<usize>,
    pub slot_classes: Vec<usize>,
    pub slot_durations: Vec<f64>,
    pub moc: f64,
    pub edit: usize,
}

pub fn write_records(path: &Path, records: &[PredRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Data(format!("cannot encode record: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Evaluates an arbitrary per-window predictor over the grid. The predictor
/// runs once per (episode, alpha); every beta reuses its slots.
pub fn evaluate_with<F>(
    episodes: &[EpisodeSample],
    ids: &[usize],
    split: &str,
    grid: &EvalGrid,
    none_class: usize,
    mut predict: F,
) -> Result<(EvalReport, Vec<PredRecord>)>
where
    F: FnMut(&EpisodeSample, &EpisodeWindow) -> Result<Prediction>,
{
    if ids.is_empty() {
        return Err(Error::Data(format!("split {split:?} has no episodes")));
    }
    struct Acc {
        moc: f64,
        edit: f64,
        edit_norm: f64,
        n: usize,
    }
    let mut cells: Vec<Acc> = Vec::new();
    for _ in 0..grid.alphas.len() * grid.betas.len() {
        cells.push(Acc {
            moc: 0.0,
            edit: 0.0,
            edit_norm: 0.0,
            n: 0,
        });
    }
    let mut next_pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); grid.alphas.len()];
    let mut records = Vec::new();
    let mut skipped = 0;

    for &id in ids {
        let ep = &episodes[id];
        for (ai, &alpha) in grid.alphas.iter().enumerate() {
            let mut prediction: Option<(Prediction, usize)> = None;
            for (bi, &beta) in grid.betas.iter().enumerate() {
                let w = match window(ep.len(), alpha, beta) {
                    Ok(w) => w,
                    Err(_) => {
                        skipped += 1;
                        continue;
                    }
                };
                if prediction.is_none() {
                    let p = predict(ep, &w)?;
                    prediction = Some((p, w.observed.end));
                }
                let (p, _) = prediction.as_ref().unwrap();
                let gt = &ep.labels[w.target.clone()];
                let decoded =
                    decode_durations(&p.slot_classes, &p.slot_durations, none_class, gt.len());
                let moc = moc_accuracy(gt, &decoded);
                let gt_chain: Vec<usize> =
                    segments_from_labels(gt).iter().map(|s| s.class).collect();
                let pred_chain: Vec<usize> = segments_from_labels(&decoded)
                    .iter()
                    .map(|s| s.class)
                    .collect();
                let edit = edit_distance(&gt_chain, &pred_chain);
                let acc = &mut cells[ai * grid.betas.len() + bi];
                acc.moc += moc;
                acc.edit += edit as f64;
                acc.edit_norm += normalized_edit(&gt_chain, &pred_chain);
                acc.n += 1;
                records.push(PredRecord {
                    episode: ep.id.clone(),
                    activity: ep.activity.clone(),
                    alpha,
                    beta,
                    gt: gt.to_vec(),
                    pred: decoded,
                    slot_classes: p.slot_classes.clone(),
                    slot_durations: p.slot_durations.clone(),
                    moc,
                    edit,
                });
            }
            if let Some((p, obs_end)) = prediction {
                if obs_end < ep.len() {
                    next_pairs[ai].push((p.slot_classes[0], ep.labels[obs_end]));
                }
            }
        }
    }

    let report = EvalReport {
        split: split.to_string(),
        episodes: ids.len(),
        cells: grid
            .alphas
            .iter()
            .enumerate()
            .flat_map(|(ai, &alpha)| {
                let cells = &cells;
                grid.betas.iter().enumerate().map(move |(bi, &beta)| {
                    let acc = &cells[ai * grid.betas.len() + bi];
                    let n = acc.n.max(1) as f64;
                    EvalCell {
                        alpha,
                        beta,
                        moc: acc.moc / n,
                        edit_raw: acc.edit / n,
                        edit_norm: acc.edit_norm / n,
                        n: acc.n,
                    }
                })
            })
            .collect(),
        next_action: grid
            .alphas
            .iter()
            .zip(&next_pairs)
            .map(|(&alpha, pairs)| NextActionCell {
                alpha,
                accuracy: next_action_accuracy(pairs),
                n: pairs.len(),
            })
            .collect(),
        skipped,
    };
    Ok((report, records))
}

/// Evaluates a model over the grid, one forward pass per (episode, alpha).
pub fn evaluate_model<S: Scalar>(
    model: &Anticipator<S>,
    episodes: &[EpisodeSample],
    ids: &[usize],
    split: &str,
    grid: &EvalGrid,
    opts: &ForwardOptions,
) -> Result<(EvalReport, Vec<PredRecord>)> {
    let none_class = model.config.n_classes - 1;
    evaluate_with(episodes, ids, split, grid, none_class, |ep, w| {
        let frames = window_frames::<S>(ep, w.observed.clone());
        let scenes = &ep.scenes[w.observed.clone()];
        model.predict(&frames, scenes, opts).map(|t| t.0)
    })
}
