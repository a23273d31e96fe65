use std::path::Path;

use anticipate_core::data::store::read_dataset;
use anticipate_core::data::window::{decode_durations, segments_from_labels, window, Segment};
use anticipate_core::data::ActionGrammar;
use anticipate_core::error::{Error, Result};
use anticipate_core::metrics::{edit_distance, moc_accuracy};
use anticipate_core::model::ForwardOptions;
use anticipate_core::train::window_frames;

use super::{check_model_against, default_checkpoint, restore_model, Ctx};

fn print_segments(grammar: &ActionGrammar, segments: &[Segment], mut frame: usize) {
    for seg in segments {
        println!(
            "  {:<16} x{:<4} [{}..{})",
            grammar.action_name(seg.class),
            seg.len,
            frame,
            frame + seg.len
        );
        frame += seg.len;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Ctx,
    data: &Path,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    episode: &str,
    alpha: u32,
    beta: u32,
    inspect: bool,
) -> Result<()> {
    let cfg = ctx.load_config_or_snapshot(run_dir)?;
    let ds = read_dataset(data)?;
    check_model_against(&cfg.model, &ds)?;
    let ckpt = checkpoint
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| default_checkpoint(run_dir));
    let (model, _opt, step) = restore_model(&ckpt, &cfg.model, ds.graph.clone())?;

    let ep = ds
        .episodes
        .iter()
        .find(|e| e.id == episode)
        .ok_or_else(|| {
            Error::Data(format!(
                "episode {episode:?} is not in the dataset index ({} episodes)",
                ds.episodes.len()
            ))
        })?;
    let w = window(ep.len(), alpha, beta)?;
    let frames = window_frames::<f32>(ep, w.observed.clone());
    let opts = ForwardOptions {
        use_kg: !ctx.no_kg,
        inspect,
        ..ForwardOptions::default()
    };
    let (pred, inspection) = model.predict(&frames, &ep.scenes[w.observed.clone()], &opts)?;

    let none = ds.grammar.none_class();
    let decoded = decode_durations(&pred.slot_classes, &pred.slot_durations, none, w.n_target());
    let gt = &ep.labels[w.target.clone()];

    println!(
        "episode {} ({}), {} frames; observed {} ({alpha}%), predicting {} ({beta}%)",
        ep.id,
        ep.activity,
        ep.len(),
        w.n_observed(),
        w.n_target()
    );
    println!(
        "checkpoint {} (step {step}), knowledge guidance {}",
        ckpt.display(),
        if opts.use_kg { "on" } else { "off" }
    );
    println!("observed:");
    print_segments(&ds.grammar, &segments_from_labels(&ep.labels[w.observed.clone()]), 0);
    println!(
        "recognized current action: {}",
        ds.grammar.action_name(pred.observed_class)
    );
    println!("predicted:");
    let pred_segs = segments_from_labels(&decoded);
    print_segments(&ds.grammar, &pred_segs, w.observed.end);
    println!("ground truth:");
    let gt_segs = segments_from_labels(gt);
    print_segments(&ds.grammar, &gt_segs, w.observed.end);

    let next_pred = ds.grammar.action_name(pred.slot_classes[0]);
    let next_true = ds.grammar.action_name(ep.labels[w.observed.end]);
    println!(
        "next action: {next_pred} (ground truth {next_true}) -> {}",
        if next_pred == next_true { "hit" } else { "miss" }
    );
    let pred_chain: Vec<usize> = pred_segs.iter().map(|s| s.class).collect();
    let gt_chain: Vec<usize> = gt_segs.iter().map(|s| s.class).collect();
    println!(
        "window MoC {:.3}, segment edit distance {}",
        moc_accuracy(gt, &decoded),
        edit_distance(&gt_chain, &pred_chain)
    );
    println!("context nodes used: {}", pred.ctx_count);
    if let Some(ins) = inspection {
        println!();
        print!("{}", ins.render());
    }
    Ok(())
}
