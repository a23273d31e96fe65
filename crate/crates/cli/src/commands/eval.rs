use std::path::Path;

use anticipate_core::data::store::read_dataset;
use anticipate_core::error::{Error, Result};
use anticipate_core::eval::{evaluate_model, write_records};
use anticipate_core::model::ForwardOptions;

use super::{check_model_against, default_checkpoint, restore_model, write_text, Ctx};

#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Ctx,
    data: &Path,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    split: Option<&str>,
    alphas: &[u32],
    betas: &[u32],
) -> Result<()> {
    let mut cfg = ctx.load_config_or_snapshot(run_dir)?;
    if !alphas.is_empty() {
        cfg.eval.alphas = alphas.to_vec();
    }
    if !betas.is_empty() {
        cfg.eval.betas = betas.to_vec();
    }
    let split = split.unwrap_or(&cfg.eval.split).to_string();

    let ds = read_dataset(data)?;
    check_model_against(&cfg.model, &ds)?;
    let ckpt = checkpoint
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| default_checkpoint(run_dir));
    let (model, _opt, step) = restore_model(&ckpt, &cfg.model, ds.graph.clone())?;
    let ids = ds.split(&split)?;

    let opts = ForwardOptions {
        use_kg: !ctx.no_kg,
        ..ForwardOptions::default()
    };
    let grid = cfg.eval.grid();
    let (report, records) = evaluate_model(&model, &ds.episodes, ids, &split, &grid, &opts)?;

    let text = report.render();
    println!(
        "checkpoint {} (step {step}), knowledge guidance {}",
        ckpt.display(),
        if opts.use_kg { "on" } else { "off" }
    );
    print!("{text}");

    // A no-kg pass gets its own artifact names so both variants of the same
    // checkpoint can sit side by side.
    let tag = if opts.use_kg {
        split.clone()
    } else {
        format!("{split}-nokg")
    };
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    write_text(&run_dir.join(format!("eval-{tag}.txt")), &text)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("cannot encode report: {e}")))?;
    write_text(&run_dir.join(format!("eval-{tag}.json")), &json)?;
    let preds = run_dir.join(format!("preds-{tag}.jsonl"));
    write_records(&preds, &records)?;
    println!(
        "wrote eval-{tag}.txt, eval-{tag}.json and preds-{tag}.jsonl under {}",
        run_dir.display()
    );
    Ok(())
}
