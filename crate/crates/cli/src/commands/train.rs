use std::path::Path;

use anticipate_core::data::store::read_dataset;
use anticipate_core::error::{Error, Result};
use anticipate_core::model::Anticipator;
use anticipate_core::tensor::optim::Adam;
use anticipate_core::tensor::params::ParamStore;
use anticipate_core::train::{save_checkpoint, train_loop, TrainSettings};

use super::{check_model_against, restore_model, write_text, Ctx};

/// Snapshot of the lowest-loss state seen so far, probed at chunk
/// boundaries.
struct Best {
    loss: f64,
    step: usize,
    params: ParamStore<f32>,
    opt: Adam<f32>,
}

pub fn run(
    ctx: &Ctx,
    data: &Path,
    out: &Path,
    steps: Option<usize>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut cfg = ctx.load_config()?;
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    let seed = ctx.seed_for(&cfg);
    cfg.seed = seed;

    let ds = read_dataset(data)?;
    check_model_against(&cfg.model, &ds)?;
    let settings = cfg.train.settings(seed, !ctx.no_kg);

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;

    let (mut model, mut opt, start_step) = match resume {
        Some(ckpt) => {
            let (m, o, s) = restore_model(ckpt, &cfg.model, ds.graph.clone())?;
            println!("resumed {} at step {s}", ckpt.display());
            (m, o, s)
        }
        None => {
            let m = Anticipator::<f32>::new(cfg.model.clone(), ds.graph.clone(), seed)?;
            let o = Adam::new(settings.lr, &m.params);
            (m, o, 0)
        }
    };
    opt.lr = settings.lr;

    println!(
        "training on {} episodes, {} parameters, knowledge guidance {}",
        ds.train_ids.len(),
        model.params.total_scalars(),
        if settings.use_kg { "on" } else { "off" }
    );

    // Training runs in chunks of `log_every` steps; per-step seeding makes
    // the chunked run identical to an uninterrupted one, and chunk
    // boundaries double as probes for the best checkpoint.
    let chunk_len = settings.log_every.clamp(1, settings.steps.max(1));
    let mut curve: Vec<(usize, f64)> = Vec::with_capacity(settings.steps);
    let mut best: Option<Best> = None;
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut step = start_step;
    let mut remaining = settings.steps;
    while remaining > 0 {
        let chunk = TrainSettings {
            steps: chunk_len.min(remaining),
            ..settings.clone()
        };
        let report = train_loop(
            &mut model,
            &ds.episodes,
            &ds.train_ids,
            &chunk,
            &mut opt,
            step,
            |s, l| curve.push((s, l)),
        )?;
        if step == start_step {
            first_loss = report.first_loss;
        }
        final_loss = report.final_loss;
        remaining -= chunk.steps;
        step = report.next_step;
        println!("step {:>6}  loss {:.4}", step, report.final_loss);
        if best.as_ref().map_or(true, |b| report.final_loss < b.loss) {
            best = Some(Best {
                loss: report.final_loss,
                step,
                params: model.params.clone(),
                opt: opt.clone(),
            });
        }
    }

    let final_ckpt = out.join("checkpoint.akpt");
    save_checkpoint(&final_ckpt, &model.params, &opt, step)?;
    let best_line = match &best {
        Some(b) => {
            save_checkpoint(&out.join("best.akpt"), &b.params, &b.opt, b.step)?;
            format!("{:.6} @ step {}", b.loss, b.step)
        }
        None => "n/a".to_string(),
    };

    let mut curve_text = String::from("step loss\n");
    for (s, l) in &curve {
        curve_text.push_str(&format!("{s} {l:.6}\n"));
    }
    write_text(&out.join("curve.txt"), &curve_text)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    write_text(
        &out.join("manifest.txt"),
        &format!(
            "anticipate-version: {}\n\
             command: train\n\
             seed: {seed}\n\
             data: {}\n\
             knowledge-guidance: {}\n\
             deterministic: {}\n\
             start-step: {start_step}\n\
             steps: {}\n\
             first-loss: {first_loss:.6}\n\
             final-loss: {final_loss:.6}\n\
             best: {best_line}\n",
            env!("CARGO_PKG_VERSION"),
            data.display(),
            if settings.use_kg { "on" } else { "off" },
            if ctx.deterministic { "forced" } else { "default" },
            settings.steps,
        ),
    )?;

    println!("checkpoint: {}", final_ckpt.display());
    if let Some(b) = &best {
        println!("best: step {} (loss {:.4})", b.step, b.loss);
    }
    Ok(())
}
