use std::path::Path;

use anticipate_core::data::generate::generate;
use anticipate_core::data::store::write_dataset;
use anticipate_core::error::Result;

use super::Ctx;

pub fn run(ctx: &Ctx, out: &Path, episodes: Option<usize>) -> Result<()> {
    let mut cfg = ctx.load_config()?;
    if let Some(n) = episodes {
        cfg.data.episodes = n;
    }
    let seed = ctx.seed_for(&cfg);

    let (grammar, grammar_text) = cfg.data.load_grammar()?;
    let (graph, graph_text) = cfg.data.load_graph()?;
    grammar.validate_against(&graph)?;

    let settings = cfg.data.gen_settings(seed);
    let episodes = generate(&grammar, &graph, &settings)?;
    write_dataset(
        out,
        &episodes,
        &grammar_text,
        &graph_text,
        &settings,
        cfg.data.train_fraction,
    )?;

    let frames: usize = episodes.iter().map(|e| e.len()).sum();
    let n_train = (episodes.len() as f64 * cfg.data.train_fraction).round() as usize;
    println!(
        "wrote {} episodes ({} frames) to {}",
        episodes.len(),
        frames,
        out.display()
    );
    println!(
        "seed {seed}, sigma {}, split {} train / {} test",
        settings.sigma,
        n_train,
        episodes.len() - n_train
    );
    Ok(())
}
