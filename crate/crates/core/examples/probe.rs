//! Scratch probe: can the rectification channel alone separate a look-alike
//! activity pair when the branch is visible only in the scene annotation?

use anticipate_core::data::generate::{generate, GenSettings};
use anticipate_core::data::{builtin_grammar, window::window};
use anticipate_core::eval::{evaluate_model, EvalGrid};
use anticipate_core::graph::builtin_graph;
use anticipate_core::model::{Anticipator, ForwardOptions, ModelConfig};
use anticipate_core::tensor::optim::Adam;
use anticipate_core::train::{train_loop, TrainSettings};

fn main() {
    let grammar = builtin_grammar();
    let graph = builtin_graph();
    let eps = generate(
        &grammar,
        &graph,
        &GenSettings {
            n_episodes: 80,
            seed: 7,
            ..GenSettings::default()
        },
    )
    .unwrap();

    // Keep only the fried_egg / french_toast pair: identical `grab_pan`
    // opener, branch decidable only from the scene.
    let pair_ids: Vec<usize> = (0..eps.len())
        .filter(|&i| eps[i].activity == "fried_egg" || eps[i].activity == "french_toast")
        .collect();
    let (train_ids, test_ids): (Vec<usize>, Vec<usize>) = {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for (k, &i) in pair_ids.iter().enumerate() {
            if k % 4 == 0 {
                te.push(i);
            } else {
                tr.push(i);
            }
        }
        (tr, te)
    };
    eprintln!(
        "pair episodes: {} train / {} test",
        train_ids.len(),
        test_ids.len()
    );
    // How often does the 5% prefix already leak past the opener?
    let mut leaks = 0;
    for &i in pair_ids.iter() {
        let ep = &eps[i];
        let w = window(ep.len(), 5, 30).unwrap();
        let prefix = &ep.labels[w.observed.clone()];
        if prefix.iter().any(|&c| c != prefix[0]) {
            leaks += 1;
        }
    }
    eprintln!(
        "prefix leaks past opener in {leaks}/{} pair episodes at alpha=5",
        pair_ids.len()
    );

    let cfg = ModelConfig {
        n_classes: grammar.n_classes(),
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(600);
    for use_kg in [true, false] {
        let mut model = Anticipator::<f32>::new(cfg.clone(), graph.clone(), 11).unwrap();
        let settings = TrainSettings {
            steps,
            batch_size: 4,
            lr: 1e-3,
            seed: 42,
            alphas: vec![5],
            beta: 50,
            use_kg,
            clip_norm: 5.0,
            warmup_steps: 50,
            decay_lr: true,
            log_every: 100,
            ..TrainSettings::default()
        };
        let mut opt = Adam::new(settings.lr, &model.params);
        let report = train_loop(
            &mut model,
            &eps,
            &train_ids,
            &settings,
            &mut opt,
            0,
            |s, l| {
                if (s + 1) % 100 == 0 {
                    eprintln!("  kg={use_kg} step {s} loss {l:.4}");
                }
            },
        )
        .unwrap();
        let grid = EvalGrid {
            alphas: vec![5],
            betas: vec![20, 30, 50],
        };
        let opts = ForwardOptions {
            use_kg,
            ..ForwardOptions::default()
        };
        let (rep_te, _) = evaluate_model(&model, &eps, &test_ids, "test", &grid, &opts).unwrap();
        let (rep_tr, _) = evaluate_model(&model, &eps, &train_ids, "train", &grid, &opts).unwrap();
        println!(
            "kg={use_kg}: final loss {:.4}, test MoC@5 {:?}, train MoC@5 {:?}, test next {:?}",
            report.final_loss,
            rep_te.moc_at_alpha(5),
            rep_tr.moc_at_alpha(5),
            rep_te.next_action_at_alpha(5),
        );
    }
}
