//! Seeded synthetic episode generator.
//!
//! Every episode instantiates one activity template from an
//! [`ActionGrammar`](super::ActionGrammar): optional steps are kept with
//! their configured probability, alternatives are drawn uniformly, and each
//! surviving action gets a duration inside its declared frame range. The
//! *scene* of an episode is the union of the objects required by its chain,
//! held constant across frames — the things laid out on the counter before
//! cooking starts.
//!
//! Frame features deliberately tell less than the scene does. Each frame
//! carries its action-class prototype plus a multi-hot over the objects the
//! current action manipulates, then isotropic Gaussian noise; objects that
//! are merely *present* never reach the feature vector. A model that wants
//! to know whether the bread or the tomato is on the counter has to consume
//! the scene annotations through the knowledge graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ActionGrammar, TemplateItem};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, SceneAnnotation};
use crate::rng::{mix, stream_rng, streams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GenSettings {
    pub n_episodes: usize,
    pub seed: u64,
    /// Standard deviation of the per-dimension feature noise.
    pub sigma: f64,
    pub feat_dim: usize,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            n_episodes: 100,
            seed: 7,
            sigma: 0.4,
            feat_dim: 64,
        }
    }
}

/// One generated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSample {
    pub id: String,
    pub activity: String,
    /// Seed the episode was drawn from; kept so stored datasets can name
    /// their provenance exactly.
    pub seed: u64,
    /// Per-frame action class.
    pub labels: Vec<usize>,
    /// Per-frame visible objects.
    pub scenes: Vec<SceneAnnotation>,
    /// `len() x feat_dim` feature matrix.
    pub frames: Tensor<f32>,
}

impl EpisodeSample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Columns `0..proto` hold the class prototype, the remaining `n_objects`
/// columns the in-use object multi-hot.
pub fn proto_dims(feat_dim: usize, n_objects: usize) -> Result<usize> {
    let min_proto = 8;
    if feat_dim < n_objects + min_proto {
        return Err(Error::Data(format!(
            "feat_dim {feat_dim} too small: need at least {min_proto} prototype dims plus {n_objects} object dims"
        )));
    }
    Ok(feat_dim - n_objects)
}

/// Standard-normal class prototypes, `n_actions x proto` — drawn once per
/// dataset from the master seed so that every episode agrees on them.
pub fn prototypes(grammar: &ActionGrammar, proto: usize, master_seed: u64) -> Tensor<f64> {
    let mut rng = stream_rng(master_seed, streams::PROTOTYPES);
    let n = grammar.n_actions();
    let mut data = Vec::with_capacity(n * proto);
    for _ in 0..n * proto {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    Tensor::new(vec![n, proto], data)
}

pub fn episode_seed(master_seed: u64, index: usize) -> u64 {
    mix(mix(master_seed, streams::EPISODE), index as u64)
}

/// Generates the full dataset for `settings`. Deterministic in
/// `settings.seed`: episode `i` depends only on the master seed and `i`.
pub fn generate(
    grammar: &ActionGrammar,
    graph: &KnowledgeGraph,
    settings: &GenSettings,
) -> Result<Vec<EpisodeSample>> {
    grammar.validate_against(graph)?;
    let objects = graph.objects();
    let proto = proto_dims(settings.feat_dim, objects.len())?;
    let protos = prototypes(grammar, proto, settings.seed);
    (0..settings.n_episodes)
        .map(|i| generate_episode(grammar, graph, &protos, settings, i))
        .collect()
}

/// Generates episode `index` of the dataset.
pub fn generate_episode(
    grammar: &ActionGrammar,
    graph: &KnowledgeGraph,
    protos: &Tensor<f64>,
    settings: &GenSettings,
    index: usize,
) -> Result<EpisodeSample> {
    let seed = episode_seed(settings.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let activity = &grammar.activities[rng.gen_range(0..grammar.activities.len())];
    let chain = sample_chain(&activity.items, &mut rng);
    if chain.is_empty() {
        return Err(Error::Data(format!(
            "activity {} produced an empty action chain",
            activity.name
        )));
    }
    let durations: Vec<usize> = chain
        .iter()
        .map(|&a| {
            let spec = &grammar.actions[a];
            rng.gen_range(spec.min_frames..=spec.max_frames)
        })
        .collect();

    let mut layout = SceneAnnotation::new();
    for &a in &chain {
        layout.extend(grammar.actions[a].objects.iter().cloned());
    }

    let mut labels = Vec::new();
    for (&a, &d) in chain.iter().zip(&durations) {
        labels.extend(std::iter::repeat(a).take(d));
    }
    let n = labels.len();
    let scenes = vec![layout; n];

    let object_slot: std::collections::HashMap<&str, usize> = graph
        .objects()
        .iter()
        .enumerate()
        .map(|(i, &id)| (graph.name(id), i))
        .collect();
    let proto = protos.cols();
    let feat_dim = settings.feat_dim;
    let mut data = vec![0.0f32; n * feat_dim];
    for (f, &label) in labels.iter().enumerate() {
        let row = &mut data[f * feat_dim..(f + 1) * feat_dim];
        row[..proto]
            .iter_mut()
            .zip(protos.row_slice(label))
            .for_each(|(dst, &src)| *dst = src as f32);
        for obj in &grammar.actions[label].objects {
            row[proto + object_slot[obj.as_str()]] = 1.0;
        }
        // The noise stream advances even at sigma = 0 so that sigma only
        // scales the dataset instead of reshuffling it.
        for v in row.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v += (settings.sigma * eps) as f32;
        }
    }

    Ok(EpisodeSample {
        id: format!("ep{index:04}"),
        activity: activity.name.clone(),
        seed,
        labels,
        scenes,
        frames: Tensor::new(vec![n, feat_dim], data),
    })
}

/// Draws one concrete action chain from a template, merging any adjacent
/// duplicates so the per-frame labels always run-length encode back to the
/// chain.
fn sample_chain(items: &[TemplateItem], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chain: Vec<usize> = Vec::with_capacity(items.len());
    let push = |chain: &mut Vec<usize>, action: usize| match chain.last() {
        Some(&last) if last == action => {}
        _ => chain.push(action),
    };
    for item in items {
        match item {
            TemplateItem::Step(a) => push(&mut chain, *a),
            TemplateItem::Optional(a, p) => {
                if rng.gen_bool(*p) {
                    push(&mut chain, *a);
                }
            }
            TemplateItem::Alt(choices) => {
                let a = choices[rng.gen_range(0..choices.len())];
                push(&mut chain, a);
            }
        }
    }
    chain
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::builtin_grammar;
    use crate::data::window::segments_from_labels;
    use crate::graph::builtin_graph;

    fn tiny_settings() -> GenSettings {
        GenSettings {
            n_episodes: 12,
            seed: 99,
            ..GenSettings::default()
        }
    }

    /// Checks a collapsed action chain against an activity template. Unlike
    /// the generator this scans all optional/alternative resolutions, so any
    /// agreement is independent evidence the sample is grammatical.
    fn template_accepts(items: &[TemplateItem], chain: &[usize]) -> bool {
        match items.split_first() {
            None => chain.is_empty(),
            Some((TemplateItem::Step(a), rest)) => {
                chain.first() == Some(a) && template_accepts(rest, &chain[1..])
            }
            Some((TemplateItem::Optional(a, _), rest)) => {
                template_accepts(rest, chain)
                    || (chain.first() == Some(a) && template_accepts(rest, &chain[1..]))
            }
            Some((TemplateItem::Alt(choices), rest)) => choices
                .iter()
                .any(|a| chain.first() == Some(a) && template_accepts(rest, &chain[1..])),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let grammar = builtin_grammar();
        let graph = builtin_graph();
        let a = generate(&grammar, &graph, &tiny_settings()).unwrap();
        let b = generate(&grammar, &graph, &tiny_settings()).unwrap();
        assert_eq!(a, b);

        let other = GenSettings {
            seed: 100,
            ..tiny_settings()
        };
        let c = generate(&grammar, &graph, &other).unwrap();
        assert_ne!(a[0].frames, c[0].frames);
    }

    #[test]
    fn every_episode_parses_under_its_activity_template() {
        let grammar = builtin_grammar();
        let graph = builtin_graph();
        let settings = GenSettings {
            n_episodes: 60,
            ..tiny_settings()
        };
        for ep in generate(&grammar, &graph, &settings).unwrap() {
            let segs = segments_from_labels(&ep.labels);
            let chain: Vec<usize> = segs.iter().map(|s| s.class).collect();
            let activity = &grammar.activities[grammar.activity_id(&ep.activity).unwrap()];
            assert!(
                template_accepts(&activity.items, &chain),
                "episode {} does not match template {}",
                ep.id,
                ep.activity
            );
            for seg in segs {
                let spec = &grammar.actions[seg.class];
                assert!(
                    (spec.min_frames..=spec.max_frames).contains(&seg.len),
                    "{}: segment of {} lasted {} frames, outside {}..={}",
                    ep.id,
                    spec.name,
                    seg.len,
                    spec.min_frames,
                    spec.max_frames
                );
            }
        }
    }

    #[test]
    fn scenes_cover_required_objects_and_stay_constant() {
        let grammar = builtin_grammar();
        let graph = builtin_graph();
        for ep in generate(&grammar, &graph, &tiny_settings()).unwrap() {
            assert_eq!(ep.scenes.len(), ep.len());
            assert_eq!(ep.frames.rows(), ep.len());
            for (f, &label) in ep.labels.iter().enumerate() {
                assert_eq!(ep.scenes[f], ep.scenes[0]);
                for obj in &grammar.actions[label].objects {
                    assert!(ep.scenes[f].contains(obj));
                }
            }
        }
    }

    #[test]
    fn noiseless_frames_depend_only_on_the_label() {
        let grammar = builtin_grammar();
        let graph = builtin_graph();
        let settings = GenSettings {
            sigma: 0.0,
            ..tiny_settings()
        };
        let eps = generate(&grammar, &graph, &settings).unwrap();
        let mut seen: std::collections::HashMap<usize, Vec<f32>> = Default::default();
        for ep in &eps {
            for (f, &label) in ep.labels.iter().enumerate() {
                let row = ep.frames.row_slice(f).to_vec();
                match seen.entry(label) {
                    std::collections::hash_map::Entry::Occupied(e) => {
                        assert_eq!(e.get(), &row, "label {label} feature drifted");
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(row);
                    }
                }
            }
        }
        assert!(seen.len() > 4, "expected a spread of action classes");
    }

    #[test]
    fn scene_layout_never_reaches_the_features() {
        let grammar = builtin_grammar();
        let graph = builtin_graph();
        let settings = GenSettings {
            sigma: 0.0,
            n_episodes: 40,
            ..tiny_settings()
        };
        let proto = proto_dims(settings.feat_dim, graph.objects().len()).unwrap();
        for ep in generate(&grammar, &graph, &settings).unwrap() {
            for (f, &label) in ep.labels.iter().enumerate() {
                let row = ep.frames.row_slice(f);
                let hot: usize = row[proto..].iter().filter(|&&v| v != 0.0).count();
                assert_eq!(
                    hot,
                    grammar.actions[label].objects.len(),
                    "only in-use objects may appear in the multi-hot"
                );
            }
        }
    }

    #[test]
    fn all_activities_show_up() {
        let grammar = builtin_grammar();
        let graph = builtin_graph();
        let settings = GenSettings {
            n_episodes: 80,
            ..tiny_settings()
        };
        let eps = generate(&grammar, &graph, &settings).unwrap();
        let names: std::collections::BTreeSet<&str> =
            eps.iter().map(|e| e.activity.as_str()).collect();
        assert_eq!(names.len(), grammar.activities.len());
        for ep in &eps {
            assert!(ep.len() >= 40, "suspiciously short episode {}", ep.id);
            assert!(ep.len() <= 200, "episode {} overflows the model's frame budget", ep.id);
        }
    }

    #[test]
    fn feat_dim_must_fit_both_blocks() {
        assert!(proto_dims(64, 10).unwrap() == 54);
        assert!(proto_dims(12, 10).is_err());
    }
}
