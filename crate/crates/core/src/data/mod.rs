//! Synthetic activity episodes: grammar, generator, windowing, storage.
//!
//! An *action grammar* declares the action classes (name, duration range,
//! required objects) and a set of activities, each an ordered template with
//! optional and alternative branches. The generator samples an activity,
//! expands its template into an action chain, draws per-action durations, and
//! renders per-frame features and scene annotations — all from one seed.

pub mod generate;
pub mod store;
pub mod window;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeKind};
use std::collections::{BTreeSet, HashMap};

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpec {
    pub name: String,
    /// Inclusive duration range in frames.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Objects this action requires; always part of the frame's scene.
    pub objects: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TemplateItem {
    /// Always performed.
    Step(usize),
    /// Performed with the given probability.
    Optional(usize, f64),
    /// Exactly one of the listed actions, chosen uniformly.
    Alt(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivitySpec {
    pub name: String,
    pub items: Vec<TemplateItem>,
}

#[derive(Clone, Debug, Default)]
pub struct ActionGrammar {
    pub actions: Vec<ActionSpec>,
    pub activities: Vec<ActivitySpec>,
    action_index: HashMap<String, usize>,
}

impl ActionGrammar {
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Class id used for "no further action" in prediction targets.
    pub fn none_class(&self) -> usize {
        self.actions.len()
    }

    /// Action classes plus the `none` class.
    pub fn n_classes(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.action_index.get(name).copied()
    }

    pub fn action_name(&self, id: usize) -> &str {
        if id == self.none_class() {
            "none"
        } else {
            &self.actions[id].name
        }
    }

    pub fn activity_id(&self, name: &str) -> Option<usize> {
        self.activities.iter().position(|a| a.name == name)
    }

    /// Parse the line-oriented grammar format.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut grammar = ActionGrammar::default();
        let mut current_activity: Option<usize> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let fail = |msg: String| Error::parse(source, lineno, msg);
            match fields[0] {
                "action" => {
                    if fields.len() < 5 {
                        return Err(fail(
                            "expected `action NAME MIN MAX OBJECT...`".to_string(),
                        ));
                    }
                    let name = fields[1].to_string();
                    if grammar.action_index.contains_key(&name) {
                        return Err(fail(format!("duplicate action {name:?}")));
                    }
                    let min_frames: usize = fields[2]
                        .parse()
                        .map_err(|_| fail(format!("bad MIN {:?}", fields[2])))?;
                    let max_frames: usize = fields[3]
                        .parse()
                        .map_err(|_| fail(format!("bad MAX {:?}", fields[3])))?;
                    if min_frames == 0 || max_frames < min_frames {
                        return Err(fail(format!(
                            "duration range {min_frames}..{max_frames} is empty or zero"
                        )));
                    }
                    let objects: BTreeSet<String> =
                        fields[4..].iter().map(|s| s.to_string()).collect();
                    grammar
                        .action_index
                        .insert(name.clone(), grammar.actions.len());
                    grammar.actions.push(ActionSpec {
                        name,
                        min_frames,
                        max_frames,
                        objects,
                    });
                    current_activity = None;
                }
                "activity" => {
                    if fields.len() != 2 {
                        return Err(fail("expected `activity NAME`".to_string()));
                    }
                    let name = fields[1].to_string();
                    if grammar.activity_id(&name).is_some() {
                        return Err(fail(format!("duplicate activity {name:?}")));
                    }
                    grammar.activities.push(ActivitySpec {
                        name,
                        items: Vec::new(),
                    });
                    current_activity = Some(grammar.activities.len() - 1);
                }
                "step" | "optional" | "alt" => {
                    let activity = current_activity.ok_or_else(|| {
                        fail(format!("{:?} outside of an activity block", fields[0]))
                    })?;
                    let lookup = |name: &str| {
                        grammar
                            .action_index
                            .get(name)
                            .copied()
                            .ok_or_else(|| fail(format!("unknown action {name:?}")))
                    };
                    let item = match fields[0] {
                        "step" => {
                            if fields.len() != 2 {
                                return Err(fail("expected `step NAME`".to_string()));
                            }
                            TemplateItem::Step(lookup(fields[1])?)
                        }
                        "optional" => {
                            if fields.len() != 3 {
                                return Err(fail("expected `optional NAME P`".to_string()));
                            }
                            let p: f64 = fields[2]
                                .parse()
                                .map_err(|_| fail(format!("bad probability {:?}", fields[2])))?;
                            if !(0.0..=1.0).contains(&p) {
                                return Err(fail(format!("probability {p} outside [0,1]")));
                            }
                            TemplateItem::Optional(lookup(fields[1])?, p)
                        }
                        _ => {
                            if fields.len() != 2 {
                                return Err(fail("expected `alt NAME|NAME...`".to_string()));
                            }
                            let choices: Vec<usize> = fields[1]
                                .split('|')
                                .map(lookup)
                                .collect::<Result<_>>()?;
                            if choices.is_empty() {
                                return Err(fail("alt with no choices".to_string()));
                            }
                            TemplateItem::Alt(choices)
                        }
                    };
                    grammar.activities[activity].items.push(item);
                }
                other => return Err(fail(format!("unknown record kind {other:?}"))),
            }
        }
        if grammar.activities.is_empty() {
            return Err(Error::parse(source, 0, "grammar declares no activities"));
        }
        for activity in &grammar.activities {
            if activity.items.is_empty() {
                return Err(Error::Config(format!(
                    "activity {:?} has no steps",
                    activity.name
                )));
            }
        }
        Ok(grammar)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Check that every required object exists in the graph as an object node.
    pub fn validate_against(&self, graph: &KnowledgeGraph) -> Result<()> {
        for action in &self.actions {
            for obj in &action.objects {
                match graph.id(obj) {
                    Some(id) if graph.kind(id) == NodeKind::Object => {}
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "action {:?} requires {obj:?}, which is not an object node",
                            action.name
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "action {:?} requires {obj:?}, absent from the graph",
                            action.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Longest possible action chain over all activities; bounds how many
    /// decoder queries a model needs.
    pub fn max_chain_len(&self) -> usize {
        self.activities
            .iter()
            .map(|a| {
                a.items
                    .iter()
                    .map(|i| match i {
                        TemplateItem::Step(_) | TemplateItem::Optional(_, _) => 1,
                        TemplateItem::Alt(_) => 1,
                    })
                    .sum()
            })
            .max()
            .unwrap_or(0)
    }
}

/// The default kitchen grammar shipped with the crate.
pub const BUILTIN_GRAMMAR: &str = include_str!("../../assets/kitchen.grammar");

pub fn builtin_grammar() -> ActionGrammar {
    ActionGrammar::parse(BUILTIN_GRAMMAR, "<builtin kitchen grammar>")
        .expect("builtin grammar parses")
}
