//! Symbolic object–affordance knowledge graph.
//!
//! Two node kinds and two relations:
//!
//! * `has-affordance` links an object to an affordance ("tomato is cuttable");
//! * `tool-for` links an affordance to the object that realizes it
//!   ("cutting is done with a knife").
//!
//! Both relations therefore connect an object with an affordance, and the
//! graph is traversed undirected. The text format mirrors the structure, one
//! record per line:
//!
//! ```text
//! # comment
//! object tomato
//! affordance cuttable
//! has-affordance tomato cuttable
//! tool-for cuttable knife
//! ```

pub mod propagate;

use crate::error::{Error, Result};
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

/// Index of a node in its graph. Ids are dense and assigned in declaration
/// order, which also fixes the embedding-table row for each node.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Object,
    Affordance,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Object => write!(f, "object"),
            NodeKind::Affordance => write!(f, "affordance"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Relation {
    /// object ↔ affordance
    HasAffordance,
    /// affordance ↔ object (the tool realizing it)
    ToolFor,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::HasAffordance => write!(f, "has-affordance"),
            Relation::ToolFor => write!(f, "tool-for"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeInfo {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub relation: Relation,
    /// Endpoints in declaration order: (object, affordance) for
    /// `has-affordance`, (affordance, object) for `tool-for`.
    pub from: NodeId,
    pub to: NodeId,
}

/// A scene annotation: the names of objects visible in one frame.
pub type SceneAnnotation = BTreeSet<String>;

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<NodeInfo>,
    by_name: HashMap<String, NodeId>,
    adjacency: Vec<BTreeSet<NodeId>>,
    edges: Vec<Edge>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, kind: NodeKind, name: &str) -> Result<NodeId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate node name {name:?}")));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(NodeInfo {
            name: name.to_string(),
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        self.adjacency.push(BTreeSet::new());
        Ok(id)
    }

    pub fn add_edge(&mut self, relation: Relation, from: &str, to: &str) -> Result<()> {
        let resolve = |name: &str| {
            self.by_name
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("edge references unknown node {name:?}")))
        };
        let a = resolve(from)?;
        let b = resolve(to)?;
        let (want_a, want_b) = match relation {
            Relation::HasAffordance => (NodeKind::Object, NodeKind::Affordance),
            Relation::ToolFor => (NodeKind::Affordance, NodeKind::Object),
        };
        if self.kind(a) != want_a || self.kind(b) != want_b {
            return Err(Error::Config(format!(
                "{relation} expects ({want_a}, {want_b}), got ({}, {}) for ({from:?}, {to:?})",
                self.kind(a),
                self.kind(b)
            )));
        }
        if a == b {
            return Err(Error::Config(format!("self-loop on {from:?}")));
        }
        if self.edges.iter().any(|e| {
            e.relation == relation && ((e.from == a && e.to == b) || (e.from == b && e.to == a))
        }) {
            return Err(Error::Config(format!(
                "duplicate {relation} edge {from:?} – {to:?}"
            )));
        }
        self.edges.push(Edge {
            relation,
            from: a,
            to: b,
        });
        self.adjacency[a.0].insert(b);
        self.adjacency[b.0].insert(a);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.nodes[id.0].kind
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    /// Undirected neighborhood, in ascending node-id order.
    pub fn neighbors(&self, id: NodeId) -> &BTreeSet<NodeId> {
        &self.adjacency[id.0]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Object nodes in id order; their position here is the object index used
    /// by the dataset's presence features.
    pub fn objects(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|&id| self.kind(id) == NodeKind::Object)
            .collect()
    }

    /// Ground-truth object detection: map a scene annotation to node ids.
    /// Unknown names are an error carrying the offending string.
    pub fn detect_objects(&self, scene: &SceneAnnotation) -> Result<BTreeSet<NodeId>> {
        let mut out = BTreeSet::new();
        for name in scene {
            let id = self.id(name).ok_or_else(|| Error::UnknownObject {
                name: name.clone(),
            })?;
            if self.kind(id) != NodeKind::Object {
                return Err(Error::UnknownObject { name: name.clone() });
            }
            out.insert(id);
        }
        Ok(out)
    }

    // -- text format ---------------------------------------------------------

    /// Parse the line-oriented text format. `source` names the input in error
    /// messages (a path, or e.g. "<builtin>").
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut graph = KnowledgeGraph::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let fail = |msg: String| Error::parse(source, lineno, msg);
            let added = match fields[0] {
                "object" | "affordance" => {
                    if fields.len() != 2 {
                        return Err(fail(format!(
                            "expected `{} NAME`, got {} fields",
                            fields[0],
                            fields.len()
                        )));
                    }
                    let kind = if fields[0] == "object" {
                        NodeKind::Object
                    } else {
                        NodeKind::Affordance
                    };
                    graph.add_node(kind, fields[1]).map(|_| ())
                }
                "has-affordance" | "tool-for" => {
                    if fields.len() != 3 {
                        return Err(fail(format!(
                            "expected `{} NAME NAME`, got {} fields",
                            fields[0],
                            fields.len()
                        )));
                    }
                    let rel = if fields[0] == "has-affordance" {
                        Relation::HasAffordance
                    } else {
                        Relation::ToolFor
                    };
                    graph.add_edge(rel, fields[1], fields[2])
                }
                other => return Err(fail(format!("unknown record kind {other:?}"))),
            };
            added.map_err(|e| fail(e.to_string()))?;
        }
        Ok(graph)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Serialize back to the text format (stable order: nodes, then edges).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for info in &self.nodes {
            out.push_str(&format!("{} {}\n", info.kind, info.name));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "{} {} {}\n",
                e.relation,
                self.name(e.from),
                self.name(e.to)
            ));
        }
        out
    }
}

/// The default kitchen graph shipped with the crate.
pub const BUILTIN_GRAPH: &str = include_str!("../../assets/kitchen.graph");

pub fn builtin_graph() -> KnowledgeGraph {
    KnowledgeGraph::parse(BUILTIN_GRAPH, "<builtin kitchen graph>")
        .expect("builtin graph parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> KnowledgeGraph {
        KnowledgeGraph::parse(
            "object tomato\n\
             object knife\n\
             affordance cuttable\n\
             affordance graspable\n\
             has-affordance tomato cuttable\n\
             has-affordance tomato graspable\n\
             tool-for cuttable knife\n",
            "<toy>",
        )
        .unwrap()
    }

    #[test]
    fn parses_and_indexes_the_toy_graph() {
        let g = toy();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edge_count(), 3);
        let tomato = g.id("tomato").unwrap();
        let cuttable = g.id("cuttable").unwrap();
        assert!(g.neighbors(tomato).contains(&cuttable));
        assert!(g.neighbors(cuttable).contains(&g.id("knife").unwrap()));
        assert_eq!(g.kind(tomato), NodeKind::Object);
    }

    #[test]
    fn roundtrips_through_text() {
        let g = toy();
        let reparsed = KnowledgeGraph::parse(&g.to_text(), "<roundtrip>").unwrap();
        assert_eq!(reparsed.node_count(), g.node_count());
        assert_eq!(reparsed.edges(), g.edges());
    }

    #[test]
    fn detect_objects_maps_names_and_flags_unknowns() {
        let g = toy();
        let scene: SceneAnnotation = ["tomato".to_string()].into_iter().collect();
        let detected = g.detect_objects(&scene).unwrap();
        assert_eq!(detected.len(), 1);
        assert!(detected.contains(&g.id("tomato").unwrap()));

        let bad: SceneAnnotation = ["durian".to_string()].into_iter().collect();
        let err = g.detect_objects(&bad).unwrap_err();
        assert!(err.to_string().contains("durian"), "{err}");
    }

    #[test]
    fn affordance_names_are_not_detectable_objects() {
        let g = toy();
        let scene: SceneAnnotation = ["cuttable".to_string()].into_iter().collect();
        assert!(g.detect_objects(&scene).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = KnowledgeGraph::parse("object a\nobject a\n", "g.txt").unwrap_err();
        assert!(err.to_string().starts_with("g.txt:2:"), "{err}");

        let err =
            KnowledgeGraph::parse("object a\nhas-affordance a missing\n", "g.txt").unwrap_err();
        assert!(err.to_string().contains("g.txt:2"), "{err}");
        assert!(err.to_string().contains("missing"), "{err}");

        let err = KnowledgeGraph::parse("gizmo a\n", "g.txt").unwrap_err();
        assert!(err.to_string().contains("unknown record kind"), "{err}");
    }

    #[test]
    fn edges_respect_node_kinds() {
        // has-affordance between two objects must fail.
        let err = KnowledgeGraph::parse(
            "object a\nobject b\nhas-affordance a b\n",
            "g.txt",
        )
        .unwrap_err();
        assert!(err.to_string().contains("expects"), "{err}");
    }

    #[test]
    fn duplicate_edges_rejected() {
        let err = KnowledgeGraph::parse(
            "object a\naffordance f\nhas-affordance a f\nhas-affordance a f\n",
            "g.txt",
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn builtin_graph_is_valid() {
        let g = builtin_graph();
        assert!(g.node_count() >= 20);
        assert!(!g.objects().is_empty());
    }
}
