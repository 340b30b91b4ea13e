use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid graph JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("edge {index} references unknown node {id}")]
    DanglingEdge { index: usize, id: String },
    #[error("property {key} on {owner} is not a scalar")]
    NonScalar { owner: String, key: String },
}

/// Node ids may be written as JSON strings or integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(i64),
    Str(String),
}

impl RawId {
    fn key(&self) -> String {
        match self {
            RawId::Int(i) => i.to_string(),
            RawId::Str(s) => s.clone(),
        }
    }
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
}

#[derive(Deserialize)]
struct RawNode {
    id: RawId,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    props: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawEdge {
    src: RawId,
    #[serde(rename = "type")]
    rel_type: String,
    dst: RawId,
    #[serde(default)]
    props: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub labels: BTreeSet<String>,
    pub properties: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Index into [`MicroGraph::nodes`].
    pub source: usize,
    pub rel_type: String,
    pub target: usize,
    pub properties: BTreeMap<String, Value>,
}

/// Small in-memory property graph. Nodes keep file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MicroGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

fn check_scalars(owner: &str, props: &BTreeMap<String, Value>) -> Result<(), GraphError> {
    for (key, value) in props {
        if matches!(value, Value::Array(_) | Value::Object(_)) {
            return Err(GraphError::NonScalar {
                owner: owner.to_string(),
                key: key.clone(),
            });
        }
    }
    Ok(())
}

impl MicroGraph {
    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        let raw: RawGraph = serde_json::from_str(text)?;
        let mut ids = HashMap::new();
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in raw.nodes {
            let id = n.id.key();
            if ids.insert(id.clone(), nodes.len()).is_some() {
                return Err(GraphError::DuplicateNode(id));
            }
            check_scalars(&format!("node {id}"), &n.props)?;
            nodes.push(Node {
                id,
                labels: n.labels.into_iter().collect(),
                properties: n.props,
            });
        }
        let mut edges = Vec::with_capacity(raw.edges.len());
        for (index, e) in raw.edges.into_iter().enumerate() {
            let lookup = |raw: &RawId| {
                ids.get(&raw.key()).copied().ok_or_else(|| GraphError::DanglingEdge {
                    index,
                    id: raw.key(),
                })
            };
            let source = lookup(&e.src)?;
            let target = lookup(&e.dst)?;
            check_scalars(&format!("edge {index}"), &e.props)?;
            edges.push(Edge {
                source,
                rel_type: e.rel_type,
                target,
                properties: e.props,
            });
        }
        Ok(Self { nodes, edges })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The movie graph used by the bundled gold pool and synthetic benchmark.
    pub fn fixture() -> Self {
        Self::from_json_str(include_str!("../../data/fixture_graph.json"))
            .expect("bundled fixture graph is valid")
    }

    /// Distinct `(source label, type, target label)` combinations present in the data.
    pub fn observed_triples(&self) -> BTreeSet<(String, String, String)> {
        let mut out = BTreeSet::new();
        for e in &self.edges {
            for s in &self.nodes[e.source].labels {
                for t in &self.nodes[e.target].labels {
                    out.insert((s.clone(), e.rel_type.clone(), t.clone()));
                }
            }
        }
        out
    }
}
