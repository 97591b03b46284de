use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[serde(alias = "multi-class", alias = "multi_class")]
    Multiclass,
    #[serde(alias = "multi-label", alias = "multi_label")]
    Multilabel,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" | "multi-class" => Ok(Task::Multiclass),
            "multilabel" | "multi-label" => Ok(Task::Multilabel),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTypeDef {
    pub name: String,
    pub source: usize,
    pub target: usize,
}

/// Node types that may be linked, with every edge type declared between them.
///
/// The decoder scores one candidate domain per block, irrespective of how
/// many edge types share the type pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypePairBlock {
    pub type_u: usize,
    pub type_v: usize,
    pub edge_types: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSchema {
    node_types: Vec<String>,
    edge_types: Vec<EdgeTypeDef>,
    target_type: usize,
    num_classes: usize,
    task: Task,
}

impl GraphSchema {
    pub fn new(
        node_types: Vec<String>,
        edge_types: Vec<EdgeTypeDef>,
        target_type: usize,
        num_classes: usize,
        task: Task,
    ) -> Result<Self> {
        if node_types.len() + edge_types.len() <= 2 {
            return Err(Error::Graph(format!(
                "not heterogeneous: {} node types + {} edge types must exceed 2",
                node_types.len(),
                edge_types.len()
            )));
        }
        for (i, name) in node_types.iter().enumerate() {
            if node_types[..i].contains(name) {
                return Err(Error::Graph(format!("duplicate node type {name}")));
            }
        }
        for (i, et) in edge_types.iter().enumerate() {
            if et.source >= node_types.len() || et.target >= node_types.len() {
                return Err(Error::Graph(format!(
                    "edge type {} references an unknown node type",
                    et.name
                )));
            }
            if edge_types[..i].iter().any(|e| e.name == et.name) {
                return Err(Error::Graph(format!("duplicate edge type {}", et.name)));
            }
        }
        if target_type >= node_types.len() {
            return Err(Error::Graph("target node type out of range".into()));
        }
        if num_classes < 2 {
            return Err(Error::Graph(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(GraphSchema {
            node_types,
            edge_types,
            target_type,
            num_classes,
            task,
        })
    }

    pub fn node_types(&self) -> &[String] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeTypeDef] {
        &self.edge_types
    }

    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|n| n == name)
    }

    pub fn edge_type_index(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|e| e.name == name)
    }

    /// Whether an edge of type `etype` may join nodes of types `tu` and `tv`,
    /// in either orientation.
    pub fn is_legal(&self, tu: usize, tv: usize, etype: usize) -> bool {
        self.edge_types.get(etype).is_some_and(|e| {
            (e.source == tu && e.target == tv) || (e.source == tv && e.target == tu)
        })
    }

    /// The symmetric set of legal `(type_u, type_v, edge_type)` triples.
    pub fn legal_triples(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (r, e) in self.edge_types.iter().enumerate() {
            out.push((e.source, e.target, r));
            if e.source != e.target {
                out.push((e.target, e.source, r));
            }
        }
        out.sort_unstable();
        out
    }

    /// Directionless legal type pairs, in order of first declaration.
    pub fn type_pair_blocks(&self) -> Vec<TypePairBlock> {
        let mut blocks: Vec<TypePairBlock> = Vec::new();
        for (r, e) in self.edge_types.iter().enumerate() {
            let existing = blocks.iter_mut().find(|b| {
                (b.type_u == e.source && b.type_v == e.target)
                    || (b.type_u == e.target && b.type_v == e.source)
            });
            match existing {
                Some(b) => b.edge_types.push(r),
                None => blocks.push(TypePairBlock {
                    type_u: e.source,
                    type_v: e.target,
                    edge_types: vec![r],
                }),
            }
        }
        blocks
    }

    /// Node types that take part in at least one legal triple.
    pub fn linked_node_types(&self) -> Vec<usize> {
        let mut types: Vec<usize> = self
            .edge_types
            .iter()
            .flat_map(|e| [e.source, e.target])
            .collect();
        types.sort_unstable();
        types.dedup();
        types
    }
}
