use std::ops::Range;
use std::sync::Arc;

use crate::hin::{Edge, HeteroGraph, LegalPairSet, Task};
use crate::tensor::Tensor;

/// Directed message edges: both orientations of every undirected edge plus
/// one self-loop per node. Self-loops carry edge type `num_edge_types`.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub etype: Arc<[usize]>,
    pub num_nodes: usize,
}

impl MessageGraph {
    pub fn new(num_nodes: usize, edges: &[Edge], num_edge_types: usize) -> Self {
        let cap = 2 * edges.len() + num_nodes;
        let (mut src, mut dst, mut etype) = (
            Vec::with_capacity(cap),
            Vec::with_capacity(cap),
            Vec::with_capacity(cap),
        );
        for e in edges {
            src.push(e.u);
            dst.push(e.v);
            etype.push(e.etype);
            if e.u != e.v {
                src.push(e.v);
                dst.push(e.u);
                etype.push(e.etype);
            }
        }
        for u in 0..num_nodes {
            src.push(u);
            dst.push(u);
            etype.push(num_edge_types);
        }
        MessageGraph {
            src: src.into(),
            dst: dst.into(),
            etype: etype.into(),
            num_nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Everything a forward pass needs from a graph, precomputed once per run.
///
/// `message` may come from an augmented edge list while `pairs` keeps the
/// reconstruction targets of the original graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub num_nodes: usize,
    pub features: Vec<Tensor>,
    pub type_ranges: Vec<Range<usize>>,
    pub message: MessageGraph,
    pub pairs: LegalPairSet,
    pub target_type: usize,
    pub num_classes: usize,
    pub task: Task,
    pub num_edge_types: usize,
}

impl GraphContext {
    pub fn new(graph: &HeteroGraph) -> Self {
        Self::with_message_edges(graph, graph.edges())
    }

    pub fn with_message_edges(graph: &HeteroGraph, message_edges: &[Edge]) -> Self {
        let schema = graph.schema();
        let t = schema.num_node_types();
        GraphContext {
            num_nodes: graph.num_nodes(),
            features: (0..t).map(|i| graph.features(i).clone()).collect(),
            type_ranges: (0..t).map(|i| graph.type_range(i)).collect(),
            message: MessageGraph::new(graph.num_nodes(), message_edges, schema.num_edge_types()),
            pairs: LegalPairSet::new(graph),
            target_type: schema.target_type(),
            num_classes: schema.num_classes(),
            task: schema.task(),
            num_edge_types: schema.num_edge_types(),
        }
    }

    pub fn feature_dims(&self) -> Vec<usize> {
        self.features.iter().map(Tensor::cols).collect()
    }

    /// Node types that own a decoder MLP.
    pub fn decoder_types(&self) -> Vec<usize> {
        let mut types: Vec<usize> = self
            .pairs
            .blocks()
            .iter()
            .flat_map(|b| [b.type_u, b.type_v])
            .collect();
        types.sort_unstable();
        types.dedup();
        types
    }
}
