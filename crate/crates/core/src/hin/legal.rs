use super::graph::{Edge, HeteroGraph};

/// Candidate domain for one legal node-type pair.
///
/// Candidates are the `n_u x n_v` local pairs `(i, j)` with global indices
/// `offset_u + i` and `offset_v + j`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LegalBlock {
    pub type_u: usize,
    pub type_v: usize,
    /// Edge types declared on this type pair; the first is used for additions.
    pub edge_types: Vec<usize>,
    pub offset_u: usize,
    pub offset_v: usize,
    pub n_u: usize,
    pub n_v: usize,
    /// Ground truth `a_{u,v}` in {0, 1}, row-major over the block.
    pub labels: Vec<f64>,
}

impl LegalBlock {
    pub fn len(&self) -> usize {
        self.n_u * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_type(&self) -> bool {
        self.type_u == self.type_v
    }

    /// Global node pair of candidate `k`.
    pub fn pair(&self, k: usize) -> (usize, usize) {
        (self.offset_u + k / self.n_v, self.offset_v + k % self.n_v)
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&a| a > 0.5).count()
    }
}

/// All schema-valid candidate pairs of a graph, grouped by type pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LegalPairSet {
    blocks: Vec<LegalBlock>,
}

impl LegalPairSet {
    pub fn new(graph: &HeteroGraph) -> Self {
        Self::with_edges(graph, graph.edges())
    }

    /// Candidate domain of `graph` labelled by an arbitrary edge list.
    pub fn with_edges(graph: &HeteroGraph, edges: &[Edge]) -> Self {
        let schema = graph.schema();
        let mut blocks: Vec<LegalBlock> = schema
            .type_pair_blocks()
            .into_iter()
            .map(|b| {
                let (n_u, n_v) = (graph.type_count(b.type_u), graph.type_count(b.type_v));
                LegalBlock {
                    type_u: b.type_u,
                    type_v: b.type_v,
                    edge_types: b.edge_types,
                    offset_u: graph.type_offset(b.type_u),
                    offset_v: graph.type_offset(b.type_v),
                    n_u,
                    n_v,
                    labels: vec![0.0; n_u * n_v],
                }
            })
            .collect();
        for e in edges {
            let Some(block) = blocks.iter_mut().find(|b| b.edge_types.contains(&e.etype)) else {
                continue;
            };
            let (tu, tv) = (graph.node_type(e.u), graph.node_type(e.v));
            let mut mark = |a: usize, b: usize| {
                let i = a - block.offset_u;
                let j = b - block.offset_v;
                block.labels[i * block.n_v + j] = 1.0;
            };
            if tu == block.type_u && tv == block.type_v {
                mark(e.u, e.v);
            }
            if tv == block.type_u && tu == block.type_v {
                mark(e.v, e.u);
            }
        }
        LegalPairSet { blocks }
    }

    pub fn blocks(&self) -> &[LegalBlock] {
        &self.blocks
    }

    /// Number of directionless legal type pairs.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `sum over blocks of n_u * n_v`.
    pub fn total_candidates(&self) -> usize {
        self.blocks.iter().map(LegalBlock::len).sum()
    }

    pub fn total_positives(&self) -> usize {
        self.blocks.iter().map(LegalBlock::positives).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_candidates() == 0
    }

    /// Iterates every candidate as `(block index, global u, global v, label)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.blocks.iter().enumerate().flat_map(|(b, block)| {
            (0..block.len()).map(move |k| {
                let (u, v) = block.pair(k);
                (b, u, v, block.labels[k])
            })
        })
    }
}

/// Convenience wrapper matching the module's operation name.
pub fn enumerate_legal_pairs(graph: &HeteroGraph) -> LegalPairSet {
    LegalPairSet::new(graph)
}
