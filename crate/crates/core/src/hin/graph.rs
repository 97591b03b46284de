use std::collections::{HashMap, HashSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schema::GraphSchema;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Undirected typed edge between global node indices.
///
/// Stored in the orientation of its edge type's declaration; edges inside a
/// single node type keep `u <= v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub etype: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

pub const TRAIN_FRACTION: f64 = 0.24;
pub const VALID_FRACTION: f64 = 0.06;

/// Heterogeneous graph with per-type node blocks.
///
/// Global node indices are grouped by node type in schema order; within a
/// type they follow insertion (file) order. Labels, splits and edges all use
/// global indices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    schema: GraphSchema,
    node_ids: Vec<String>,
    node_type: Vec<usize>,
    type_offsets: Vec<usize>,
    features: Vec<Tensor>,
    featureless: Vec<bool>,
    edges: Vec<Edge>,
    labels: Vec<Option<Vec<usize>>>,
    splits: Splits,
}

impl HeteroGraph {
    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn node_type(&self, u: usize) -> usize {
        self.node_type[u]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type
    }

    pub fn node_id(&self, u: usize) -> &str {
        &self.node_ids[u]
    }

    pub fn type_range(&self, t: usize) -> Range<usize> {
        self.type_offsets[t]..self.type_offsets[t + 1]
    }

    pub fn type_count(&self, t: usize) -> usize {
        self.type_offsets[t + 1] - self.type_offsets[t]
    }

    pub fn type_offset(&self, t: usize) -> usize {
        self.type_offsets[t]
    }

    pub fn target_range(&self) -> Range<usize> {
        self.type_range(self.schema.target_type())
    }

    /// Per-type feature matrix (`nodes of type x feature dim`).
    pub fn features(&self, t: usize) -> &Tensor {
        &self.features[t]
    }

    pub fn feature_dim(&self, t: usize) -> usize {
        self.features[t].cols()
    }

    /// True when the type had no features on disk and uses one-hot identity rows.
    pub fn is_featureless(&self, t: usize) -> bool {
        self.featureless[t]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Label set of node `u`; `None` for unlabeled and non-target nodes.
    pub fn label(&self, u: usize) -> Option<&[usize]> {
        self.labels[u].as_deref()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Same nodes, features, labels and splits over a different edge list.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<HeteroGraph> {
        let g = HeteroGraph {
            edges,
            ..self.clone()
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_splits(&self, splits: Splits) -> Result<HeteroGraph> {
        let g = HeteroGraph {
            splits,
            ..self.clone()
        };
        g.validate()?;
        Ok(g)
    }

    /// Canonical orientation for an edge between `a` and `b` of type `etype`.
    pub fn canonical_edge(&self, a: usize, b: usize, etype: usize) -> Option<Edge> {
        let def = self.schema.edge_types().get(etype)?;
        let (ta, tb) = (self.node_type[a], self.node_type[b]);
        if def.source == def.target {
            (ta == def.source && tb == def.source).then(|| Edge {
                u: a.min(b),
                v: a.max(b),
                etype,
            })
        } else if ta == def.source && tb == def.target {
            Some(Edge { u: a, v: b, etype })
        } else if tb == def.source && ta == def.target {
            Some(Edge { u: b, v: a, etype })
        } else {
            None
        }
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for (t, f) in self.features.iter().enumerate() {
            if f.rows() != self.type_count(t) {
                return Err(Error::Graph(format!(
                    "feature rows {} != node count {} for type {}",
                    f.rows(),
                    self.type_count(t),
                    self.schema.node_types()[t]
                )));
            }
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.u >= n || e.v >= n {
                return Err(Error::Graph(format!("edge {e:?} references unknown node")));
            }
            if self.canonical_edge(e.u, e.v, e.etype) != Some(*e) {
                return Err(Error::Graph(format!(
                    "edge ({}, {}, {e_type}) violates the schema",
                    self.node_ids[e.u],
                    self.node_ids[e.v],
                    e_type = self
                        .schema
                        .edge_types()
                        .get(e.etype)
                        .map_or("?", |d| d.name.as_str())
                )));
            }
            if !seen.insert(*e) {
                return Err(Error::Graph(format!(
                    "duplicate edge ({}, {})",
                    self.node_ids[e.u], self.node_ids[e.v]
                )));
            }
        }
        let target = self.schema.target_type();
        let mut in_split = HashSet::new();
        for &u in self
            .splits
            .train
            .iter()
            .chain(&self.splits.valid)
            .chain(&self.splits.test)
        {
            if u >= n || self.node_type[u] != target {
                return Err(Error::Graph(format!(
                    "split index {u} is not a target node"
                )));
            }
            if self.labels[u].is_none() {
                return Err(Error::Graph(format!(
                    "split node {} has no label",
                    self.node_ids[u]
                )));
            }
            if !in_split.insert(u) {
                return Err(Error::Graph(format!(
                    "node {} appears in two splits",
                    self.node_ids[u]
                )));
            }
        }
        let c = self.schema.num_classes();
        for (u, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                if self.node_type[u] != target {
                    return Err(Error::Graph(format!(
                        "label on non-target node {}",
                        self.node_ids[u]
                    )));
                }
                if let Some(&bad) = l.iter().find(|&&k| k >= c) {
                    return Err(Error::Graph(format!("label {bad} >= num_classes {c}")));
                }
            }
        }
        Ok(())
    }
}

/// Incremental construction of a [`HeteroGraph`].
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    schema: GraphSchema,
    per_type: Vec<Vec<(String, Option<Vec<f64>>)>>,
    ids: HashMap<String, (usize, usize)>,
    edges: Vec<(usize, usize, usize, usize, usize)>,
    edge_set: HashSet<(usize, usize, usize, usize, usize)>,
    labels: HashMap<String, Vec<usize>>,
    splits: Vec<(String, SplitKind)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl GraphBuilder {
    pub fn new(schema: GraphSchema) -> Self {
        let t = schema.num_node_types();
        GraphBuilder {
            schema,
            per_type: vec![Vec::new(); t],
            ids: HashMap::new(),
            edges: Vec::new(),
            edge_set: HashSet::new(),
            labels: HashMap::new(),
            splits: Vec::new(),
        }
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn add_node(
        &mut self,
        id: &str,
        node_type: &str,
        features: Option<Vec<f64>>,
    ) -> Result<(), String> {
        let t = self
            .schema
            .node_type_index(node_type)
            .ok_or_else(|| format!("unknown node type {node_type:?}"))?;
        if self.ids.contains_key(id) {
            return Err(format!("duplicate node id {id:?}"));
        }
        let list = &mut self.per_type[t];
        if let Some((_, first)) = list.first() {
            let want = first.as_ref().map(Vec::len);
            let got = features.as_ref().map(Vec::len);
            if want != got {
                return Err(format!(
                    "feature arity {} disagrees with {} for type {node_type}",
                    got.unwrap_or(0),
                    want.unwrap_or(0)
                ));
            }
        }
        self.ids.insert(id.to_string(), (t, list.len()));
        list.push((id.to_string(), features));
        Ok(())
    }

    /// Returns `false` when the edge already exists.
    pub fn add_edge(&mut self, u: &str, v: &str, edge_type: &str) -> Result<bool, String> {
        let &(tu, iu) = self
            .ids
            .get(u)
            .ok_or_else(|| format!("unknown node {u:?}"))?;
        let &(tv, iv) = self
            .ids
            .get(v)
            .ok_or_else(|| format!("unknown node {v:?}"))?;
        let r = self
            .schema
            .edge_type_index(edge_type)
            .ok_or_else(|| format!("edge type {edge_type:?} is not in the schema"))?;
        if !self.schema.is_legal(tu, tv, r) {
            let names = self.schema.node_types();
            return Err(format!(
                "edge ({u}, {v}, {edge_type}) violates the schema: {} - {} is not a legal {edge_type} pair",
                names[tu], names[tv]
            ));
        }
        let def = &self.schema.edge_types()[r];
        let key = if def.source == def.target {
            let (a, b) = ((tu, iu), (tv, iv));
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            (a.0, a.1, b.0, b.1, r)
        } else if tu == def.source {
            (tu, iu, tv, iv, r)
        } else {
            (tv, iv, tu, iu, r)
        };
        if !self.edge_set.insert(key) {
            return Ok(false);
        }
        self.edges.push(key);
        Ok(true)
    }

    /// Multi-label class lists are stored sorted and deduplicated.
    pub fn set_label(&mut self, id: &str, mut classes: Vec<usize>) -> Result<(), String> {
        classes.sort_unstable();
        classes.dedup();
        let &(t, _) = self
            .ids
            .get(id)
            .ok_or_else(|| format!("unknown node {id:?}"))?;
        if t != self.schema.target_type() {
            return Err(format!("node {id:?} is not of the target type"));
        }
        let c = self.schema.num_classes();
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(format!("label {bad} out of range for {c} classes"));
        }
        if self.schema.task() == super::Task::Multiclass && classes.len() != 1 {
            return Err(format!("multiclass node {id:?} needs exactly one label"));
        }
        if self.labels.insert(id.to_string(), classes).is_some() {
            return Err(format!("duplicate label for {id:?}"));
        }
        Ok(())
    }

    pub fn set_split(&mut self, id: &str, kind: SplitKind) -> Result<(), String> {
        if !self.ids.contains_key(id) {
            return Err(format!("unknown node {id:?}"));
        }
        if !self.labels.contains_key(id) {
            return Err(format!("split node {id:?} has no label"));
        }
        if self.splits.iter().any(|(s, _)| s == id) {
            return Err(format!("node {id:?} assigned to more than one split"));
        }
        self.splits.push((id.to_string(), kind));
        Ok(())
    }

    pub fn has_splits(&self) -> bool {
        !self.splits.is_empty()
    }

    /// Finishes the graph. Without explicit splits, labeled target nodes are
    /// shuffled with `split_seed` and cut 24% / 6% / 70%.
    pub fn build(self, split_seed: u64) -> Result<HeteroGraph> {
        let t_count = self.schema.num_node_types();
        let mut type_offsets = Vec::with_capacity(t_count + 1);
        type_offsets.push(0);
        for list in &self.per_type {
            type_offsets.push(type_offsets.last().unwrap() + list.len());
        }
        let n = *type_offsets.last().unwrap();
        let mut node_ids = Vec::with_capacity(n);
        let mut node_type = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(t_count);
        let mut featureless = Vec::with_capacity(t_count);
        for (t, list) in self.per_type.iter().enumerate() {
            let count = list.len();
            let dim = list.first().and_then(|(_, f)| f.as_ref().map(Vec::len));
            match dim {
                Some(dim) => {
                    let data = list
                        .iter()
                        .flat_map(|(_, f)| f.as_ref().unwrap().iter().copied())
                        .collect();
                    features.push(Tensor::from_rows(count, dim, data)?);
                    featureless.push(false);
                }
                None => {
                    features.push(Tensor::identity(count));
                    featureless.push(true);
                }
            }
            for (id, _) in list {
                node_ids.push(id.clone());
                node_type.push(t);
            }
        }
        let global = |t: usize, i: usize| type_offsets[t] + i;
        let edges = self
            .edges
            .iter()
            .map(|&(tu, iu, tv, iv, r)| Edge {
                u: global(tu, iu),
                v: global(tv, iv),
                etype: r,
            })
            .collect();
        let mut labels = vec![None; n];
        for (id, l) in self.labels {
            let (t, i) = self.ids[&id];
            labels[global(t, i)] = Some(l);
        }
        let mut splits = Splits::default();
        if self.splits.is_empty() {
            let tt = self.schema.target_type();
            let mut labeled: Vec<usize> = (type_offsets[tt]..type_offsets[tt + 1])
                .filter(|&u| labels[u].is_some())
                .collect();
            splits = random_splits(&mut labeled, split_seed);
        } else {
            for (id, kind) in &self.splits {
                let (t, i) = self.ids[id];
                let u = global(t, i);
                match kind {
                    SplitKind::Train => splits.train.push(u),
                    SplitKind::Valid => splits.valid.push(u),
                    SplitKind::Test => splits.test.push(u),
                }
            }
        }
        let g = HeteroGraph {
            schema: self.schema,
            node_ids,
            node_type,
            type_offsets,
            features,
            featureless,
            edges,
            labels,
            splits,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Shuffles `nodes` and cuts them 24% / 6% / 70%.
pub fn random_splits(nodes: &mut [usize], seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    nodes.shuffle(&mut rng);
    let n = nodes.len();
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let n_valid = (n as f64 * VALID_FRACTION).round() as usize;
    let mut train = nodes[..n_train].to_vec();
    let mut valid = nodes[n_train..n_train + n_valid].to_vec();
    let mut test = nodes[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Splits { train, valid, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{EdgeTypeDef, Task};

    fn schema() -> GraphSchema {
        GraphSchema::new(
            vec!["paper".into(), "author".into()],
            vec![
                EdgeTypeDef {
                    name: "PA".into(),
                    source: 0,
                    target: 1,
                },
                EdgeTypeDef {
                    name: "PP".into(),
                    source: 0,
                    target: 0,
                },
            ],
            0,
            2,
            Task::Multiclass,
        )
        .unwrap()
    }

    #[test]
    fn builder_orders_nodes_by_type_then_file_order() {
        let mut b = GraphBuilder::new(schema());
        b.add_node("a1", "author", None).unwrap();
        b.add_node("p1", "paper", Some(vec![1.0])).unwrap();
        b.add_node("p2", "paper", Some(vec![2.0])).unwrap();
        b.add_edge("a1", "p2", "PA").unwrap();
        b.add_edge("p2", "p1", "PP").unwrap();
        assert!(
            !b.add_edge("p1", "p2", "PP").unwrap(),
            "reverse duplicate is dropped"
        );
        b.set_label("p1", vec![0]).unwrap();
        b.set_label("p2", vec![1]).unwrap();
        let g = b.build(0).unwrap();
        assert_eq!(g.node_id(0), "p1");
        assert_eq!(g.node_id(2), "a1");
        assert_eq!(
            g.edges()[0],
            Edge {
                u: 1,
                v: 2,
                etype: 0
            }
        );
        assert_eq!(
            g.edges()[1],
            Edge {
                u: 0,
                v: 1,
                etype: 1
            }
        );
        assert!(g.is_featureless(1));
        assert_eq!(g.features(1), &Tensor::identity(1));
    }

    #[test]
    fn builder_rejects_illegal_edges_and_arity_mismatch() {
        let mut b = GraphBuilder::new(schema());
        b.add_node("a1", "author", None).unwrap();
        b.add_node("a2", "author", None).unwrap();
        b.add_node("p1", "paper", Some(vec![1.0, 2.0])).unwrap();
        assert!(b.add_node("p2", "paper", Some(vec![1.0])).is_err());
        let err = b.add_edge("a1", "a2", "PA").unwrap_err();
        assert!(err.contains("violates the schema"), "{err}");
        assert!(b.add_edge("a1", "p1", "XX").is_err());
        assert!(b.add_edge("a1", "zz", "PA").is_err());
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let mut b = GraphBuilder::new(schema());
        b.add_node("p1", "paper", None).unwrap();
        b.set_label("p1", vec![0]).unwrap();
        b.set_split("p1", SplitKind::Train).unwrap();
        assert!(b.set_split("p1", SplitKind::Test).is_err());
    }

    #[test]
    fn random_splits_partition() {
        let mut nodes: Vec<usize> = (0..100).collect();
        let s = random_splits(&mut nodes, 3);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (24, 6, 70));
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
