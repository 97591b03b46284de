//! Threshold-based edge addition and removal from decoder probabilities.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{Edge, HeteroGraph};
use crate::model::{GraphContext, Model};
use crate::tgd::EdgePredictionSet;
use crate::trainer::{train_with_context, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub add: f64,
    pub rm: f64,
}

impl Thresholds {
    /// Thresholds that can never fire: nothing is added or removed.
    pub const IDENTITY: Thresholds = Thresholds { add: 1.0, rm: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.add) || !unit(self.rm) {
            return Err(Error::Config(format!(
                "thresholds must lie in [0, 1], got {self:?}"
            )));
        }
        if self.add <= self.rm {
            return Err(Error::Config(format!(
                "thr_add {} must exceed thr_rm {}",
                self.add, self.rm
            )));
        }
        Ok(())
    }
}

/// Thresholds per edge type, falling back to a shared pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub shared: Thresholds,
    pub per_type: BTreeMap<usize, Thresholds>,
}

impl AugmentationPolicy {
    pub fn uniform(add: f64, rm: f64) -> Self {
        AugmentationPolicy {
            shared: Thresholds { add, rm },
            per_type: BTreeMap::new(),
        }
    }

    pub fn identity() -> Self {
        AugmentationPolicy {
            shared: Thresholds::IDENTITY,
            per_type: BTreeMap::new(),
        }
    }

    pub fn thresholds(&self, etype: usize) -> Thresholds {
        self.per_type.get(&etype).copied().unwrap_or(self.shared)
    }

    pub fn validate(&self) -> Result<()> {
        self.shared.validate()?;
        self.per_type.values().try_for_each(Thresholds::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Kept,
    Added,
    Removed,
}

/// Edge list after augmentation, with the fate of every touched edge.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    /// Message-passing edges: kept originals in source order, then additions.
    pub edges: Vec<Edge>,
    pub added: Vec<Edge>,
    pub removed: Vec<Edge>,
    pub num_source_edges: usize,
}

impl AugmentedGraph {
    pub fn identity(graph: &HeteroGraph) -> Self {
        AugmentedGraph {
            edges: graph.edges().to_vec(),
            added: Vec::new(),
            removed: Vec::new(),
            num_source_edges: graph.num_edges(),
        }
    }

    pub fn num_modified(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    /// Every original and added edge tagged with its provenance.
    pub fn provenance(&self, graph: &HeteroGraph) -> Vec<(Edge, Provenance)> {
        let removed: HashSet<Edge> = self.removed.iter().copied().collect();
        graph
            .edges()
            .iter()
            .map(|&e| {
                (
                    e,
                    if removed.contains(&e) {
                        Provenance::Removed
                    } else {
                        Provenance::Kept
                    },
                )
            })
            .chain(self.added.iter().map(|&e| (e, Provenance::Added)))
            .collect()
    }

    /// The augmented graph as a validated graph sharing nodes, labels and splits.
    pub fn to_graph(&self, graph: &HeteroGraph) -> Result<HeteroGraph> {
        graph.with_edges(self.edges.clone())
    }

    /// Context that passes messages over the augmented edges while keeping
    /// the source graph's reconstruction targets.
    pub fn context(&self, graph: &HeteroGraph) -> GraphContext {
        GraphContext::with_message_edges(graph, &self.edges)
    }
}

/// Scores every legal pair of `graph` with dropout disabled.
pub fn predict_all_legal(model: &Model, graph: &HeteroGraph) -> Result<EdgePredictionSet> {
    model.predict_edges(&GraphContext::new(graph))
}

fn pair_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Adds non-edges scored above `thr_add` and removes edges scored below
/// `thr_rm`, using the thresholds of each edge's type.
pub fn graph_augment(
    graph: &HeteroGraph,
    preds: &EdgePredictionSet,
    policy: &AugmentationPolicy,
) -> Result<AugmentedGraph> {
    policy.validate()?;
    if preds.pairs.blocks().len() != graph.schema().type_pair_blocks().len() {
        return Err(Error::Graph(
            "prediction set does not belong to this graph".into(),
        ));
    }
    let mut existing: HashMap<(usize, usize), Vec<Edge>> = HashMap::new();
    for &e in graph.edges() {
        existing.entry(pair_key(e.u, e.v)).or_default().push(e);
    }
    let mut removed_set: HashSet<Edge> = HashSet::new();
    let mut added = Vec::new();
    for (b, block) in preds.pairs.blocks().iter().enumerate() {
        let thr_add = policy.thresholds(block.edge_types[0]).add;
        for k in 0..block.len() {
            let (u, v) = block.pair(k);
            if block.same_type() && u >= v {
                continue;
            }
            let p = preds.probs[b][k];
            match existing.get(&pair_key(u, v)) {
                Some(edges) => {
                    for &e in edges.iter().filter(|e| block.edge_types.contains(&e.etype)) {
                        if p < policy.thresholds(e.etype).rm {
                            removed_set.insert(e);
                        }
                    }
                }
                None => {
                    if p > thr_add {
                        let e = graph
                            .canonical_edge(u, v, block.edge_types[0])
                            .ok_or_else(|| Error::Graph(format!("illegal addition ({u}, {v})")))?;
                        added.push(e);
                    }
                }
            }
        }
    }
    let removed: Vec<Edge> = graph
        .edges()
        .iter()
        .filter(|e| removed_set.contains(e))
        .copied()
        .collect();
    let mut edges: Vec<Edge> = graph
        .edges()
        .iter()
        .filter(|e| !removed_set.contains(e))
        .copied()
        .collect();
    edges.extend(&added);
    Ok(AugmentedGraph {
        edges,
        added,
        removed,
        num_source_edges: graph.num_edges(),
    })
}

/// Removes `count` uniformly chosen edges; the comparator for learned removal.
pub fn random_removal(graph: &HeteroGraph, count: usize, seed: u64) -> Result<AugmentedGraph> {
    let n = graph.num_edges();
    if count > n {
        return Err(Error::Config(format!("cannot remove {count} of {n} edges")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop = vec![false; n];
    for i in sample(&mut rng, n, count) {
        drop[i] = true;
    }
    let (mut edges, mut removed) = (Vec::new(), Vec::new());
    for (i, &e) in graph.edges().iter().enumerate() {
        if drop[i] {
            removed.push(e);
        } else {
            edges.push(e);
        }
    }
    Ok(AugmentedGraph {
        edges,
        added: Vec::new(),
        removed,
        num_source_edges: n,
    })
}

/// Shared threshold grid; pairs with `add <= rm` are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdGrid {
    pub add: Vec<f64>,
    pub rm: Vec<f64>,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid {
            add: vec![0.90, 0.95, 0.99],
            rm: vec![0.01, 0.05, 0.10],
        }
    }
}

impl ThresholdGrid {
    pub fn points(&self) -> Result<Vec<Thresholds>> {
        let mut out = Vec::new();
        for &add in &self.add {
            for &rm in &self.rm {
                let t = Thresholds { add, rm };
                match t.validate() {
                    Ok(()) => out.push(t),
                    Err(_) if add <= rm => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config(
                "no grid point satisfies thr_add > thr_rm".into(),
            ));
        }
        Ok(out)
    }
}

/// Known noise edges of a synthetic graph, for denoising columns.
#[derive(Debug, Clone, Default)]
pub struct NoiseOracle {
    pub noise: HashSet<Edge>,
}

impl NoiseOracle {
    /// `(noise edges removed / noise edges, planted edges removed / planted edges)`.
    pub fn rates(&self, graph: &HeteroGraph, aug: &AugmentedGraph) -> (f64, f64) {
        let noise_removed = aug
            .removed
            .iter()
            .filter(|e| self.noise.contains(e))
            .count();
        let planted_removed = aug.removed.len() - noise_removed;
        let planted = graph.num_edges() - self.noise.len();
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        (
            frac(noise_removed, self.noise.len()),
            frac(planted_removed, planted),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub thr_add: f64,
    pub thr_rm: f64,
    pub added: usize,
    pub removed: usize,
    pub val_macro: f64,
    pub val_micro: f64,
    pub test_macro: f64,
    pub test_micro: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted_removed: Option<f64>,
}

pub struct GridOutcome {
    pub thresholds: Thresholds,
    pub augmented: AugmentedGraph,
    pub model: Model,
    pub report: TrainReport,
}

pub struct GridSearch {
    pub rows: Vec<GridRow>,
    pub best: usize,
    pub outcome: GridOutcome,
}

impl GridSearch {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }

    /// `<thr_add> <thr_rm> <added> <removed> <val_macro> <val_micro>`, plus
    /// noise columns when the noise oracle was available.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io("<augmentation report>", e);
        let noisy = self.rows.iter().any(|r| r.noise_recall.is_some());
        let mut header = "thr_add\tthr_rm\tadded\tremoved\tval_macro\tval_micro".to_string();
        if noisy {
            header.push_str("\tnoise_recall\tplanted_removed");
        }
        writeln!(out, "{header}").map_err(io)?;
        for r in &self.rows {
            write!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.thr_add, r.thr_rm, r.added, r.removed, r.val_macro, r.val_micro
            )
            .map_err(io)?;
            if let (Some(n), Some(p)) = (r.noise_recall, r.planted_removed) {
                write!(out, "\t{n}\t{p}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        Ok(())
    }
}

fn run_point(
    graph: &HeteroGraph,
    preds: &EdgePredictionSet,
    cfg: &TrainConfig,
    t: Thresholds,
    noise: Option<&NoiseOracle>,
) -> Result<(GridRow, GridOutcome)> {
    let augmented = graph_augment(
        graph,
        preds,
        &AugmentationPolicy {
            shared: t,
            per_type: BTreeMap::new(),
        },
    )?;
    let (model, report) = train_with_context(graph, &augmented.context(graph), cfg)?;
    let rates = noise.map(|n| n.rates(graph, &augmented));
    let row = GridRow {
        thr_add: t.add,
        thr_rm: t.rm,
        added: augmented.added.len(),
        removed: augmented.removed.len(),
        val_macro: report.valid.macro_f1,
        val_micro: report.valid.micro_f1,
        test_macro: report.test.macro_f1,
        test_micro: report.test.micro_f1,
        noise_recall: rates.map(|r| r.0),
        planted_removed: rates.map(|r| r.1),
    };
    Ok((
        row,
        GridOutcome {
            thresholds: t,
            augmented,
            model,
            report,
        },
    ))
}

/// Retrains from fresh initialisation at every valid grid point and keeps
/// the best validation Macro-F1, preferring fewer modified edges on ties.
/// Up to `jobs` grid points train concurrently; results do not depend on it.
pub fn threshold_grid_search(
    graph: &HeteroGraph,
    preds: &EdgePredictionSet,
    cfg: &TrainConfig,
    grid: &ThresholdGrid,
    noise: Option<&NoiseOracle>,
    jobs: usize,
) -> Result<GridSearch> {
    let points = grid.points()?;
    let jobs = jobs.clamp(1, points.len());
    let mut results: Vec<Option<Result<(GridRow, GridOutcome)>>> =
        (0..points.len()).map(|_| None).collect();
    if jobs == 1 {
        for (slot, &t) in results.iter_mut().zip(&points) {
            *slot = Some(run_point(graph, preds, cfg, t, noise));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let points = &points;
                    s.spawn(move || {
                        (j..points.len())
                            .step_by(jobs)
                            .map(|i| (i, run_point(graph, preds, cfg, points[i], noise)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("grid worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut outcomes = Vec::with_capacity(points.len());
    for r in results {
        let (row, outcome) = r.expect("every grid point ran")?;
        rows.push(row);
        outcomes.push(outcome);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        let b = &rows[best];
        if r.val_macro > b.val_macro
            || (r.val_macro == b.val_macro && r.added + r.removed < b.added + b.removed)
        {
            best = i;
        }
    }
    let outcome = outcomes.swap_remove(best);
    Ok(GridSearch {
        rows,
        best,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::LegalPairSet;
    use crate::verify::fixture_graph;

    fn preds_with(graph: &HeteroGraph, f: impl Fn(usize, usize) -> f64) -> EdgePredictionSet {
        let pairs = LegalPairSet::new(graph);
        let probs = pairs
            .blocks()
            .iter()
            .map(|b| {
                (0..b.len())
                    .map(|k| {
                        let (u, v) = b.pair(k);
                        f(u, v)
                    })
                    .collect()
            })
            .collect();
        EdgePredictionSet { pairs, probs }
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(Thresholds { add: 0.1, rm: 0.1 }.validate().is_err());
        assert!(Thresholds { add: 0.05, rm: 0.1 }.validate().is_err());
        assert!(Thresholds { add: 0.9, rm: 0.1 }.validate().is_ok());
        let bad = ThresholdGrid {
            add: vec![0.1],
            rm: vec![0.2, 0.5],
        };
        assert!(bad.points().is_err());
        assert_eq!(
            ThresholdGrid {
                add: vec![0.9],
                rm: vec![0.1]
            }
            .points()
            .unwrap()
            .len(),
            1
        );
    }

    #[test]
    fn dead_zone_and_both_directions() {
        let g = fixture_graph();
        // a0 = 0, b1 = 4: non-edge scored high; a2-b1 (2, 4) edge scored low
        let preds = preds_with(&g, |u, v| match (u, v) {
            (0, 4) => 0.95,
            (2, 4) => 0.05,
            _ => 0.5,
        });
        let aug = graph_augment(&g, &preds, &AugmentationPolicy::uniform(0.9, 0.1)).unwrap();
        assert_eq!(
            aug.added,
            vec![Edge {
                u: 0,
                v: 4,
                etype: 0
            }]
        );
        assert_eq!(
            aug.removed,
            vec![Edge {
                u: 2,
                v: 4,
                etype: 0
            }]
        );
        assert_eq!(aug.edges.len(), g.num_edges() + 1 - 1);
        aug.to_graph(&g).unwrap();
        let tags = aug.provenance(&g);
        assert_eq!(tags.iter().filter(|t| t.1 == Provenance::Added).count(), 1);
        assert_eq!(
            tags.iter().filter(|t| t.1 == Provenance::Removed).count(),
            1
        );
    }

    #[test]
    fn identity_policy_changes_nothing() {
        let g = fixture_graph();
        let preds = preds_with(
            &g,
            |u, v| if (u + v) % 2 == 0 { 1.0 - 1e-12 } else { 1e-12 },
        );
        let aug = graph_augment(&g, &preds, &AugmentationPolicy::identity()).unwrap();
        assert_eq!(aug, AugmentedGraph::identity(&g));
    }

    #[test]
    fn random_removal_counts() {
        let g = fixture_graph();
        let aug = random_removal(&g, 2, 3).unwrap();
        assert_eq!((aug.removed.len(), aug.edges.len()), (2, g.num_edges() - 2));
        assert_eq!(aug, random_removal(&g, 2, 3).unwrap());
        assert!(random_removal(&g, 99, 0).is_err());
    }
}
