//! Planted-partition heterogeneous graphs with known noise edges.
//!
//! Target nodes are split into `num_classes * communities_per_class`
//! balanced communities; every other node type is partitioned the same way.
//! A planted target-attribute edge lands inside the target's community with
//! probability `homophily` and on a uniform attribute otherwise. After the
//! planted edges, `noise * |planted|` uniformly random legal non-edges are
//! injected and remembered. Splits are stratified by class.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::{Edge, GraphBuilder, HeteroGraph, SplitKind, TRAIN_FRACTION, VALID_FRACTION};
use super::schema::{EdgeTypeDef, GraphSchema, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeSpec {
    pub name: String,
    pub count: usize,
    /// Feature width; 0 gives the type identity features.
    #[serde(default)]
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTypeSpec {
    pub name: String,
    pub source: String,
    pub target: String,
    /// Expected fraction of the `n_source * n_target` pairs that carry a planted edge.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub node_types: Vec<NodeTypeSpec>,
    pub edge_types: Vec<EdgeTypeSpec>,
    pub target: String,
    pub num_classes: usize,
    pub homophily: f64,
    pub noise: f64,
    #[serde(default = "default_communities")]
    pub communities_per_class: usize,
    /// Scale of the per-class feature means relative to unit feature noise.
    #[serde(default = "default_signal")]
    pub feature_signal: f64,
}

fn default_communities() -> usize {
    1
}

fn default_signal() -> f64 {
    0.5
}

/// A generated graph plus the generator's ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: HeteroGraph,
    /// Injected noise edges, in insertion order.
    pub noise_edges: Vec<Edge>,
    /// Planted community per global node.
    pub community: Vec<usize>,
}

impl SyntheticGraph {
    pub fn noise_set(&self) -> HashSet<Edge> {
        self.noise_edges.iter().copied().collect()
    }

    pub fn planted_edges(&self) -> Vec<Edge> {
        let noise = self.noise_set();
        self.graph
            .edges()
            .iter()
            .filter(|e| !noise.contains(e))
            .copied()
            .collect()
    }
}

fn imdb_types(
    movies: usize,
    actors: usize,
    keywords: usize,
    directors: usize,
    movie_features: usize,
) -> Vec<NodeTypeSpec> {
    [
        ("movie", movies, movie_features),
        ("actor", actors, 0),
        ("keyword", keywords, 0),
        ("director", directors, 0),
    ]
    .into_iter()
    .map(|(name, count, features)| NodeTypeSpec {
        name: name.into(),
        count,
        features,
    })
    .collect()
}

/// Movie-centred edge types with the given expected degree per movie.
fn imdb_edges(
    actors: usize,
    keywords: usize,
    directors: usize,
    per_movie: [f64; 3],
) -> Vec<EdgeTypeSpec> {
    [
        ("MA", "actor", actors, per_movie[0]),
        ("MK", "keyword", keywords, per_movie[1]),
        ("MD", "director", directors, per_movie[2]),
    ]
    .into_iter()
    .map(|(name, other, n, deg)| EdgeTypeSpec {
        name: name.into(),
        source: "movie".into(),
        target: other.into(),
        density: deg / n as f64,
    })
    .collect()
}

impl SyntheticSpec {
    /// Movie/actor/keyword/director graph at 100/300/50/40 nodes.
    pub fn imdb_like() -> Self {
        SyntheticSpec {
            node_types: imdb_types(100, 300, 50, 40, 16),
            edge_types: imdb_edges(300, 50, 40, [3.0, 3.0, 1.0]),
            target: "movie".into(),
            num_classes: 5,
            homophily: 0.9,
            noise: 0.2,
            communities_per_class: 1,
            feature_signal: 0.5,
        }
    }

    /// Perfectly class-aligned structure, no noise, uninformative features.
    pub fn separable() -> Self {
        SyntheticSpec {
            node_types: imdb_types(60, 120, 30, 20, 0),
            edge_types: imdb_edges(120, 30, 20, [3.0, 3.0, 1.0]),
            target: "movie".into(),
            num_classes: 3,
            homophily: 1.0,
            noise: 0.0,
            communities_per_class: 1,
            feature_signal: 0.0,
        }
    }

    /// 200 movies, five classes, partially homophilous with 20% noise.
    pub fn ablation() -> Self {
        SyntheticSpec {
            node_types: imdb_types(200, 240, 60, 40, 16),
            edge_types: imdb_edges(240, 60, 40, [4.0, 4.0, 1.0]),
            target: "movie".into(),
            num_classes: 5,
            homophily: 0.8,
            noise: 0.2,
            communities_per_class: 1,
            feature_signal: 0.3,
        }
    }

    /// Fine-grained communities with 30% injected noise.
    pub fn noisy() -> Self {
        SyntheticSpec {
            node_types: imdb_types(150, 240, 60, 40, 16),
            edge_types: imdb_edges(240, 60, 40, [5.0, 5.0, 1.0]),
            target: "movie".into(),
            num_classes: 3,
            homophily: 1.0,
            noise: 0.3,
            communities_per_class: 2,
            feature_signal: 0.3,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "imdb-like" | "imdb_like" => Some(Self::imdb_like()),
            "separable" => Some(Self::separable()),
            "ablation" => Some(Self::ablation()),
            "noisy" => Some(Self::noisy()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synthetic spec serializes")
    }

    fn schema(&self) -> Result<GraphSchema> {
        let names: Vec<String> = self.node_types.iter().map(|t| t.name.clone()).collect();
        let find = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::Config(format!("unknown node type {n:?}")))
        };
        let edges = self
            .edge_types
            .iter()
            .map(|e| {
                Ok(EdgeTypeDef {
                    name: e.name.clone(),
                    source: find(&e.source)?,
                    target: find(&e.target)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let target = find(&self.target)?;
        GraphSchema::new(names, edges, target, self.num_classes, Task::Multiclass)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        for e in &self.edge_types {
            if !(0.0..=1.0).contains(&e.density) {
                return Err(Error::Config(format!(
                    "density {} of {} outside [0, 1]",
                    e.density, e.name
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(Error::Config(format!(
                "homophily {} outside [0, 1]",
                self.homophily
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::Config(format!(
                "noise fraction {} is negative",
                self.noise
            )));
        }
        if self.communities_per_class == 0 {
            return Err(Error::Config(
                "communities_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Balanced community assignment for `n` nodes over `k` communities.
fn balanced(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut c: Vec<usize> = (0..n).map(|i| i % k).collect();
    c.shuffle(rng);
    c
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticGraph> {
    spec.validate()?;
    let schema = spec.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_types = spec.node_types.len();
    let target = schema.target_type();
    let k = spec.num_classes * spec.communities_per_class;

    let counts: Vec<usize> = spec.node_types.iter().map(|t| t.count).collect();
    let mut offsets = vec![0; n_types + 1];
    for t in 0..n_types {
        offsets[t + 1] = offsets[t] + counts[t];
    }
    let mut community = Vec::with_capacity(offsets[n_types]);
    for &n in &counts {
        community.extend(balanced(n, k, &mut rng));
    }
    // members[t][c]: local indices of type t in community c
    let members: Vec<Vec<Vec<usize>>> = (0..n_types)
        .map(|t| {
            let mut m = vec![Vec::new(); k];
            for i in 0..counts[t] {
                m[community[offsets[t] + i]].push(i);
            }
            m
        })
        .collect();

    let id = |t: usize, i: usize| format!("{}_{i}", spec.node_types[t].name);
    let mut b = GraphBuilder::new(schema.clone());

    let class_means: Vec<Vec<f64>> = {
        let f = spec.node_types[target].features;
        (0..spec.num_classes)
            .map(|_| {
                (0..f)
                    .map(|_| spec.feature_signal * normal(&mut rng))
                    .collect()
            })
            .collect()
    };
    for (t, nt) in spec.node_types.iter().enumerate() {
        for i in 0..nt.count {
            let feats = (nt.features > 0).then(|| {
                (0..nt.features)
                    .map(|j| {
                        let mean = if t == target {
                            class_means[community[offsets[t] + i] / spec.communities_per_class][j]
                        } else {
                            0.0
                        };
                        mean + normal(&mut rng)
                    })
                    .collect()
            });
            b.add_node(&id(t, i), &nt.name, feats)
                .map_err(Error::Graph)?;
        }
    }

    let mut present: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut try_add = |b: &mut GraphBuilder,
                       r: usize,
                       tu: usize,
                       iu: usize,
                       tv: usize,
                       iv: usize|
     -> Result<bool> {
        if tu == tv && iu == iv {
            return Ok(false);
        }
        let (a, c) = (offsets[tu] + iu, offsets[tv] + iv);
        let key = if tu == tv {
            (a.min(c), a.max(c), r)
        } else {
            (a, c, r)
        };
        if !present.insert(key) {
            return Ok(false);
        }
        b.add_edge(&id(tu, iu), &id(tv, iv), &spec.edge_types[r].name)
            .map_err(Error::Graph)
    };

    const TRIES: usize = 32;
    let mut planted = 0usize;
    for (r, et) in schema.edge_types().iter().enumerate() {
        let (s, t) = (et.source, et.target);
        let density = spec.edge_types[r].density;
        if density == 0.0 {
            continue;
        }
        if s == target || t == target {
            let other = if s == target { t } else { s };
            let (n_t, n_o) = (counts[target], counts[other]);
            if n_t == 0 || n_o == 0 {
                continue;
            }
            let total = ((density * (n_t * n_o) as f64).round() as usize).max(n_t);
            for i in 0..n_t {
                let degree = total / n_t + usize::from(i < total % n_t);
                let own = &members[other][community[offsets[target] + i]];
                for _ in 0..degree {
                    for _ in 0..TRIES {
                        let j = if rng.random::<f64>() < spec.homophily && !own.is_empty() {
                            own[rng.random_range(0..own.len())]
                        } else {
                            rng.random_range(0..n_o)
                        };
                        let added = if s == target {
                            try_add(&mut b, r, target, i, other, j)?
                        } else {
                            try_add(&mut b, r, other, j, target, i)?
                        };
                        if added {
                            planted += 1;
                            break;
                        }
                    }
                }
            }
        } else {
            let (n_s, n_t) = (counts[s], counts[t]);
            let total = (density * (n_s * n_t) as f64).round() as usize;
            for _ in 0..total {
                for _ in 0..TRIES {
                    let (i, j) = (rng.random_range(0..n_s), rng.random_range(0..n_t));
                    if try_add(&mut b, r, s, i, t, j)? {
                        planted += 1;
                        break;
                    }
                }
            }
        }
    }

    let sizes: Vec<usize> = schema
        .edge_types()
        .iter()
        .map(|e| counts[e.source] * counts[e.target])
        .collect();
    let domain: usize = sizes.iter().sum();
    let n_noise = (spec.noise * planted as f64).round() as usize;
    let mut noise_keys = Vec::with_capacity(n_noise);
    if domain > 0 {
        for _ in 0..n_noise {
            for _ in 0..TRIES {
                let mut pick = rng.random_range(0..domain);
                let mut r = 0;
                while pick >= sizes[r] {
                    pick -= sizes[r];
                    r += 1;
                }
                let et = &schema.edge_types()[r];
                let (i, j) = (pick / counts[et.target], pick % counts[et.target]);
                if try_add(&mut b, r, et.source, i, et.target, j)? {
                    noise_keys.push((r, et.source, i, et.target, j));
                    break;
                }
            }
        }
    }

    let mut by_class = vec![Vec::new(); spec.num_classes];
    for i in 0..counts[target] {
        let class = community[offsets[target] + i] / spec.communities_per_class;
        b.set_label(&id(target, i), vec![class])
            .map_err(Error::Graph)?;
        by_class[class].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (n * TRAIN_FRACTION).round() as usize;
        let n_valid = (n * VALID_FRACTION).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            let kind = if k < n_train {
                SplitKind::Train
            } else if k < n_train + n_valid {
                SplitKind::Valid
            } else {
                SplitKind::Test
            };
            b.set_split(&id(target, i), kind).map_err(Error::Graph)?;
        }
    }
    let graph = b.build(rng.random::<u64>())?;

    let noise_edges = noise_keys
        .into_iter()
        .map(|(r, ts, i, tt, j)| {
            graph
                .canonical_edge(offsets[ts] + i, offsets[tt] + j, r)
                .expect("noise edge is legal")
        })
        .collect();
    Ok(SyntheticGraph {
        graph,
        noise_edges,
        community,
    })
}

/// Writes `noise.tsv` next to a saved synthetic dataset.
pub fn save_noise(synth: &SyntheticGraph, dir: impl AsRef<Path>) -> Result<()> {
    let path = dir.as_ref().join(NOISE_FILE);
    let g = &synth.graph;
    let body: String = synth
        .noise_edges
        .iter()
        .map(|e| {
            format!(
                "{}\t{}\t{}\n",
                g.node_id(e.u),
                g.node_id(e.v),
                g.schema().edge_types()[e.etype].name
            )
        })
        .collect();
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

pub const NOISE_FILE: &str = "noise.tsv";

/// Reads the known-noise edge list of a dataset directory, when present.
pub fn load_noise(graph: &HeteroGraph, dir: impl AsRef<Path>) -> Result<Option<HashSet<Edge>>> {
    let path = dir.as_ref().join(NOISE_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let index = graph.node_index();
    let mut out = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let err = |m: &str| Error::data(NOISE_FILE, i + 1, m);
        let [u, v, r] = f.as_slice() else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(err("expected <u> <v> <edge_type>"));
        };
        let (&u, &v) = (
            index.get(u).ok_or_else(|| err("unknown node"))?,
            index.get(v).ok_or_else(|| err("unknown node"))?,
        );
        let r = graph
            .schema()
            .edge_type_index(r)
            .ok_or_else(|| err("unknown edge type"))?;
        out.insert(
            graph
                .canonical_edge(u, v, r)
                .ok_or_else(|| err("illegal edge"))?,
        );
    }
    Ok(Some(out))
}
