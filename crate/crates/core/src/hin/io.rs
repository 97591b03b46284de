//! Tab-separated dataset directories.
//!
//! ```text
//! schema.tsv   nodetype <name> | edgetype <name> <type_u> <type_v> | target <name> <classes> <multiclass|multilabel>
//! nodes.tsv    <node_id> <node_type> [f1 f2 ...]
//! edges.tsv    <u> <v> <edge_type>
//! labels.tsv   <node_id> <label> | <node_id> <l1,l2,...>
//! splits.tsv   <node_id> <train|valid|test>      (optional)
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::graph::{GraphBuilder, HeteroGraph, SplitKind};
use super::schema::{EdgeTypeDef, GraphSchema, Task};
use crate::error::{Error, Result};

pub const SCHEMA_FILE: &str = "schema.tsv";
pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with 1-based line numbers, split on tabs.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            return None;
        }
        Some((i + 1, trimmed.split('\t').map(str::trim).collect()))
    })
}

pub fn parse_schema(text: &str) -> Result<GraphSchema> {
    let mut node_types: Vec<String> = Vec::new();
    let mut pending_edges: Vec<(usize, String, String, String)> = Vec::new();
    let mut target: Option<(usize, String, usize, Task)> = None;
    for (line, fields) in text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#'))
            .then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    }) {
        let err = |m: String| Error::data(SCHEMA_FILE, line, m);
        match fields.as_slice() {
            ["nodetype", name] => node_types.push(name.to_string()),
            ["edgetype", name, tu, tv] => {
                pending_edges.push((line, name.to_string(), tu.to_string(), tv.to_string()))
            }
            ["target", name, classes, task] => {
                let classes = classes
                    .parse()
                    .map_err(|_| err(format!("bad class count {classes:?}")))?;
                let task = task
                    .parse()
                    .map_err(|_| err(format!("bad task {task:?}")))?;
                target = Some((line, name.to_string(), classes, task));
            }
            _ => {
                return Err(err(format!(
                    "unrecognised schema line: {}",
                    fields.join(" ")
                )))
            }
        }
    }
    let mut edge_types = Vec::new();
    for (line, name, tu, tv) in pending_edges {
        let find = |t: &str| {
            node_types
                .iter()
                .position(|n| n == t)
                .ok_or_else(|| Error::data(SCHEMA_FILE, line, format!("unknown node type {t:?}")))
        };
        edge_types.push(EdgeTypeDef {
            name,
            source: find(&tu)?,
            target: find(&tv)?,
        });
    }
    let (line, name, classes, task) =
        target.ok_or_else(|| Error::data(SCHEMA_FILE, 0, "missing `target` line"))?;
    let target_type = node_types
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::data(SCHEMA_FILE, line, format!("unknown target type {name:?}")))?;
    GraphSchema::new(node_types, edge_types, target_type, classes, task).map_err(|e| match e {
        Error::Graph(m) => Error::data(SCHEMA_FILE, line, m),
        other => other,
    })
}

/// Loads a dataset directory; missing splits are drawn with seed 0.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<HeteroGraph> {
    load_graph_with_seed(dir, 0)
}

pub fn load_graph_with_seed(dir: impl AsRef<Path>, split_seed: u64) -> Result<HeteroGraph> {
    let dir = dir.as_ref();
    let schema = parse_schema(&read(dir, SCHEMA_FILE)?)?;
    let nodes = read(dir, NODES_FILE)?;
    let edges = read(dir, EDGES_FILE)?;
    let labels = read(dir, LABELS_FILE)?;
    let splits = match fs::read_to_string(dir.join(SPLITS_FILE)) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(dir.join(SPLITS_FILE), e)),
    };

    let mut b = GraphBuilder::new(schema);

    for (line, f) in records(&nodes) {
        let err = |m: String| Error::data(NODES_FILE, line, m);
        if f.len() < 2 {
            return Err(err("expected <node_id> <node_type> [features...]".into()));
        }
        let feats: Vec<f64> = f[2..]
            .iter()
            .flat_map(|s| s.split(|c: char| c.is_whitespace() || c == ','))
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| err(format!("bad feature value {s:?}")))
            })
            .collect::<Result<_>>()?;
        let feats = (!feats.is_empty()).then_some(feats);
        b.add_node(f[0], f[1], feats).map_err(err)?;
    }

    for (line, f) in records(&edges) {
        let err = |m: String| Error::data(EDGES_FILE, line, m);
        let [u, v, r] = f.as_slice() else {
            return Err(err("expected <u> <v> <edge_type>".into()));
        };
        if !b.add_edge(u, v, r).map_err(err)? {
            return Err(err(format!("duplicate edge ({u}, {v}, {r})")));
        }
    }

    for (line, f) in records(&labels) {
        let err = |m: String| Error::data(LABELS_FILE, line, m);
        let [id, l] = f.as_slice() else {
            return Err(err("expected <node_id> <label>".into()));
        };
        let classes = l
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| err(format!("bad label {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        b.set_label(id, classes).map_err(err)?;
    }

    if let Some(splits) = splits {
        for (line, f) in records(&splits) {
            let err = |m: String| Error::data(SPLITS_FILE, line, m);
            let [id, kind] = f.as_slice() else {
                return Err(err("expected <node_id> <train|valid|test>".into()));
            };
            let kind = match *kind {
                "train" => SplitKind::Train,
                "valid" => SplitKind::Valid,
                "test" => SplitKind::Test,
                other => return Err(err(format!("unknown split {other:?}"))),
            };
            b.set_split(id, kind).map_err(err)?;
        }
    }

    b.build(split_seed)
}

pub fn schema_to_string(schema: &GraphSchema) -> String {
    let mut s = String::new();
    for t in schema.node_types() {
        let _ = writeln!(s, "nodetype\t{t}");
    }
    for e in schema.edge_types() {
        let names = schema.node_types();
        let _ = writeln!(
            s,
            "edgetype\t{}\t{}\t{}",
            e.name, names[e.source], names[e.target]
        );
    }
    let _ = writeln!(
        s,
        "target\t{}\t{}\t{}",
        schema.node_types()[schema.target_type()],
        schema.num_classes(),
        schema.task().as_str()
    );
    s
}

pub fn save_graph(graph: &HeteroGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    let schema = graph.schema();
    write(SCHEMA_FILE, schema_to_string(schema))?;

    let mut nodes = String::new();
    for t in 0..schema.num_node_types() {
        let name = &schema.node_types()[t];
        let feats = graph.features(t);
        for (local, u) in graph.type_range(t).enumerate() {
            let _ = write!(nodes, "{}\t{name}", graph.node_id(u));
            if !graph.is_featureless(t) {
                for x in feats.row(local) {
                    let _ = write!(nodes, "\t{x}");
                }
            }
            nodes.push('\n');
        }
    }
    write(NODES_FILE, nodes)?;

    let mut edges = String::new();
    for e in graph.edges() {
        let _ = writeln!(
            edges,
            "{}\t{}\t{}",
            graph.node_id(e.u),
            graph.node_id(e.v),
            schema.edge_types()[e.etype].name
        );
    }
    write(EDGES_FILE, edges)?;

    let mut labels = String::new();
    for u in 0..graph.num_nodes() {
        if let Some(l) = graph.label(u) {
            let joined: Vec<String> = l.iter().map(usize::to_string).collect();
            let _ = writeln!(labels, "{}\t{}", graph.node_id(u), joined.join(","));
        }
    }
    write(LABELS_FILE, labels)?;

    let mut splits = String::new();
    let s = graph.splits();
    for (kind, list) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
        for &u in list {
            let _ = writeln!(splits, "{}\t{kind}", graph.node_id(u));
        }
    }
    write(SPLITS_FILE, splits)
}
