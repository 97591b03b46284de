//! Classification heads and their losses.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hin::{HeteroGraph, Task};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct HeadParameters {
    pub hgc_w1: ParamId,
    pub hgc_b1: ParamId,
    pub hgc_w2: ParamId,
    pub hgc_b2: ParamId,
    pub fbc_w: ParamId,
    pub fbc_b: ParamId,
}

impl HeadParameters {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Self {
        HeadParameters {
            hgc_w1: store.add("hgc.w1", Tensor::xavier_uniform(dim, dim, rng)),
            hgc_b1: store.add("hgc.b1", Tensor::zeros(1, dim)),
            hgc_w2: store.add("hgc.w2", Tensor::xavier_uniform(dim, classes, rng)),
            hgc_b2: store.add("hgc.b2", Tensor::zeros(1, classes)),
            fbc_w: store.add("fbc.w", Tensor::xavier_uniform(dim, classes, rng)),
            fbc_b: store.add("fbc.b", Tensor::zeros(1, classes)),
        }
    }
}

/// Two-layer classifier on encoder outputs.
pub fn hgc_logits(tape: &mut Tape, bound: &BoundParams, p: &HeadParameters, z: Var) -> Result<Var> {
    let h = tape.matmul(z, bound[p.hgc_w1])?;
    let h = tape.add(h, bound[p.hgc_b1])?;
    let h = tape.elu(h);
    let o = tape.matmul(h, bound[p.hgc_w2])?;
    tape.add(o, bound[p.hgc_b2])
}

/// Linear classifier on projected features, bypassing message passing.
pub fn fbc_logits(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &HeadParameters,
    h_s: Var,
) -> Result<Var> {
    let o = tape.matmul(h_s, bound[p.fbc_w])?;
    tape.add(o, bound[p.fbc_b])
}

/// One-hot (multiclass) or multi-hot (multilabel) targets for `nodes`.
pub fn label_matrix(graph: &HeteroGraph, nodes: &[usize]) -> Result<Tensor> {
    let classes = graph.schema().num_classes();
    let mut y = Tensor::zeros(nodes.len(), classes);
    for (i, &u) in nodes.iter().enumerate() {
        let labels = graph
            .label(u)
            .ok_or_else(|| Error::Graph(format!("node {} has no label", graph.node_id(u))))?;
        for &c in labels {
            if c >= classes {
                return Err(Error::Graph(format!(
                    "label {c} of node {} is outside 0..{classes}",
                    graph.node_id(u)
                )));
            }
            y.data_mut()[i * classes + c] = 1.0;
        }
    }
    Ok(y)
}

/// Mean cross-entropy (multiclass) or mean binary cross-entropy over all
/// node-class entries (multilabel).
pub fn classification_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &Tensor,
    task: Task,
) -> Result<Var> {
    let shape = tape.value(logits).shape().to_vec();
    if shape != targets.shape() {
        return Err(Error::Shape {
            op: "classification_loss",
            lhs: shape,
            rhs: targets.shape().to_vec(),
        });
    }
    if targets.rows() == 0 {
        return Err(Error::Empty("labelled nodes"));
    }
    let y = tape.constant(targets.clone());
    match task {
        Task::Multiclass => {
            let ls = tape.log_softmax_rows(logits)?;
            let picked = tape.mul(ls, y)?;
            let s = tape.sum(picked);
            Ok(tape.scale(s, -1.0 / targets.rows() as f64))
        }
        Task::Multilabel => {
            let sp = tape.softplus(logits);
            let yx = tape.mul(y, logits)?;
            let l = tape.sub(sp, yx)?;
            Ok(tape.mean(l))
        }
    }
}

/// Hard predictions: argmax per row, or every class with sigmoid at least 0.5.
pub fn predict(logits: &Tensor, task: Task) -> Vec<Vec<usize>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            match task {
                Task::Multiclass => {
                    let mut best = 0;
                    for (c, &x) in row.iter().enumerate() {
                        if x > row[best] {
                            best = c;
                        }
                    }
                    vec![best]
                }
                Task::Multilabel => (0..row.len()).filter(|&c| row[c] >= 0.0).collect(),
            }
        })
        .collect()
}
