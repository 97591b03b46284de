//! Micro- and Macro-F1 over hard predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// `2TP / (2TP + FP + FN)`, or 0 when every count is zero.
pub fn class_f1(c: ClassCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn micro_f1(tp: usize, fp: usize, fn_: usize) -> Result<f64> {
    if tp + fp + fn_ == 0 {
        return Err(Error::Domain {
            op: "micro_f1",
            message: "all counts are zero".into(),
        });
    }
    Ok(class_f1(ClassCounts { tp, fp, fn_ }))
}

pub fn macro_f1(per_class: &[f64]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::Empty("per-class F1 list"));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Per-class counts; each prediction and truth is a set of class indices.
pub fn class_counts(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    classes: usize,
) -> Result<Vec<ClassCounts>> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            op: "class_counts",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let mut counts = vec![ClassCounts::default(); classes];
    for (p, t) in pred.iter().zip(truth) {
        if let Some(&c) = p.iter().chain(t).find(|&&c| c >= classes) {
            return Err(Error::Domain {
                op: "class_counts",
                message: format!("class {c} outside 0..{classes}"),
            });
        }
        for c in 0..classes {
            match (p.contains(&c), t.contains(&c)) {
                (true, true) => counts[c].tp += 1,
                (true, false) => counts[c].fp += 1,
                (false, true) => counts[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(counts)
}

pub fn f1_scores(pred: &[Vec<usize>], truth: &[Vec<usize>], classes: usize) -> Result<Metrics> {
    if pred.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let counts = class_counts(pred, truth, classes)?;
    let per_class: Vec<f64> = counts.iter().copied().map(class_f1).collect();
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    Ok(Metrics {
        macro_f1: macro_f1(&per_class)?,
        micro_f1: micro_f1(tp, fp, fn_)?,
    })
}
