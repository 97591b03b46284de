//! Full-batch joint training with validation-based early stopping.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{classification_loss, label_matrix, predict};
use crate::hin::{HeteroGraph, Task};
use crate::metrics::{f1_scores, Metrics};
use crate::model::{GraphContext, Model, ModelConfig};
use crate::tensor::{AdamW, AdamWConfig, ParamStore, Tape, Var};
use crate::tgd::{reconstruction_loss, FocalConfig, PairSampling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub focal: FocalConfig,
    pub optim: AdamWConfig,
    /// Weight of the reconstruction loss.
    pub alpha: f64,
    /// Weight of the feature-based classifier loss.
    pub beta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Expected task; checked against the graph schema when set.
    pub task: Option<Task>,
    pub sampling: PairSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            focal: FocalConfig::default(),
            optim: AdamWConfig::default(),
            alpha: 0.3,
            beta: 0.1,
            max_epochs: 300,
            patience: 30,
            seed: 0,
            task: None,
            sampling: PairSampling::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(self.alpha, self.beta)?;
        self.model.validate()?;
        self.focal.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimiser settings {o:?}")));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0) {
        return Err(Error::Config(format!(
            "loss weights need alpha, beta >= 0 and alpha + beta < 1 (got {alpha}, {beta})"
        )));
    }
    Ok(())
}

/// `alpha * l_ae + beta * l_fb + (1 - alpha - beta) * l_hgnn`.
pub fn joint_loss(l_ae: f64, l_fb: f64, l_hgnn: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_weights(alpha, beta)?;
    Ok(alpha * l_ae + beta * l_fb + (1.0 - alpha - beta) * l_hgnn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l_ae: f64,
    pub l_fb: f64,
    pub l_hgnn: f64,
    pub val_macro: f64,
    pub val_micro: f64,
    #[serde(skip)]
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_epoch: usize,
    pub test_macro: f64,
    pub test_micro: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub valid: Metrics,
    pub test: Metrics,
    pub seconds: f64,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn summary(&self, timing: bool) -> Summary {
        Summary {
            best_epoch: self.best_epoch,
            test_macro: self.test.macro_f1,
            test_micro: self.test.micro_f1,
            seconds: timing.then_some(self.seconds),
        }
    }

    /// One JSON object per epoch followed by the summary line. Wall time is
    /// only included when `timing` is set so that repeated runs are
    /// byte-identical otherwise.
    pub fn write_jsonl(&self, mut out: impl Write, timing: bool) -> Result<()> {
        let io = |e| Error::io("<report>", e);
        for r in &self.epochs {
            writeln!(out, "{}", serde_json::to_string(r).expect("plain struct")).map_err(io)?;
        }
        writeln!(
            out,
            "{}",
            serde_json::to_string(&self.summary(timing)).expect("plain struct")
        )
        .map_err(io)
    }
}

/// Label targets and local row indices of one split.
struct SplitData {
    rows: Arc<[usize]>,
    targets: crate::tensor::Tensor,
    truth: Vec<Vec<usize>>,
}

impl SplitData {
    fn new(graph: &HeteroGraph, nodes: &[usize]) -> Result<Self> {
        let offset = graph.target_range().start;
        Ok(SplitData {
            rows: nodes.iter().map(|&u| u - offset).collect(),
            targets: label_matrix(graph, nodes)?,
            truth: nodes
                .iter()
                .map(|&u| graph.label(u).unwrap_or(&[]).to_vec())
                .collect(),
        })
    }
}

fn split_loss(tape: &mut Tape, logits: Var, split: &SplitData, task: Task) -> Result<Var> {
    let rows = tape.gather_rows(logits, split.rows.clone())?;
    classification_loss(tape, rows, &split.targets, task)
}

/// Validation metrics and HGC loss with gradients disabled.
fn validate_split(model: &Model, ctx: &GraphContext, split: &SplitData) -> Result<(Metrics, f64)> {
    let mut tape = Tape::no_grad();
    let f = model.forward(&mut tape, ctx, None)?;
    let loss = split_loss(&mut tape, f.hgc, split, ctx.task)?;
    let loss = tape.value(loss).item();
    let rows = tape.gather_rows(f.hgc, split.rows.clone())?;
    let pred = predict(tape.value(rows), ctx.task);
    Ok((f1_scores(&pred, &split.truth, ctx.num_classes)?, loss))
}

/// HGC metrics on `nodes` (global indices of target-type nodes).
pub fn evaluate(
    model: &Model,
    graph: &HeteroGraph,
    ctx: &GraphContext,
    nodes: &[usize],
) -> Result<Metrics> {
    if nodes.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(validate_split(model, ctx, &SplitData::new(graph, nodes)?)?.0)
}

fn better(a: &EpochRecord, b: &EpochRecord) -> bool {
    let key = |r: &EpochRecord| (r.val_macro, r.val_micro, -r.val_loss);
    let (ka, kb) = (key(a), key(b));
    ka.0 > kb.0 || (ka.0 == kb.0 && (ka.1 > kb.1 || (ka.1 == kb.1 && ka.2 > kb.2)))
}

/// Trains on the graph's own edges.
pub fn train(graph: &HeteroGraph, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with_context(graph, &GraphContext::new(graph), cfg)
}

/// Trains with message passing over `ctx.message`, which may differ from the
/// graph's edges after augmentation.
pub fn train_with_context(
    graph: &HeteroGraph,
    ctx: &GraphContext,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    train_observed(graph, ctx, cfg, |_| {})
}

/// [`train_with_context`] with a callback invoked after every epoch.
pub fn train_observed(
    graph: &HeteroGraph,
    ctx: &GraphContext,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    if let Some(task) = cfg.task {
        if task != ctx.task {
            return Err(Error::Config(format!(
                "configured task {} does not match the dataset task {}",
                task.as_str(),
                ctx.task.as_str()
            )));
        }
    }
    let splits = graph.splits();
    if splits.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if splits.valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let train_split = SplitData::new(graph, &splits.train)?;
    let valid_split = SplitData::new(graph, &splits.valid)?;

    let mut model = Model::init(ctx, &cfg.model, cfg.seed)?;
    let mut opt = AdamW::new(cfg.optim, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let gamma = 1.0 - cfg.alpha - cfg.beta;

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, ParamStore)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, ctx, Some(&mut rng))?;
        let l_ae = reconstruction_loss(
            &mut tape,
            &f.z_prime,
            &ctx.pairs,
            &cfg.focal,
            cfg.sampling,
            Some(&mut rng),
        )?;
        let l_fb = split_loss(&mut tape, f.fbc, &train_split, ctx.task)?;
        let l_hgnn = split_loss(&mut tape, f.hgc, &train_split, ctx.task)?;
        let a = tape.scale(l_ae, cfg.alpha);
        let b = tape.scale(l_fb, cfg.beta);
        let c = tape.scale(l_hgnn, gamma);
        let ab = tape.add(a, b)?;
        let loss = tape.add(ab, c)?;
        let values = [loss, l_ae, l_fb, l_hgnn].map(|v| tape.value(v).item());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { epoch });
        }
        let bound = f.bound;
        let mut grads = tape.backward(loss)?;
        let grads = bound.collect_grads(&model.store, &mut grads);
        opt.step(&mut model.store, &grads);

        let (val, val_loss) = validate_split(&model, ctx, &valid_split)?;
        let record = EpochRecord {
            epoch,
            loss: values[0],
            l_ae: values[1],
            l_fb: values[2],
            l_hgnn: values[3],
            val_macro: val.macro_f1,
            val_micro: val.micro_f1,
            val_loss,
        };
        on_epoch(&record);
        let improved = match &best {
            None => true,
            Some((e, _)) => better(&record, &epochs[*e - 1]),
        };
        epochs.push(record);
        if improved {
            best = Some((epoch, model.store.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, store) = best.expect("at least one epoch ran");
    model.store = store;
    let valid = Metrics {
        macro_f1: epochs[best_epoch - 1].val_macro,
        micro_f1: epochs[best_epoch - 1].val_micro,
    };
    let test = if splits.test.is_empty() {
        Metrics::default()
    } else {
        evaluate(&model, graph, ctx, &splits.test)?
    };
    let report = TrainReport {
        epochs,
        best_epoch,
        valid,
        test,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_loss_examples() {
        assert!((joint_loss(1.0, 1.0, 1.0, 0.3, 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert!((joint_loss(0.5, 1.0, 2.0, 0.2, 0.1).unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(joint_loss(9.0, 9.0, 0.25, 0.0, 0.0).unwrap(), 0.25);
        assert!(joint_loss(1.0, 1.0, 1.0, 0.6, 0.5).is_err());
        assert!(joint_loss(1.0, 1.0, 1.0, -0.1, 0.5).is_err());
    }

    #[test]
    fn joint_loss_is_homogeneous() {
        let l = joint_loss(0.7, 1.3, 2.1, 0.25, 0.15).unwrap();
        let l3 = joint_loss(2.1, 3.9, 6.3, 0.25, 0.15).unwrap();
        assert!((3.0 * l - l3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            alpha: 0.6,
            beta: 0.5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            patience: 301,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn selection_prefers_macro_then_micro_then_loss_then_earlier() {
        let r = |m: f64, u: f64, l: f64| EpochRecord {
            epoch: 0,
            loss: 0.0,
            l_ae: 0.0,
            l_fb: 0.0,
            l_hgnn: 0.0,
            val_macro: m,
            val_micro: u,
            val_loss: l,
        };
        assert!(better(&r(0.6, 0.1, 9.0), &r(0.5, 0.9, 0.0)));
        assert!(better(&r(0.5, 0.6, 9.0), &r(0.5, 0.5, 0.0)));
        assert!(better(&r(0.5, 0.5, 0.1), &r(0.5, 0.5, 0.2)));
        assert!(!better(&r(0.5, 0.5, 0.2), &r(0.5, 0.5, 0.2)));
    }
}
