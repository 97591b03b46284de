//! Type-aware graph decoder: per-type MLPs, inner-product edge scores and
//! focal reconstruction loss over legal candidate pairs.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{HeteroGraph, LegalPairSet};
use crate::model::GraphContext;
use crate::tensor::{kernels, BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalConfig {
    pub gamma: f64,
    pub tau_pos: f64,
    pub tau_neg: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            gamma: 2.0,
            tau_pos: 0.75,
            tau_neg: 0.25,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.gamma) || !ok(self.tau_pos) || !ok(self.tau_neg) {
            return Err(Error::Config(format!(
                "focal parameters must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which candidate pairs enter the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum PairSampling {
    /// Every legal pair.
    #[default]
    Full,
    /// All positives plus `ratio` uniform negatives per positive, reweighted
    /// so the expectation equals the full loss.
    Sampled { ratio: usize },
}

/// Per-type MLP `relu(Z W_t + b_t)`, present for types in some legal pair.
#[derive(Debug, Clone)]
pub struct DecoderParameters {
    pub mlp: Vec<Option<(ParamId, ParamId)>>,
}

impl DecoderParameters {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        num_node_types: usize,
        decoder_types: &[usize],
        dim: usize,
    ) -> Self {
        let mlp = (0..num_node_types)
            .map(|t| {
                decoder_types.contains(&t).then(|| {
                    (
                        store.add(format!("dec.{t}.w"), Tensor::xavier_uniform(dim, dim, rng)),
                        store.add(format!("dec.{t}.b"), Tensor::zeros(1, dim)),
                    )
                })
            })
            .collect();
        DecoderParameters { mlp }
    }
}

/// `Z'` split by node type; `None` for types without a decoder MLP.
pub fn type_transform(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &DecoderParameters,
    ctx: &GraphContext,
    z: Var,
) -> Result<Vec<Option<Var>>> {
    let mut out = vec![None; ctx.type_ranges.len()];
    for t in ctx.decoder_types() {
        let (w, b) = params
            .mlp
            .get(t)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Graph(format!("missing decoder MLP for node type {t}")))?;
        let r = &ctx.type_ranges[t];
        let zt = tape.slice_rows(z, r.start, r.end)?;
        let h = tape.matmul(zt, bound[w])?;
        let h = tape.add(h, bound[b])?;
        out[t] = Some(tape.relu(h));
    }
    Ok(out)
}

/// `sigma(z_u . z_v)`, clamped away from 0 and 1.
pub fn edge_probability(zu: &[f64], zv: &[f64]) -> Result<f64> {
    if zu.len() != zv.len() {
        return Err(Error::Shape {
            op: "edge_probability",
            lhs: vec![zu.len()],
            rhs: vec![zv.len()],
        });
    }
    Ok(kernels::sigmoid(kernels::dot(zu, zv)).clamp(PROB_EPS, 1.0 - PROB_EPS))
}

/// Focal loss of a single pair with label `a` and predicted probability `p`.
pub fn focal_loss(a: f64, p: f64, cfg: &FocalConfig) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (pt, tau) = if a > 0.5 {
        (p, cfg.tau_pos)
    } else {
        (1.0 - p, cfg.tau_neg)
    };
    -tau * (1.0 - pt).powf(cfg.gamma) * pt.ln()
}

/// Sum over elements of the focal loss of `logits` against 0/1 `labels`, each
/// term multiplied by `weights` when given.
pub fn focal_sum(
    tape: &mut Tape,
    logits: Var,
    labels: &Tensor,
    weights: Option<&Tensor>,
    cfg: &FocalConfig,
) -> Result<Var> {
    let shape = tape.value(logits).shape().to_vec();
    if shape != labels.shape() {
        return Err(Error::Shape {
            op: "focal_sum",
            lhs: shape,
            rhs: labels.shape().to_vec(),
        });
    }
    let n = labels.numel();
    let mut c0 = Vec::with_capacity(n);
    let mut c1 = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for (k, &a) in labels.data().iter().enumerate() {
        let pos = a > 0.5;
        c0.push(if pos { 0.0 } else { 1.0 });
        c1.push(if pos { 1.0 } else { -1.0 });
        let w = weights.map_or(1.0, |w| w.data()[k]);
        tau.push(-w * if pos { cfg.tau_pos } else { cfg.tau_neg });
    }
    let c0 = tape.constant(Tensor::new(shape.clone(), c0)?);
    let c1 = tape.constant(Tensor::new(shape.clone(), c1)?);
    let tau = tape.constant(Tensor::new(shape, tau)?);

    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let signed = tape.mul(c1, p)?;
    let pt = tape.add(c0, signed)?;
    let log_pt = tape.log(pt)?;
    let mut term = tape.mul(tau, log_pt)?;
    if cfg.gamma != 0.0 {
        let neg = tape.scale(pt, -1.0);
        let one_minus = tape.offset(neg, 1.0);
        let modulating = tape.power(one_minus, cfg.gamma)?;
        term = tape.mul(term, modulating)?;
    }
    Ok(tape.sum(term))
}

/// `L_AE`, normalised by the total number of legal candidates.
pub fn reconstruction_loss(
    tape: &mut Tape,
    z_prime: &[Option<Var>],
    pairs: &LegalPairSet,
    cfg: &FocalConfig,
    sampling: PairSampling,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let total = pairs.total_candidates();
    if total == 0 {
        return Err(Error::Empty("legal candidate pairs"));
    }
    let mut rng = rng;
    let mut parts = Vec::with_capacity(pairs.num_blocks());
    for block in pairs.blocks() {
        if block.is_empty() {
            continue;
        }
        let missing = |t| Error::Graph(format!("missing decoder MLP for node type {t}"));
        let zu = z_prime[block.type_u].ok_or_else(|| missing(block.type_u))?;
        let zv = z_prime[block.type_v].ok_or_else(|| missing(block.type_v))?;
        let part = match sampling {
            PairSampling::Full => {
                let zvt = tape.transpose(zv)?;
                let logits = tape.matmul(zu, zvt)?;
                let labels = Tensor::from_rows(block.n_u, block.n_v, block.labels.clone())?;
                focal_sum(tape, logits, &labels, None, cfg)?
            }
            PairSampling::Sampled { ratio } => {
                let rng = rng.as_deref_mut().ok_or(Error::Config(
                    "sampled reconstruction needs a random source".into(),
                ))?;
                let pos: Vec<usize> = (0..block.len())
                    .filter(|&k| block.labels[k] > 0.5)
                    .collect();
                let n_neg = block.len() - pos.len();
                let draws = if n_neg == 0 {
                    0
                } else {
                    ratio.max(1) * pos.len().max(1)
                };
                let mut idx = pos.clone();
                while idx.len() < pos.len() + draws {
                    let k = rng.random_range(0..block.len());
                    if block.labels[k] <= 0.5 {
                        idx.push(k);
                    }
                }
                let neg_weight = if draws == 0 {
                    0.0
                } else {
                    n_neg as f64 / draws as f64
                };
                let ia: Arc<[usize]> = idx.iter().map(|&k| k / block.n_v).collect();
                let ib: Arc<[usize]> = idx.iter().map(|&k| k % block.n_v).collect();
                let labels: Vec<f64> = idx.iter().map(|&k| block.labels[k]).collect();
                let weights: Vec<f64> = labels
                    .iter()
                    .map(|&a| if a > 0.5 { 1.0 } else { neg_weight })
                    .collect();
                let m = idx.len();
                let logits = tape.pair_dot(zu, zv, ia, ib)?;
                focal_sum(
                    tape,
                    logits,
                    &Tensor::from_rows(m, 1, labels)?,
                    Some(&Tensor::from_rows(m, 1, weights)?),
                    cfg,
                )?
            }
        };
        parts.push(part);
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(tape.scale(acc, 1.0 / total as f64))
}

/// Predicted probabilities for every legal pair, aligned with the blocks of
/// the pair set they were computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePredictionSet {
    pub pairs: LegalPairSet,
    pub probs: Vec<Vec<f64>>,
}

impl EdgePredictionSet {
    /// Scores every pair from per-type decoder outputs.
    pub fn from_embeddings(pairs: &LegalPairSet, z_prime: &[Option<Tensor>]) -> Result<Self> {
        let mut probs = Vec::with_capacity(pairs.num_blocks());
        for block in pairs.blocks() {
            let missing = |t| Error::Graph(format!("missing decoder MLP for node type {t}"));
            let zu = z_prime[block.type_u]
                .as_ref()
                .ok_or_else(|| missing(block.type_u))?;
            let zv = z_prime[block.type_v]
                .as_ref()
                .ok_or_else(|| missing(block.type_v))?;
            let mut p = Vec::with_capacity(block.len());
            for i in 0..block.n_u {
                for j in 0..block.n_v {
                    p.push(edge_probability(zu.row(i), zv.row(j))?);
                }
            }
            probs.push(p);
        }
        Ok(EdgePredictionSet {
            pairs: pairs.clone(),
            probs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.total_candidates()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(block, global u, global v, label, probability)` for every pair.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64, f64)> + '_ {
        self.pairs
            .blocks()
            .iter()
            .enumerate()
            .flat_map(move |(b, block)| {
                (0..block.len()).map(move |k| {
                    let (u, v) = block.pair(k);
                    (b, u, v, block.labels[k], self.probs[b][k])
                })
            })
    }

    /// Value of the reconstruction loss at these predictions.
    pub fn reconstruction_loss(&self, cfg: &FocalConfig) -> Result<f64> {
        let total = self.len();
        if total == 0 {
            return Err(Error::Empty("legal candidate pairs"));
        }
        let sum: f64 = self
            .iter()
            .map(|(_, _, _, a, p)| focal_loss(a, p, cfg))
            .sum();
        Ok(sum / total as f64)
    }

    /// Writes `<edge_type> <u> <v> <a> <p>` rows sorted by edge type, then by
    /// descending probability, then by node pair. Same-type blocks list each
    /// unordered pair once.
    pub fn write_tsv(&self, graph: &HeteroGraph, mut out: impl Write) -> Result<()> {
        let schema = graph.schema();
        let mut rows: Vec<(&str, usize, usize, f64, f64)> = self
            .iter()
            .filter(|&(b, u, v, _, _)| !self.pairs.blocks()[b].same_type() || u <= v)
            .map(|(b, u, v, a, p)| {
                let et = self.pairs.blocks()[b].edge_types[0];
                (schema.edge_types()[et].name.as_str(), u, v, a, p)
            })
            .collect();
        rows.sort_by(|x, y| {
            x.0.cmp(y.0)
                .then(y.4.total_cmp(&x.4))
                .then((x.1, x.2).cmp(&(y.1, y.2)))
        });
        let io = |e| Error::io("<predictions>", e);
        writeln!(out, "edge_type\tu\tv\ta\tprob").map_err(io)?;
        for (et, u, v, a, p) in rows {
            writeln!(
                out,
                "{et}\t{}\t{}\t{}\t{p}",
                graph.node_id(u),
                graph.node_id(v),
                a as u8
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn focal_reference_values() {
        let cfg = FocalConfig::default();
        let want = -0.75 * 0.25 * 0.5f64.ln();
        assert!((focal_loss(1.0, 0.5, &cfg) - want).abs() < 1e-15);
        assert!((focal_loss(0.0, 0.5, &cfg) - want / 3.0).abs() < 1e-15);
        let ce = FocalConfig {
            gamma: 0.0,
            tau_pos: 1.0,
            tau_neg: 1.0,
        };
        assert!((focal_loss(1.0, 0.3, &ce) + 0.3f64.ln()).abs() < 1e-15);
        assert!((focal_loss(0.0, 0.3, &ce) + 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn focal_is_finite_at_saturation() {
        let cfg = FocalConfig::default();
        for p in [0.0, 1.0] {
            for a in [0.0, 1.0] {
                assert!(focal_loss(a, p, &cfg).is_finite());
            }
        }
    }

    #[test]
    fn tape_focal_matches_scalar_and_gradient() {
        let cfg = FocalConfig::default();
        let x = Tensor::from_rows(2, 3, vec![0.0, 1.5, -2.0, 0.3, -0.7, 4.0]).unwrap();
        let labels = Tensor::from_rows(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let s = focal_sum(&mut tape, v, &labels, None, &cfg).unwrap();
        let want: f64 = x
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&x, &a)| focal_loss(a, kernels::sigmoid(x), &cfg))
            .sum();
        assert!((tape.value(s).item() - want).abs() < 1e-12);
        let err = grad_check(|t, v| focal_sum(t, v, &labels, None, &cfg), &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn focal_derivative_at_zero_logit() {
        let cfg = FocalConfig::default();
        let h = 1e-6;
        let fd = (focal_loss(1.0, kernels::sigmoid(h), &cfg)
            - focal_loss(1.0, kernels::sigmoid(-h), &cfg))
            / (2.0 * h);
        let x = Tensor::scalar(0.0);
        let labels = Tensor::scalar(1.0);
        let mut tape = Tape::new();
        let v = tape.leaf(x, true);
        let s = focal_sum(&mut tape, v, &labels, None, &cfg).unwrap();
        let g = tape.backward(s).unwrap();
        assert!((g.get(v).unwrap().item() - fd).abs() < 1e-6);
    }

    #[test]
    fn edge_probability_checks_length() {
        assert!(edge_probability(&[1.0], &[1.0, 2.0]).is_err());
        assert!((edge_probability(&[0.0], &[3.0]).unwrap() - 0.5).abs() < 1e-15);
    }
}
