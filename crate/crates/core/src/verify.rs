//! Finite-difference verification of every loss term on a small fixture.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heads::{classification_loss, label_matrix};
use crate::hin::{EdgeTypeDef, GraphBuilder, GraphSchema, HeteroGraph, SplitKind, Task};
use crate::model::{GraphContext, Model, ModelConfig};
use crate::tensor::{grad_check_on, BoundParams, Tape, Var};
use crate::tgd::{reconstruction_loss, FocalConfig, PairSampling};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Six nodes of three types: three labelled targets, two featureless nodes
/// and one extra typed node, joined by three edge types.
pub fn fixture_graph() -> HeteroGraph {
    let schema = GraphSchema::new(
        vec!["A".into(), "B".into(), "C".into()],
        vec![
            EdgeTypeDef {
                name: "AB".into(),
                source: 0,
                target: 1,
            },
            EdgeTypeDef {
                name: "AC".into(),
                source: 0,
                target: 2,
            },
            EdgeTypeDef {
                name: "AA".into(),
                source: 0,
                target: 0,
            },
        ],
        0,
        2,
        Task::Multiclass,
    )
    .expect("fixture schema");
    let mut b = GraphBuilder::new(schema);
    let feats = [[0.5, -1.0, 0.2], [-0.3, 0.8, 1.1], [1.4, 0.1, -0.6]];
    for (i, f) in feats.iter().enumerate() {
        b.add_node(&format!("a{i}"), "A", Some(f.to_vec()))
            .expect("fixture node");
    }
    b.add_node("b0", "B", None).expect("fixture node");
    b.add_node("b1", "B", None).expect("fixture node");
    b.add_node("c0", "C", Some(vec![0.7, -0.4]))
        .expect("fixture node");
    for (u, v, r) in [
        ("a0", "b0", "AB"),
        ("a1", "b0", "AB"),
        ("a2", "b1", "AB"),
        ("a0", "c0", "AC"),
        ("a0", "a1", "AA"),
    ] {
        b.add_edge(u, v, r).expect("fixture edge");
    }
    for (id, c, split) in [
        ("a0", 0, SplitKind::Train),
        ("a1", 1, SplitKind::Train),
        ("a2", 0, SplitKind::Valid),
    ] {
        b.set_label(id, vec![c]).expect("fixture label");
        b.set_split(id, split).expect("fixture split");
    }
    b.build(0).expect("fixture graph")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    LAe,
    LFb,
    LHgnn,
    Joint,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [
        LossTerm::LAe,
        LossTerm::LFb,
        LossTerm::LHgnn,
        LossTerm::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::LAe => "l_ae",
            LossTerm::LFb => "l_fb",
            LossTerm::LHgnn => "l_hgnn",
            LossTerm::Joint => "loss",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub model: ModelConfig,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Negative control: corrupt one backward rule.
    pub inject_fault: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: DEFAULT_EPS,
            model: ModelConfig {
                dim: 8,
                heads: 2,
                layers: 2,
                dropout: 0.0,
            },
            alpha: 0.3,
            beta: 0.1,
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermError {
    pub term: LossTerm,
    pub max_rel_error: f64,
}

fn term_loss(
    tape: &mut Tape,
    vars: &[Var],
    model: &Model,
    ctx: &GraphContext,
    rows: &Arc<[usize]>,
    targets: &crate::tensor::Tensor,
    opts: &GradcheckOptions,
    term: LossTerm,
) -> Result<Var> {
    let f = model.forward_bound(tape, BoundParams::from_vars(vars.to_vec()), ctx, None)?;
    let mut ae = || {
        reconstruction_loss(
            tape,
            &f.z_prime,
            &ctx.pairs,
            &FocalConfig::default(),
            PairSampling::Full,
            None,
        )
    };
    let l_ae = ae()?;
    let fb = tape.gather_rows(f.fbc, rows.clone())?;
    let l_fb = classification_loss(tape, fb, targets, ctx.task)?;
    let hg = tape.gather_rows(f.hgc, rows.clone())?;
    let l_hgnn = classification_loss(tape, hg, targets, ctx.task)?;
    Ok(match term {
        LossTerm::LAe => l_ae,
        LossTerm::LFb => l_fb,
        LossTerm::LHgnn => l_hgnn,
        LossTerm::Joint => {
            let a = tape.scale(l_ae, opts.alpha);
            let b = tape.scale(l_fb, opts.beta);
            let c = tape.scale(l_hgnn, 1.0 - opts.alpha - opts.beta);
            let ab = tape.add(a, b)?;
            tape.add(ab, c)?
        }
    })
}

/// Maximum relative error of every loss term over all parameters of `graph`.
pub fn gradcheck_graph(graph: &HeteroGraph, opts: &GradcheckOptions) -> Result<Vec<TermError>> {
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(Error::Config(format!(
            "eps must be positive, got {}",
            opts.eps
        )));
    }
    let ctx = GraphContext::new(graph);
    let model = Model::init(&ctx, &opts.model, opts.seed)?;
    let train = &graph.splits().train;
    let offset = graph.target_range().start;
    let rows: Arc<[usize]> = train.iter().map(|&u| u - offset).collect();
    let targets = label_matrix(graph, train)?;
    LossTerm::ALL
        .iter()
        .map(|&term| {
            let tape = if opts.inject_fault {
                Tape::new().with_faulty_elu_backward()
            } else {
                Tape::new()
            };
            let err = grad_check_on(
                tape,
                |tape, vars| term_loss(tape, vars, &model, &ctx, &rows, &targets, opts, term),
                model.store.values(),
                opts.eps,
            )?;
            Ok(TermError {
                term,
                max_rel_error: err,
            })
        })
        .collect()
}

pub fn gradcheck_fixture(opts: &GradcheckOptions) -> Result<Vec<TermError>> {
    gradcheck_graph(&fixture_graph(), opts)
}
