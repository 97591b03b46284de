use std::collections::HashSet;

use proptest::prelude::*;
use thegau::augment::{
    graph_augment, predict_all_legal, threshold_grid_search, AugmentationPolicy, AugmentedGraph,
    Provenance, ThresholdGrid,
};
use thegau::hin::{generate_synthetic, HeteroGraph, LegalPairSet, SyntheticSpec};
use thegau::model::{GraphContext, Model, ModelConfig};
use thegau::tgd::EdgePredictionSet;
use thegau::trainer::{train, train_observed, train_with_context, TrainConfig, TrainReport};
use thegau::verify::fixture_graph;
use thegau::Error;

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            dim: 16,
            heads: 4,
            layers: 2,
            dropout: 0.5,
        },
        max_epochs: 40,
        patience: 10,
        seed,
        ..TrainConfig::default()
    }
}

fn graph() -> HeteroGraph {
    generate_synthetic(&SyntheticSpec::separable(), 4)
        .unwrap()
        .graph
}

fn same_report(a: &TrainReport, b: &TrainReport) {
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.valid, b.valid);
    assert_eq!(a.test, b.test);
}

#[test]
fn training_is_deterministic() {
    let g = graph();
    let (m1, r1) = train(&g, &small_cfg(5)).unwrap();
    let (m2, r2) = train(&g, &small_cfg(5)).unwrap();
    same_report(&r1, &r2);
    assert_eq!(m1.store.values(), m2.store.values());
    let (_, r3) = train(&g, &small_cfg(6)).unwrap();
    assert_ne!(r1.epochs, r3.epochs);
}

#[test]
fn identity_augmentation_reproduces_phase_one() {
    let g = graph();
    let cfg = small_cfg(2);
    let (model, phase1) = train(&g, &cfg).unwrap();
    let preds = predict_all_legal(&model, &g).unwrap();
    let aug = graph_augment(&g, &preds, &AugmentationPolicy::identity()).unwrap();
    assert_eq!(aug.num_modified(), 0);
    assert_eq!(aug, AugmentedGraph::identity(&g));
    let (_, phase2) = train_with_context(&g, &aug.context(&g), &cfg).unwrap();
    same_report(&phase1, &phase2);
}

#[test]
fn early_stop_fires_within_patience() {
    let g = fixture_graph();
    let cfg = TrainConfig {
        model: ModelConfig {
            dim: 8,
            heads: 2,
            layers: 1,
            dropout: 0.0,
        },
        max_epochs: 300,
        patience: 30,
        ..TrainConfig::default()
    };
    let (_, r) = train(&g, &cfg).unwrap();
    assert!(r.epochs.len() < 300);
    assert_eq!(r.epochs.len(), r.best_epoch + 30);
    let best = r.best();
    assert!(r.epochs[r.best_epoch..]
        .iter()
        .all(|e| e.val_macro <= best.val_macro));
}

#[test]
fn loss_decreases_over_first_steps() {
    let g = fixture_graph();
    let cfg = TrainConfig {
        model: ModelConfig {
            dim: 8,
            heads: 2,
            layers: 2,
            dropout: 0.0,
        },
        optim: thegau::tensor::AdamWConfig {
            lr: 1e-3,
            ..Default::default()
        },
        max_epochs: 6,
        patience: 6,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    train_observed(&g, &GraphContext::new(&g), &cfg, |r| losses.push(r.loss)).unwrap();
    assert_eq!(losses.len(), 6);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let g = fixture_graph();
    let bad = [
        TrainConfig {
            alpha: 0.6,
            beta: 0.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            alpha: -0.1,
            ..TrainConfig::default()
        },
        TrainConfig {
            patience: 400,
            ..TrainConfig::default()
        },
        TrainConfig {
            model: ModelConfig {
                dim: 10,
                heads: 4,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        },
    ];
    for cfg in bad {
        let err = train(&g, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn checkpoint_round_trip_and_dimension_mismatch() {
    let g = graph();
    let cfg = small_cfg(1);
    let (model, _) = train(&g, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let ctx = GraphContext::new(&g);
    let back = Model::load(&path, &ctx, &cfg.model).unwrap();
    assert_eq!(back.store.values(), model.store.values());
    assert_eq!(
        back.predict_edges(&ctx).unwrap().probs,
        model.predict_edges(&ctx).unwrap().probs
    );

    let wider = ModelConfig {
        dim: 32,
        ..cfg.model.clone()
    };
    let err = Model::load(&path, &ctx, &wider).unwrap_err();
    assert!(
        err.to_string().contains("shape") || err.to_string().contains("dimension"),
        "{err}"
    );
    assert_ne!(err.exit_code(), 0);
}

#[test]
fn predictions_cover_exactly_the_legal_pairs() {
    let g = generate_synthetic(&SyntheticSpec::imdb_like(), 1)
        .unwrap()
        .graph;
    let ctx = GraphContext::new(&g);
    let mut model = Model::init(
        &ctx,
        &ModelConfig {
            dim: 8,
            heads: 2,
            layers: 1,
            dropout: 0.0,
        },
        0,
    )
    .unwrap();
    let a = predict_all_legal(&model, &g).unwrap();
    let b = predict_all_legal(&model, &g).unwrap();
    assert_eq!(a.len(), 39_000);
    assert_eq!(a.probs, b.probs);
    let ids: Vec<_> = model
        .store
        .ids()
        .filter(|&id| model.store.name(id).starts_with("dec."))
        .collect();
    assert!(!ids.is_empty());
    for id in ids {
        model.store.get_mut(id).data_mut().fill(0.0);
    }
    let zero = predict_all_legal(&model, &g).unwrap();
    assert!(zero.iter().all(|(_, _, _, _, p)| p == 0.5));
}

#[test]
fn single_point_grid_retrains_once() {
    let g = graph();
    let cfg = TrainConfig {
        max_epochs: 5,
        patience: 5,
        ..small_cfg(3)
    };
    let (model, _) = train(&g, &cfg).unwrap();
    let preds = predict_all_legal(&model, &g).unwrap();
    let grid = ThresholdGrid {
        add: vec![0.9],
        rm: vec![0.1],
    };
    let search = threshold_grid_search(&g, &preds, &cfg, &grid, None, 1).unwrap();
    assert_eq!(search.rows.len(), 1);
    let bad = ThresholdGrid {
        add: vec![0.1, 0.2],
        rm: vec![0.5],
    };
    assert!(matches!(
        threshold_grid_search(&g, &preds, &cfg, &bad, None, 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn grid_search_is_independent_of_jobs() {
    let g = graph();
    let cfg = TrainConfig {
        max_epochs: 8,
        patience: 8,
        ..small_cfg(3)
    };
    let (model, _) = train(&g, &cfg).unwrap();
    let preds = predict_all_legal(&model, &g).unwrap();
    let grid = ThresholdGrid {
        add: vec![0.6, 0.9],
        rm: vec![0.55],
    };
    let a = threshold_grid_search(&g, &preds, &cfg, &grid, None, 1).unwrap();
    let b = threshold_grid_search(&g, &preds, &cfg, &grid, None, 2).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.best, b.best);
}

fn random_preds(g: &HeteroGraph, seed: u64) -> EdgePredictionSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pairs = LegalPairSet::new(g);
    let probs = pairs
        .blocks()
        .iter()
        .map(|b| (0..b.len()).map(|_| rng.random::<f64>()).collect())
        .collect();
    EdgePredictionSet { pairs, probs }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_invariants(seed in 0u64..1000, add in 0.5f64..1.0, rm in 0.0f64..0.5, bump in 0.0f64..0.2) {
        let g = fixture_graph();
        let preds = random_preds(&g, seed);
        let policy = AugmentationPolicy::uniform(add, rm);
        let aug = graph_augment(&g, &preds, &policy).unwrap();

        // schema closure and edge-count identity
        let as_graph = aug.to_graph(&g).unwrap();
        prop_assert_eq!(as_graph.num_edges(), g.num_edges() + aug.added.len() - aug.removed.len());
        let prov = aug.provenance(&g);
        let count = |p| prov.iter().filter(|x| x.1 == p).count();
        prop_assert_eq!(count(Provenance::Added), aug.added.len());
        prop_assert_eq!(count(Provenance::Removed), aug.removed.len());
        prop_assert_eq!(count(Provenance::Kept) + count(Provenance::Added), aug.edges.len());
        prop_assert_eq!(as_graph.splits(), g.splits());
        let source: HashSet<_> = g.edges().iter().copied().collect();
        prop_assert!(aug.removed.iter().all(|e| source.contains(e)));
        prop_assert!(aug.added.iter().all(|e| !source.contains(e)));

        // idempotence on the fixed prediction set
        let again = graph_augment(&as_graph, &preds, &policy).unwrap();
        let once: HashSet<_> = aug.edges.iter().copied().collect();
        let twice: HashSet<_> = again.edges.iter().copied().collect();
        prop_assert_eq!(once, twice);

        // monotonicity
        let higher_add = graph_augment(&g, &preds, &AugmentationPolicy::uniform((add + bump).min(1.0), rm)).unwrap();
        prop_assert!(higher_add.added.len() <= aug.added.len());
        let lower_rm = graph_augment(&g, &preds, &AugmentationPolicy::uniform(add, (rm - bump).max(0.0))).unwrap();
        prop_assert!(lower_rm.removed.len() <= aug.removed.len());
    }
}
