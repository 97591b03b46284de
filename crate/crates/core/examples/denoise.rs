//! Trains on a graph with injected noise, augments it with the trained
//! decoder over a threshold grid and compares the chosen policy against
//! removing the same number of random edges.
//!
//! cargo run --release --example denoise -- [seed] [epochs]

use thegau::augment::{
    predict_all_legal, random_removal, threshold_grid_search, NoiseOracle, ThresholdGrid,
};
use thegau::hin::{generate_synthetic, SyntheticSpec};
use thegau::model::ModelConfig;
use thegau::tgd::FocalConfig;
use thegau::trainer::{train, train_with_context, TrainConfig};

fn main() -> thegau::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let synth = generate_synthetic(&SyntheticSpec::noisy(), seed)?;
    let graph = &synth.graph;
    let cfg = TrainConfig {
        model: ModelConfig {
            dim: 32,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        focal: FocalConfig {
            gamma: 0.0,
            tau_pos: 0.96,
            tau_neg: 0.04,
        },
        alpha: 0.5,
        max_epochs: epochs,
        patience: epochs.min(100),
        seed,
        ..TrainConfig::default()
    };
    let (model, phase1) = train(graph, &cfg)?;
    println!("phase1 test_macro {:.4}", phase1.test.macro_f1);

    let preds = predict_all_legal(&model, graph)?;
    let grid = ThresholdGrid {
        add: vec![0.99],
        rm: vec![0.5, 0.51, 0.52, 0.55, 0.6, 0.7],
    };
    let oracle = NoiseOracle {
        noise: synth.noise_set(),
    };
    let search = threshold_grid_search(graph, &preds, &cfg, &grid, Some(&oracle), 1)?;
    search.write_tsv(std::io::stdout().lock())?;

    let best = search.best_row();
    let random = random_removal(graph, best.removed, seed)?;
    let (_, rand_report) = train_with_context(graph, &random.context(graph), &cfg)?;
    println!(
        "best thr_rm {} test_macro {:.4} random_removal test_macro {:.4}",
        best.thr_rm, best.test_macro, rand_report.test.macro_f1
    );
    Ok(())
}
