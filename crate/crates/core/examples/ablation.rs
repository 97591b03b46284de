//! Compares the full model with its ablations on the `ablation` preset:
//! without augmentation, without augmentation and decoder, and the bare
//! encoder. Prints mean test Macro-F1 per variant.
//!
//! cargo run --release --example ablation -- [seeds] [epochs]

use thegau::augment::{predict_all_legal, threshold_grid_search, ThresholdGrid};
use thegau::hin::{generate_synthetic, SyntheticSpec};
use thegau::model::ModelConfig;
use thegau::tensor::AdamWConfig;
use thegau::tgd::FocalConfig;
use thegau::trainer::{train, TrainConfig};

fn main() -> thegau::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut sums = [0.0; 4];
    for seed in 1..=seeds {
        let synth = generate_synthetic(&SyntheticSpec::ablation(), seed)?;
        let g = &synth.graph;
        let base = TrainConfig {
            model: ModelConfig {
                dim: 32,
                ..ModelConfig::default()
            },
            focal: FocalConfig {
                tau_pos: 0.96,
                tau_neg: 0.04,
                ..FocalConfig::default()
            },
            optim: AdamWConfig {
                lr: 5e-3,
                ..AdamWConfig::default()
            },
            max_epochs: epochs,
            patience: epochs.min(30),
            seed,
            ..TrainConfig::default()
        };
        let (model, phase1) = train(g, &base)?;
        let preds = predict_all_legal(&model, g)?;
        let search = threshold_grid_search(g, &preds, &base, &ThresholdGrid::default(), None, 1)?;
        let (_, no_tgd) = train(
            g,
            &TrainConfig {
                alpha: 0.0,
                ..base.clone()
            },
        )?;
        let (_, enc) = train(
            g,
            &TrainConfig {
                alpha: 0.0,
                beta: 0.0,
                ..base.clone()
            },
        )?;
        let row = [
            search.best_row().test_macro,
            phase1.test.macro_f1,
            no_tgd.test.macro_f1,
            enc.test.macro_f1,
        ];
        println!(
            "seed {seed} full {:.4} no_aug {:.4} no_aug_tgd {:.4} encoder {:.4}",
            row[0], row[1], row[2], row[3]
        );
        for (s, r) in sums.iter_mut().zip(row) {
            *s += r;
        }
    }
    let n = seeds as f64;
    println!(
        "mean full {:.4} no_aug {:.4} no_aug_tgd {:.4} encoder {:.4}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n
    );
    Ok(())
}
