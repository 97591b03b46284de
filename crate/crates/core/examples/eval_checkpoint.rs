//! Trains, saves a checkpoint, reloads it and scores the held-out nodes.
//!
//! cargo run --release --example eval_checkpoint -- [preset] [seed]

use thegau::hin::{generate_synthetic, SyntheticSpec};
use thegau::model::{GraphContext, Model, ModelConfig};
use thegau::trainer::{evaluate, train, TrainConfig};

fn main() -> thegau::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map_or("separable", String::as_str);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = SyntheticSpec::preset(preset)
        .ok_or_else(|| thegau::Error::Config(format!("unknown preset {preset}")))?;
    let graph = generate_synthetic(&spec, seed)?.graph;
    let cfg = TrainConfig {
        model: ModelConfig {
            dim: 32,
            ..ModelConfig::default()
        },
        max_epochs: 100,
        seed,
        ..TrainConfig::default()
    };
    let (model, report) = train(&graph, &cfg)?;

    let path = std::env::temp_dir().join(format!("thegau-example-{}.ckpt", std::process::id()));
    model.save(&path)?;
    let ctx = GraphContext::new(&graph);
    let loaded = Model::load(&path, &ctx, &cfg.model)?;
    let test = evaluate(&loaded, &graph, &ctx, &graph.splits().test)?;
    let _ = std::fs::remove_file(&path);

    println!(
        "trained: best epoch {} test Macro-F1 {:.4}",
        report.best_epoch, report.test.macro_f1
    );
    println!(
        "reloaded: test Macro-F1 {:.4} Micro-F1 {:.4}",
        test.macro_f1, test.micro_f1
    );
    Ok(())
}
