//! Trains on a generated graph and prints the per-epoch report.
//!
//! cargo run --release --example train_synthetic -- [preset|spec.toml] [seed] [epochs]

use thegau::hin::{generate_synthetic, SyntheticSpec};
use thegau::model::ModelConfig;
use thegau::trainer::{train, TrainConfig};

fn main() -> thegau::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map_or("separable", String::as_str);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let spec = match SyntheticSpec::preset(preset) {
        Some(spec) => spec,
        None => SyntheticSpec::load(preset)?,
    };
    let synth = generate_synthetic(&spec, seed)?;
    let cfg = TrainConfig {
        model: ModelConfig {
            dim: 32,
            ..ModelConfig::default()
        },
        max_epochs: epochs,
        patience: epochs.min(30),
        seed,
        ..TrainConfig::default()
    };
    let (_, report) = train(&synth.graph, &cfg)?;
    report.write_jsonl(std::io::stdout().lock(), true)?;
    Ok(())
}
