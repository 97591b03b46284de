//! Writes a synthetic dataset to disk and loads it back.
//!
//! cargo run --example synth_dataset -- <out-dir> [preset] [seed]

use thegau::hin::{
    generate_synthetic, load_graph, load_noise, save_graph, save_noise, SyntheticSpec,
};

fn main() -> thegau::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map_or("synthetic-data", String::as_str);
    let preset = args.get(1).map_or("noisy", String::as_str);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = SyntheticSpec::preset(preset)
        .ok_or_else(|| thegau::Error::Config(format!("unknown preset {preset}")))?;
    let synth = generate_synthetic(&spec, seed)?;
    save_graph(&synth.graph, out)?;
    save_noise(&synth, out)?;

    let back = load_graph(out)?;
    let noise = load_noise(&back, out)?;
    println!(
        "{out}: {} nodes, {} edges ({} noise), {} train / {} valid / {} test targets",
        back.num_nodes(),
        back.num_edges(),
        noise.map_or(0, |n| n.len()),
        back.splits().train.len(),
        back.splits().valid.len(),
        back.splits().test.len()
    );
    Ok(())
}
