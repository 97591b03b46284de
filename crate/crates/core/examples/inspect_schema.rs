//! Prints the legal candidate blocks of a dataset directory or preset.
//!
//! cargo run --example inspect_schema -- [dir|preset]

use thegau::hin::{enumerate_legal_pairs, generate_synthetic, load_graph, SyntheticSpec};

fn main() -> thegau::Result<()> {
    let arg = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "imdb-like".into());
    let graph = match SyntheticSpec::preset(&arg) {
        Some(spec) => generate_synthetic(&spec, 1)?.graph,
        None => load_graph(&arg)?,
    };
    let schema = graph.schema();
    let pairs = enumerate_legal_pairs(&graph);
    for b in pairs.blocks() {
        let names: Vec<&str> = b
            .edge_types
            .iter()
            .map(|&e| schema.edge_types()[e].name.as_str())
            .collect();
        println!(
            "{}-{} [{}]: {} x {} = {} candidates, {} edges",
            schema.node_types()[b.type_u],
            schema.node_types()[b.type_v],
            names.join(","),
            b.n_u,
            b.n_v,
            b.len(),
            b.positives()
        );
    }
    let n = graph.num_nodes();
    println!("legal {} of {} node pairs", pairs.total_candidates(), n * n);
    Ok(())
}
