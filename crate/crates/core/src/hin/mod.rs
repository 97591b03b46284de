//! Heterogeneous information network: schema, graph storage, legal
//! candidate pairs, dataset I/O and synthetic generation.

mod graph;
mod io;
mod legal;
mod schema;
mod synthetic;

pub use graph::{random_splits, Edge, GraphBuilder, HeteroGraph, SplitKind, Splits};
pub use io::{load_graph, load_graph_with_seed, parse_schema, save_graph, schema_to_string};
pub use legal::{enumerate_legal_pairs, LegalBlock, LegalPairSet};
pub use schema::{EdgeTypeDef, GraphSchema, Task, TypePairBlock};
pub use synthetic::{
    generate_synthetic, load_noise, save_noise, EdgeTypeSpec, NodeTypeSpec, SyntheticGraph,
    SyntheticSpec, NOISE_FILE,
};
