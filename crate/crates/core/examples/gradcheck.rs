//! Finite-difference check of every loss term on the built-in fixture graph.
//!
//! cargo run --release --example gradcheck -- [eps]

use thegau::verify::{gradcheck_fixture, GradcheckOptions, TOLERANCE};

fn main() -> thegau::Result<()> {
    let mut opts = GradcheckOptions::default();
    if let Some(eps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        opts.eps = eps;
    }
    for e in gradcheck_fixture(&opts)? {
        let mark = if e.max_rel_error < TOLERANCE {
            "ok"
        } else {
            "FAIL"
        };
        println!("{:<8} {:.3e} {mark}", e.term.name(), e.max_rel_error);
    }
    opts.inject_fault = true;
    let worst = gradcheck_fixture(&opts)?
        .iter()
        .map(|e| e.max_rel_error)
        .fold(0.0, f64::max);
    println!("with a broken elu backward: {worst:.3e}");
    Ok(())
}
