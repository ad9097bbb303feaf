//! Exact finite-sample bias of the ratio estimator by full enumeration, split
//! into its treated and control covariance terms.
//!
//! Usage: cargo run --example exact_bias

use clusterate::bias_exact::{exact_expectation, hartley_bias, Statistic};
use clusterate::population::{ingest_units, IngestOptions};

fn main() -> clusterate::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/schedule_m4.csv");
    let pop = ingest_units(std::fs::File::open(path)?, &IngestOptions::default())?;
    let r = hartley_bias(&pop, 0, 0.5, 1000, 1)?;
    println!("assignments enumerated: {}", r.n_assignments);
    println!(
        "E[estimate] = {:.6}, estimand = {:.6}",
        r.expectation, r.estimand
    );
    println!(
        "bias terms: treated {:+.6}, control {:+.6}, total {:+.6}",
        r.bias_treated, r.bias_control, r.total
    );
    println!("identity residual: {:.3e}", r.identity_residual);
    let w = exact_expectation(
        &pop,
        &[0.5],
        Statistic::TreatedMeanWeight { block: 0 },
        1000,
        1,
    )?;
    println!(
        "E[mean treated cluster weight] = {w:.6} (block mean weight {:.6})",
        pop.block(0).mean_weight()
    );

    // Replicating the clusters shrinks the bias.
    for k in [2, 3] {
        let rk = hartley_bias(&pop.replicate(k), 0, 0.5, 1_000_000, 1)?;
        println!(
            "replicated x{k}: total bias {:+.6} over {} assignments",
            rk.total, rk.n_assignments
        );
    }
    Ok(())
}
