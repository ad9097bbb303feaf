//! Regularity ratios for the normal approximations and a Monte Carlo
//! normality check, before and after replicating the population.
//!
//! Usage: cargo run --release --example conditions

use clusterate::asymptotics::{condition_report, normality_diagnostic};
use clusterate::estimators::schedule_gamma;
use clusterate::population::{ingest_units, IngestOptions};

fn main() -> clusterate::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/schedule_small.csv");
    let base = ingest_units(std::fs::File::open(path)?, &IngestOptions::default())?;
    for k in [1, 2, 4, 8] {
        let pop = base.replicate(k);
        let gamma = schedule_gamma(&pop, &[0.5])?;
        let rep = condition_report(&pop, &[0.5], &gamma)?;
        let b = &rep.blocks[0];
        let ks = normality_diagnostic(&pop, 0, 0.5, &gamma, 2000, 1, 1)?.ks;
        println!(
            "k={k}: m={:>3} lemma1 {:.4}/{:.4} weight {:.5} lemma2 {:.4} joint max {:.4} ks {:.4}",
            b.m,
            b.ratio_lemma1[0],
            b.ratio_lemma1[1],
            b.weight_ratio[0],
            b.ratio_lemma2,
            rep.theorem_a1_max,
            ks
        );
    }
    Ok(())
}
