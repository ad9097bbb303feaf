//! Draws a blocked cluster randomization from a seed and counts the full
//! assignment space.
//!
//! Usage: cargo run --example randomize -- [seed]

use clusterate::population::{ingest_units, IngestOptions};
use clusterate::randomize::{draw_assignment, enumerate_assignments, treated_counts};

fn main() -> clusterate::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/trial.csv");
    let pop = ingest_units(std::fs::File::open(path)?, &IngestOptions::default())?;
    let p = [0.5];
    println!(
        "treated clusters per block: {:?}",
        treated_counts(&pop, &p)?
    );
    let asg = draw_assignment(&pop, &p, seed)?;
    println!("seed {seed}: {}", asg.bitstring());
    let again = draw_assignment(&pop, &p, seed)?;
    assert_eq!(asg, again);
    let space = enumerate_assignments(&pop, &p, 1_000_000)?;
    println!("assignments in the design: {}", space.len());
    let mut stdout = std::io::stdout().lock();
    asg.write_csv(&pop, &mut stdout)?;
    Ok(())
}
