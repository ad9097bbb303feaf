//! Mean treatment-covariate R² for individual and aggregate regressions against
//! their approximations, over covariate counts, ICCs and cluster counts.
//!
//! Usage: cargo run --release --example table_a1 -- [draws] [repeats]

use clusterate::simlab::{table_a1_study, table_a1_table, SimConfig};

fn main() -> clusterate::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = SimConfig {
        seed: 2024,
        ..SimConfig::default()
    };
    cfg.set("draws", args.first().map_or("500", String::as_str))?;
    cfg.set("repeats", args.get(1).map_or("10", String::as_str))?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = table_a1_study(&cfg, &[2, 5, 10], &[0.0, 0.4, 0.8], &[20, 40, 60], workers)?;
    print!("{}", table_a1_table(&rows, false).to_text());
    Ok(())
}
