//! Coverage and standard-error calibration of the design-based and
//! cluster-robust intervals on simulated trials.
//!
//! Usage: cargo run --release --example coverage_study -- [m] [draws] [repeats] [seed]

use clusterate::simlab::{run_study, SimConfig};

fn main() -> clusterate::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let mut cfg = SimConfig::default();
    cfg.set("m", &arg(0, "60"))?;
    cfg.set("draws", &arg(1, "500"))?;
    cfg.set("repeats", &arg(2, "10"))?;
    cfg.set("seed", &arg(3, "2024"))?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let summary = run_study(&cfg, workers)?;
    print!("{}", cfg.to_text());
    println!();
    print!("{}", summary.table(false).to_text());
    if let Some(t) = summary.r2_table(false) {
        println!();
        print!("{}", t.to_text());
    }
    Ok(())
}
