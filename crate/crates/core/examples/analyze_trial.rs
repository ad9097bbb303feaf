//! Estimates block and combined treatment effects from a bundled observed
//! trial, with design-based and cluster-robust standard errors.
//!
//! Usage: cargo run --example analyze_trial -- [path/to/data.csv]

use clusterate::estimators::{block_ate, pooled_ate, Adjustment};
use clusterate::population::{ingest_units, IngestOptions};
use clusterate::variance::{
    confidence_interval, crse_variance, design_variance_block, Correction, VarianceConfig,
};
use clusterate::wls::{build_design, fit_wls, ModelSpec};

fn main() -> clusterate::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/trial.csv").to_string()
    });
    let pop = ingest_units(std::fs::File::open(&path)?, &IngestOptions::default())?;
    let asg = pop.observed_assignment()?;
    println!(
        "{} blocks, {} clusters, {} units, {} covariates",
        pop.h(),
        pop.m(),
        pop.n(),
        pop.v()
    );

    let fit = fit_wls(build_design(&pop, &asg, ModelSpec::FullInteracted)?)?;
    let crse = crse_variance(&fit, Correction::ClusterCount);
    let closed = block_ate(&pop, &asg, &Adjustment::Estimated)?;
    for (b, est) in closed.iter().enumerate() {
        let design = design_variance_block(&fit, b, &VarianceConfig::default())?;
        let (lo, hi) = confidence_interval(est.beta1, &design, 0.95)?;
        println!(
            "block {:>6}: effect {:+.4} (regression {:+.4})  design se {:.4} df {:.2} ci [{:+.4}, {:+.4}]  crse se {:.4}",
            est.block_id,
            est.beta1,
            fit.treatment_effect(b),
            design.se(),
            design.df,
            lo,
            hi,
            crse.reports[b].se()
        );
    }
    let pooled = pooled_ate(&pop, &asg, &Adjustment::Estimated)?;
    println!("pooled effect (shared slope): {:+.4}", pooled.beta1);
    Ok(())
}
