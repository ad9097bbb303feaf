//! Compares the closed-form block and pooled estimators with the weighted
//! least-squares fits on random populations.
//!
//! Usage: cargo run --release --example closed_form_vs_wls -- [instances]

use clusterate::estimators::{block_ate, pooled_ate, Adjustment};
use clusterate::population::{Outcome, Population, UnitRecord};
use clusterate::randomize::{draw_assignment, rng_for};
use clusterate::wls::{build_design, fit_wls, ModelSpec};
use rand::Rng;

fn random_population(seed: u64) -> clusterate::Result<Population> {
    let mut rng = rng_for(seed, 0);
    let h = rng.random_range(1..=3);
    let v = [0, 1, 3][rng.random_range(0..3)];
    let mut units = Vec::new();
    for b in 0..h {
        let m = rng.random_range(4..=12);
        for j in 0..m {
            for i in 0..rng.random_range(1..=4) {
                let x: Vec<f64> = (0..v).map(|_| rng.random_range(-2.0..2.0)).collect();
                units.push(UnitRecord {
                    block_id: format!("b{b}"),
                    cluster_id: format!("c{j}"),
                    unit_id: format!("{i}"),
                    weight: rng.random_range(-2.0f64..2.0).exp(),
                    covariates: x.clone(),
                    outcome: Outcome::Observed(x.iter().sum::<f64>() + rng.random_range(-1.0..1.0)),
                    treated: None,
                });
            }
        }
    }
    Population::from_units(units)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn main() -> clusterate::Result<()> {
    let n: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let mut worst = 0.0f64;
    for seed in 0..n {
        let pop = random_population(seed)?;
        let asg = draw_assignment(&pop, &[0.5], seed)?;
        let adj = if pop.v() == 0 {
            Adjustment::Unadjusted
        } else {
            Adjustment::Estimated
        };
        let spec = if pop.v() == 0 {
            ModelSpec::NoCovariates
        } else {
            ModelSpec::FullInteracted
        };
        let fit = fit_wls(build_design(&pop, &asg, spec)?)?;
        for (b, e) in block_ate(&pop, &asg, &adj)?.iter().enumerate() {
            worst = worst.max(rel(fit.treatment_effect(b), e.beta1));
        }
        let pooled_fit = fit_wls(build_design(&pop, &asg, ModelSpec::PooledRestricted)?)?;
        worst = worst.max(rel(
            pooled_fit.treatment_effect(0),
            pooled_ate(&pop, &asg, &adj)?.beta1,
        ));
    }
    println!("{n} instances: largest relative difference {worst:.3e}");
    Ok(())
}
