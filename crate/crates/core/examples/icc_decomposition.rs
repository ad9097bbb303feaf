//! Between/within covariate decomposition on a simulated population: the ICC
//! matrix, the between and within slopes, and R² for one allocation.
//!
//! Usage: cargo run --example icc_decomposition -- [rho_x]

use clusterate::collinearity::{between_within_gammas, icc_matrix, r2_approximations, r2_pair};
use clusterate::randomize::draw_assignment;
use clusterate::simlab::{gen_population, SimConfig};

fn main() -> clusterate::Result<()> {
    let mut cfg = SimConfig {
        v: 3,
        m: 30,
        seed: 11,
        ..SimConfig::default()
    };
    cfg.set(
        "rho_x",
        &std::env::args().nth(1).unwrap_or_else(|| "0.4".into()),
    )?;
    let pop = gen_population(&cfg, 0)?;
    let icc = icc_matrix(&pop)?;
    println!("ICC matrix:{}", icc.gamma_x);
    println!(
        "eigenvalues {:?}, trace {:.4}, mean ICC {:.4}",
        icc.eigenvalues, icc.trace, icc.rho_bar
    );
    let bw = between_within_gammas(&pop, &[cfg.p])?;
    println!("gamma        {:?}", bw.gamma);
    println!("gamma_between {:?}", bw.gamma_between);
    println!("gamma_within  {:?}", bw.gamma_within);
    println!("recombination residual {:.2e}", bw.recombination_residual);
    let asg = draw_assignment(&pop, &[cfg.p], 1)?;
    let r2 = r2_pair(&pop, &asg)?;
    let approx = r2_approximations(cfg.v, pop.m(), pop.n(), &icc);
    println!(
        "R2 individual {:.5} (approx {:.5}), aggregate {:.5} (approx {:.5})",
        r2.r2_tx, approx.approx_tx, r2.r2_txb, approx.approx_txb
    );
    println!(
        "effective sample size {:.1} of {} individuals",
        approx.n_star,
        pop.n()
    );
    Ok(())
}
