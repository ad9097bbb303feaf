//! Finite-m regularity ratios behind the normal approximations, and a Monte
//! Carlo normality check of the standardized block estimator.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, ks_normal, mean, sample_variance};
use crate::population::Population;
use crate::randomize::{draw_with_rng, rng_for};
use crate::variance::{arm_sizes, scaled_residuals, schedule_variance_block};

/// Ratios for one block. Arrays are indexed `[treated, control]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlockConditions {
    pub block_id: String,
    pub m: usize,
    pub m1: usize,
    pub m0: usize,
    /// `max_j D_j(t)^2`.
    pub g: [f64; 2],
    /// `g(t) / (min(m1, m0) S2_D(t))`.
    pub ratio_lemma1: [f64; 2],
    /// `(1 - m_t/m) S2(w) / (m_t wbar^2)`.
    pub weight_ratio: [f64; 2],
    /// `max_t g(t) / (m_t^2 Var(D))`.
    pub ratio_lemma2: f64,
    /// `a_z(t) / (p(1-p) m v_z(t))` for `z = U` and the weights.
    pub theorem_a1_u: [f64; 2],
    pub theorem_a1_w: f64,
    /// Names of ratios whose denominator is zero.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConditionReport {
    pub blocks: Vec<BlockConditions>,
    /// Maximum of the joint-normality ratio over blocks, variables and arms.
    pub theorem_a1_max: f64,
}

/// One flat output row.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConditionRow {
    pub block: String,
    pub quantity: &'static str,
    pub arm: &'static str,
    pub value: f64,
    pub degenerate: bool,
}

impl ConditionReport {
    pub fn rows(&self) -> Vec<ConditionRow> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let flagged = |name: &str| b.flags.iter().any(|f| f == name);
            let mut push = |quantity: &'static str, arm: &'static str, value: f64, flag: &str| {
                out.push(ConditionRow {
                    block: b.block_id.clone(),
                    quantity,
                    arm,
                    value,
                    degenerate: flagged(flag),
                });
            };
            for (i, arm) in ["treated", "control"].into_iter().enumerate() {
                push("g", arm, b.g[i], "");
                push(
                    "ratio_lemma1",
                    arm,
                    b.ratio_lemma1[i],
                    &format!("ratio_lemma1_{arm}"),
                );
                push("weight_ratio", arm, b.weight_ratio[i], "");
                push(
                    "theorem_a1_u",
                    arm,
                    b.theorem_a1_u[i],
                    &format!("theorem_a1_u_{arm}"),
                );
            }
            push("ratio_lemma2", "both", b.ratio_lemma2, "ratio_lemma2");
            push("theorem_a1_w", "both", b.theorem_a1_w, "theorem_a1_w");
        }
        out.push(ConditionRow {
            block: "all".into(),
            quantity: "theorem_a1_max",
            arm: "both",
            value: self.theorem_a1_max,
            degenerate: false,
        });
        out
    }
}

fn max_sq_dev_and_var(z: &[f64]) -> (f64, f64) {
    let zbar = compensated_sum(z.iter().copied()) / z.len() as f64;
    let a = z.iter().map(|x| (x - zbar).powi(2)).fold(0.0, f64::max);
    let v = compensated_sum(z.iter().map(|x| (x - zbar).powi(2))) / (z.len() - 1) as f64;
    (a, v)
}

/// Ratio `num / den`, or `+inf` with a flag when `den` is zero.
fn ratio(num: f64, den: f64, name: String, flags: &mut Vec<String>) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        flags.push(name);
        f64::INFINITY
    }
}

/// Finite-m condition ratios for every block with proportions `p` and slope
/// `gamma` (empty for no adjustment).
pub fn condition_report(pop: &Population, p: &[f64], gamma: &[f64]) -> Result<ConditionReport> {
    pop.require_schedule()?;
    let p = crate::estimators::expand(p, pop.h())?;
    let mut blocks = Vec::with_capacity(pop.h());
    let mut theorem_a1_max = 0.0f64;
    for (b, block) in pop.blocks().iter().enumerate() {
        let pb = p[b];
        let (m1, m0) = arm_sizes(pop, b, pb)?;
        let m = block.m();
        let r = scaled_residuals(pop, b, gamma)?;
        let mut flags = Vec::new();
        let g = [
            r.d1.iter().map(|d| d * d).fold(0.0, f64::max),
            r.d0.iter().map(|d| d * d).fold(0.0, f64::max),
        ];
        let s2d = [r.s2_1, r.s2_0];
        let arms = ["treated", "control"];
        let mt = [m1 as f64, m0 as f64];
        let mmin = m1.min(m0) as f64;
        let ratio_lemma1 = [0, 1].map(|i| {
            ratio(
                g[i],
                mmin * s2d[i],
                format!("ratio_lemma1_{}", arms[i]),
                &mut flags,
            )
        });

        let w: Vec<f64> = block.clusters.iter().map(|c| c.agg.weight).collect();
        let wbar = block.mean_weight();
        let (a_w, v_w) = max_sq_dev_and_var(&w);
        let weight_ratio = [0, 1].map(|i| (1.0 - mt[i] / m as f64) * v_w / (mt[i] * wbar * wbar));

        let var_d = (r.s2_1 / mt[0] + r.s2_0 / mt[1] - r.s2_diff / m as f64).max(0.0);
        let l2 = (0..2).map(|i| g[i] / (mt[i] * mt[i])).fold(0.0, f64::max);
        let ratio_lemma2 = ratio(l2, var_d, "ratio_lemma2".into(), &mut flags);

        let scale = pb * (1.0 - pb) * m as f64;
        let theorem_a1_u = [true, false].map(|t| {
            let u: Vec<f64> = block
                .clusters
                .iter()
                .map(|c| {
                    let xg: f64 = gamma.iter().zip(&c.agg.xbar).map(|(g, x)| g * x).sum();
                    c.agg.weight * (c.agg.ybar.under(t) - xg)
                })
                .collect();
            let (a, v) = max_sq_dev_and_var(&u);
            let arm = if t { "treated" } else { "control" };
            ratio(a, scale * v, format!("theorem_a1_u_{arm}"), &mut flags)
        });
        // A constant weight vector contributes no fluctuation.
        let theorem_a1_w = if v_w > 0.0 {
            a_w / (scale * v_w)
        } else {
            flags.push("theorem_a1_w".into());
            0.0
        };
        theorem_a1_max = theorem_a1_u
            .iter()
            .copied()
            .fold(theorem_a1_max.max(theorem_a1_w), f64::max);
        blocks.push(BlockConditions {
            block_id: block.id.clone(),
            m,
            m1,
            m0,
            g,
            ratio_lemma1,
            weight_ratio,
            ratio_lemma2,
            theorem_a1_u,
            theorem_a1_w,
            flags,
        });
    }
    Ok(ConditionReport {
        blocks,
        theorem_a1_max,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NormalityDiagnostic {
    /// Kolmogorov-Smirnov distance to the standard normal.
    pub ks: f64,
    pub mean: f64,
    pub variance: f64,
    pub reps: usize,
    pub sd_theoretical: f64,
}

/// Draws `reps` assignments of block `b`, standardizes
/// `beta1_hat - beta1` by the theoretical standard deviation and measures the
/// distance of the draws from the standard normal. Draw `r` uses stream `r`.
pub fn normality_diagnostic(
    pop: &Population,
    b: usize,
    p: f64,
    gamma: &[f64],
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<NormalityDiagnostic> {
    if reps < 100 {
        return Err(Error::InvalidArgument(format!(
            "reps = {reps}; at least 100 are required"
        )));
    }
    let z = standardized_draws(pop, b, p, gamma, reps, seed, workers)?;
    Ok(NormalityDiagnostic {
        ks: ks_normal(&z.values),
        mean: mean(&z.values),
        variance: sample_variance(&z.values),
        reps,
        sd_theoretical: z.sd,
    })
}

struct Standardized {
    values: Vec<f64>,
    sd: f64,
}

fn standardized_draws(
    pop: &Population,
    b: usize,
    p: f64,
    gamma: &[f64],
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<Standardized> {
    let vr = schedule_variance_block(pop, b, p, gamma)?;
    if !(vr.value > 0.0) {
        return Err(Error::Degenerate(format!(
            "block {} has zero theoretical variance",
            pop.block(b).id
        )));
    }
    let sd = vr.value.sqrt();
    let (m1, _) = arm_sizes(pop, b, p)?;
    let block = pop.block(b);
    let m = block.m();
    let adj: Vec<f64> = block
        .clusters
        .iter()
        .map(|c| gamma.iter().zip(&c.agg.xbar).map(|(g, x)| g * x).sum())
        .collect();
    let estimand = block.schedule_mean(true) - block.schedule_mean(false);
    let one = |r: usize| -> f64 {
        let mut rng = rng_for(seed, r as u64);
        let asg = draw_with_rng(&[m], &[m1], &mut rng);
        let mut acc = [[0.0f64; 2]; 2];
        for (j, c) in block.clusters.iter().enumerate() {
            let t = asg.treated(0, j);
            let a = &mut acc[usize::from(!t)];
            a[0] += c.agg.weight;
            a[1] += c.agg.weight * (c.agg.ybar.under(t) - adj[j]);
        }
        let est = acc[0][1] / acc[0][0] - acc[1][1] / acc[1][0];
        (est - estimand) / sd
    };
    let values: Vec<f64> = if workers <= 1 {
        (0..reps).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(|| (0..reps).into_par_iter().map(one).collect())
    };
    Ok(Standardized { values, sd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{Outcome, UnitRecord};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn schedule(w: &[f64], y0: &[f64], y1: &[f64]) -> Population {
        let units = (0..w.len())
            .map(|j| UnitRecord {
                block_id: "A".into(),
                cluster_id: j.to_string(),
                unit_id: "1".into(),
                weight: w[j],
                covariates: vec![],
                outcome: Outcome::Schedule {
                    y0: y0[j],
                    y1: y1[j],
                },
                treated: None,
            })
            .collect();
        Population::from_units(units).unwrap()
    }

    #[test]
    fn hand_instance_m6() {
        // Weights {1,1,1,1,2,2}: wbar = 8/6, Ybar(1) = (1+2+3+4+2*5+2*6)/8 = 4,
        // Ybar(0) = 0 with Y(0) = {1,-1,1,-1,0,0}.
        let w = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let y1 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y0 = [1.0, -1.0, 1.0, -1.0, 0.0, 0.0];
        let pop = schedule(&w, &y0, &y1);
        let rep = condition_report(&pop, &[0.5], &[]).unwrap();
        let b = &rep.blocks[0];
        let wbar = 8.0 / 6.0;
        // D(1) = w (Y - 4) / wbar = {-3,-2,-1,0,2,4} * 0.75.
        let d1: Vec<f64> = [-3.0, -2.0, -1.0, 0.0, 2.0, 4.0]
            .iter()
            .map(|x| x * 0.75)
            .collect();
        let g1 = 16.0 * 0.5625;
        let s2d1 = d1.iter().map(|d| d * d).sum::<f64>() / 5.0;
        assert!((b.g[0] - g1).abs() < 1e-12);
        assert!((b.ratio_lemma1[0] - g1 / (3.0 * s2d1)).abs() < 1e-12);
        // D(0) = {1,-1,1,-1,0,0} * 0.75.
        let s2d0 = 4.0 * 0.5625 / 5.0;
        assert!((b.ratio_lemma1[1] - 0.5625 / (3.0 * s2d0)).abs() < 1e-12);
        let s2w = w.iter().map(|x| (x - wbar).powi(2)).sum::<f64>() / 5.0;
        assert!((b.weight_ratio[0] - 0.5 * s2w / (3.0 * wbar * wbar)).abs() < 1e-12);
        let s2diff = d1
            .iter()
            .zip([1.0, -1.0, 1.0, -1.0, 0.0, 0.0])
            .map(|(a, c)| (a - 0.75 * c).powi(2))
            .sum::<f64>()
            / 5.0;
        let var_d = s2d1 / 3.0 + s2d0 / 3.0 - s2diff / 6.0;
        assert!((b.ratio_lemma2 - g1 / (9.0 * var_d)).abs() < 1e-12);
        // U(1) = w Y(1) = {1,2,3,4,10,12}, mean 32/6.
        let u1: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 10.0, 12.0];
        let ub: f64 = 32.0 / 6.0;
        let a = u1.iter().map(|u| (u - ub).powi(2)).fold(0.0, f64::max);
        let v = u1.iter().map(|u| (u - ub).powi(2)).sum::<f64>() / 5.0;
        assert!((b.theorem_a1_u[0] - a / (0.25 * 6.0 * v)).abs() < 1e-12);
        let aw = w.iter().map(|x| (x - wbar).powi(2)).fold(0.0, f64::max);
        assert!((b.theorem_a1_w - aw / (0.25 * 6.0 * s2w)).abs() < 1e-12);
        assert!(b.flags.is_empty());
    }

    #[test]
    fn constant_weights_give_zero_weight_ratio() {
        let pop = schedule(
            &[3.0; 6],
            &[0.0, 1.0, 2.0, 0.0, 1.0, 5.0],
            &[1.0, 1.0, 2.0, 4.0, 1.0, 5.0],
        );
        let b = &condition_report(&pop, &[0.5], &[]).unwrap().blocks[0];
        assert_eq!(b.weight_ratio, [0.0, 0.0]);
        assert_eq!(b.theorem_a1_w, 0.0);
        assert!(b.flags.contains(&"theorem_a1_w".to_string()));
    }

    #[test]
    fn constant_outcomes_flag_infinity() {
        let pop = schedule(&[1.0; 4], &[2.0; 4], &[3.0; 4]);
        let b = &condition_report(&pop, &[0.5], &[]).unwrap().blocks[0];
        assert!(b.ratio_lemma1[0].is_infinite() && b.ratio_lemma1[1].is_infinite());
        assert!(b.ratio_lemma2.is_infinite());
        assert!(b.flags.iter().any(|f| f == "ratio_lemma1_treated"));
        assert!(b.flags.iter().any(|f| f == "ratio_lemma2"));
    }

    #[test]
    fn replication_scales_lemma1_ratio_exactly() {
        let w = [1.0, 2.5, 0.7, 1.3, 2.0, 0.4];
        let pop = schedule(
            &w,
            &[0.0, 1.0, 4.0, 2.0, -1.0, 3.0],
            &[1.0, 3.0, 3.5, 5.0, 0.0, 2.0],
        );
        let base = condition_report(&pop, &[0.5], &[]).unwrap().blocks[0].clone();
        for k in [2usize, 4] {
            let rep = condition_report(&pop.replicate(k), &[0.5], &[])
                .unwrap()
                .blocks[0]
                .clone();
            assert_eq!(rep.g, base.g);
            let (kf, m) = (k as f64, 6.0);
            let factor = (kf * m - 1.0) / (kf * kf * (m - 1.0));
            for i in 0..2 {
                assert!(
                    (rep.ratio_lemma1[i] - base.ratio_lemma1[i] * factor).abs()
                        < 1e-14 * base.ratio_lemma1[i]
                );
                assert!(rep.ratio_lemma1[i] < base.ratio_lemma1[i]);
                assert!(rep.weight_ratio[i] < base.weight_ratio[i]);
                assert!(rep.theorem_a1_u[i] < base.theorem_a1_u[i]);
            }
            assert!(rep.ratio_lemma2 < base.ratio_lemma2);
        }
    }

    #[test]
    fn ks_calibration_with_true_normals() {
        let reps = 500;
        let band = 1.36 / (reps as f64).sqrt();
        let mut inside = 0;
        for s in 0..50u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            let z: Vec<f64> = (0..reps).map(|_| StandardNormal.sample(&mut rng)).collect();
            if ks_normal(&z) < band {
                inside += 1;
            }
        }
        assert!(inside >= 45, "{inside}/50");
    }

    #[test]
    fn standardized_draws_have_unit_scale_under_equal_weights() {
        let m = 40;
        let w = vec![1.0; m];
        let y0: Vec<f64> = (0..m).map(|j| ((j * 37 % 11) as f64).sqrt()).collect();
        let y1: Vec<f64> = y0
            .iter()
            .enumerate()
            .map(|(j, y)| y + 0.5 + (j % 3) as f64 * 0.2)
            .collect();
        let pop = schedule(&w, &y0, &y1);
        let reps = 4000;
        let d = normality_diagnostic(&pop, 0, 0.5, &[], reps, 11, 2).unwrap();
        let band = 3.0 / (reps as f64).sqrt();
        assert!(d.mean.abs() < band, "{}", d.mean);
        assert!((d.variance - 1.0).abs() < 3.0 * band, "{}", d.variance);
        let again = normality_diagnostic(&pop, 0, 0.5, &[], reps, 11, 1).unwrap();
        assert_eq!(d.ks.to_bits(), again.ks.to_bits());
    }

    #[test]
    fn replication_moves_draws_towards_normality() {
        let mut closer = 0;
        for s in 0..20u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + s);
            // Skewed outcomes: squared exponentials.
            let y0: Vec<f64> = (0..10)
                .map(|_| {
                    let e: f64 = rand_distr::Exp1.sample(&mut rng);
                    e * e
                })
                .collect();
            let y1: Vec<f64> = y0.iter().map(|y| 1.5 * y + 0.3).collect();
            let pop = schedule(&[1.0; 10], &y0, &y1);
            let base = normality_diagnostic(&pop, 0, 0.5, &[], 2000, s, 1).unwrap().ks;
            let grown = normality_diagnostic(&pop.replicate(8), 0, 0.5, &[], 2000, s, 1)
                .unwrap()
                .ks;
            closer += usize::from(grown < base);
        }
        assert!(closer >= 16, "{closer}/20");
    }

    #[test]
    fn zero_variance_is_an_error() {
        let pop = schedule(&[1.0; 4], &[2.0; 4], &[3.0; 4]);
        assert!(matches!(
            normality_diagnostic(&pop, 0, 0.5, &[], 200, 1, 1),
            Err(Error::Degenerate(_))
        ));
        let pop = schedule(&[1.0; 4], &[0.0, 1.0, 2.0, 3.0], &[3.0; 4]);
        assert!(normality_diagnostic(&pop, 0, 0.5, &[], 50, 1, 1).is_err());
    }
}
