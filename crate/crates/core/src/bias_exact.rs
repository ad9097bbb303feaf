//! Exact expectations over the full randomization distribution and the Hartley
//! ratio-bias decomposition.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;
use crate::population::Population;
use crate::randomize::{treated_counts, AssignmentSpace};

/// Assignments per work unit. Fixed so that the reduction order, and hence the
/// result, does not depend on the number of workers.
const CHUNK: u128 = 1 << 14;

/// Statistic evaluated on each assignment with revealed outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    /// Unadjusted block effect `ybar(1) - ybar(0)`.
    BlockAte { block: usize },
    /// Unadjusted pooled effect with precision weights.
    PooledAte,
    /// Weighted mean outcome of one arm of a block.
    ArmMean { block: usize, treated: bool },
    /// Mean treated cluster weight `w1 / m1`.
    TreatedMeanWeight { block: usize },
}

/// Cluster weights and both cluster means, per block.
#[derive(Debug, Clone)]
pub struct ClusterTable {
    pub w: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    pub y0: Vec<Vec<f64>>,
}

impl ClusterTable {
    pub fn new(pop: &Population) -> Result<ClusterTable> {
        pop.require_schedule()?;
        let col = |f: &dyn Fn(&crate::population::Cluster) -> f64| -> Vec<Vec<f64>> {
            pop.blocks()
                .iter()
                .map(|b| b.clusters.iter().map(f).collect())
                .collect()
        };
        Ok(ClusterTable {
            w: col(&|c| c.agg.weight),
            y1: col(&|c| c.agg.ybar.under(true)),
            y0: col(&|c| c.agg.ybar.under(false)),
        })
    }

    /// `(w_t, sum_j w_j Y_j(t))` over the given arm of block `b`.
    fn arm(&self, b: usize, treated_idx: &[usize], treated: bool) -> (f64, f64) {
        let w = &self.w[b];
        let y = if treated { &self.y1[b] } else { &self.y0[b] };
        let mut sw = NeumaierSum::new();
        let mut swy = NeumaierSum::new();
        if treated {
            for &j in treated_idx {
                sw.add(w[j]);
                swy.add(w[j] * y[j]);
            }
        } else {
            let mut next = treated_idx.iter().peekable();
            for j in 0..w.len() {
                if next.peek() == Some(&&j) {
                    next.next();
                    continue;
                }
                sw.add(w[j]);
                swy.add(w[j] * y[j]);
            }
        }
        (sw.value(), swy.value())
    }

    fn arm_mean(&self, b: usize, idx: &[usize], treated: bool) -> f64 {
        let (w, wy) = self.arm(b, idx, treated);
        wy / w
    }

    fn evaluate(&self, stat: Statistic, idx: &[Vec<usize>]) -> f64 {
        match stat {
            Statistic::BlockAte { block } => {
                self.arm_mean(block, &idx[block], true) - self.arm_mean(block, &idx[block], false)
            }
            Statistic::ArmMean { block, treated } => self.arm_mean(block, &idx[block], treated),
            Statistic::TreatedMeanWeight { block } => {
                self.arm(block, &idx[block], true).0 / idx[block].len() as f64
            }
            Statistic::PooledAte => {
                let mut num = NeumaierSum::new();
                let mut den = NeumaierSum::new();
                for (b, t) in idx.iter().enumerate() {
                    let (w1, wy1) = self.arm(b, t, true);
                    let (w0, wy0) = self.arm(b, t, false);
                    let k = w1 * w0 / (w1 + w0);
                    num.add(k * (wy1 / w1 - wy0 / w0));
                    den.add(k);
                }
                num.value() / den.value()
            }
        }
    }
}

/// Compensated sum of `f` over every assignment of `space`, split into fixed
/// chunks evaluated on `workers` threads and merged in chunk order.
pub fn sum_over_space<F>(space: &AssignmentSpace, workers: usize, f: F) -> Result<f64>
where
    F: Fn(&[Vec<usize>]) -> f64 + Sync,
{
    let total = space.len();
    let n_chunks = total.div_ceil(CHUNK);
    let chunk_sum = |c: u128| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(total);
        let mut cursor = space.cursor_at(start);
        let mut s = NeumaierSum::new();
        for _ in start..end {
            s.add(f(cursor.treated_indices()));
            cursor.advance();
        }
        s
    };
    let partials: Vec<NeumaierSum> = if workers <= 1 || n_chunks <= 1 {
        (0..n_chunks).map(chunk_sum).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..n_chunks as u64)
                .into_par_iter()
                .map(|c| chunk_sum(c as u128))
                .collect()
        })
    };
    let mut s = NeumaierSum::new();
    for p in &partials {
        s.merge(p);
    }
    Ok(s.value())
}

/// Mean of `stat` over all assignments with treated counts `round(p_b m_b)`.
pub fn exact_expectation(
    pop: &Population,
    p: &[f64],
    stat: Statistic,
    cap: u128,
    workers: usize,
) -> Result<f64> {
    let table = ClusterTable::new(pop)?;
    let space = AssignmentSpace::new(pop.cluster_counts(), treated_counts(pop, p)?, cap)?;
    let s = sum_over_space(&space, workers, |idx| table.evaluate(stat, idx))?;
    Ok(s / space.len() as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HartleyReport {
    pub block_id: String,
    pub m: usize,
    pub m1: usize,
    pub n_assignments: u128,
    /// `-(m/w) Cov(ybar(1), w1/m1)`.
    pub bias_treated: f64,
    /// `(m/w) Cov(ybar(0), w0/m0)`.
    pub bias_control: f64,
    pub total: f64,
    /// Exact mean of the block estimate over the randomization distribution.
    pub expectation: f64,
    pub estimand: f64,
    /// `total - (expectation - estimand)`.
    pub identity_residual: f64,
}

/// Exact ratio bias of the unadjusted block effect via the two covariances,
/// each computed by two-pass enumeration of the block's assignments.
pub fn hartley_bias(
    pop: &Population,
    block: usize,
    p: f64,
    cap: u128,
    workers: usize,
) -> Result<HartleyReport> {
    let table = ClusterTable::new(pop)?;
    let bl = pop.block(block);
    let (m1, m0) = crate::variance::arm_sizes(pop, block, p)?;
    let space = AssignmentSpace::new(vec![bl.m()], vec![m1], cap)?;
    let n = space.len() as f64;
    let sub = ClusterTable {
        w: vec![table.w[block].clone()],
        y1: vec![table.y1[block].clone()],
        y0: vec![table.y0[block].clone()],
    };
    let mean_of = |f: &(dyn Fn(&[Vec<usize>]) -> f64 + Sync)| -> Result<f64> {
        Ok(sum_over_space(&space, workers, f)? / n)
    };
    let ybar1 = |idx: &[Vec<usize>]| sub.arm_mean(0, &idx[0], true);
    let ybar0 = |idx: &[Vec<usize>]| sub.arm_mean(0, &idx[0], false);
    let r1 = |idx: &[Vec<usize>]| sub.arm(0, &idx[0], true).0 / m1 as f64;
    let r0 = |idx: &[Vec<usize>]| sub.arm(0, &idx[0], false).0 / m0 as f64;
    let (e_y1, e_y0, e_r1, e_r0) = (
        mean_of(&ybar1)?,
        mean_of(&ybar0)?,
        mean_of(&r1)?,
        mean_of(&r0)?,
    );
    // Equal weights fix each arm's weight total, so both covariances vanish.
    let equal = sub.w[0].iter().all(|&w| w == sub.w[0][0]);
    let (cov1, cov0) = if equal {
        (0.0, 0.0)
    } else {
        (
            mean_of(&|idx| (ybar1(idx) - e_y1) * (r1(idx) - e_r1))?,
            mean_of(&|idx| (ybar0(idx) - e_y0) * (r0(idx) - e_r0))?,
        )
    };
    let scale = bl.m() as f64 / bl.weight();
    let bias_treated = -scale * cov1;
    let bias_control = scale * cov0;
    let total = bias_treated + bias_control;
    let expectation = e_y1 - e_y0;
    let estimand = bl.schedule_mean(true) - bl.schedule_mean(false);
    Ok(HartleyReport {
        block_id: bl.id.clone(),
        m: bl.m(),
        m1,
        n_assignments: space.len(),
        bias_treated,
        bias_control,
        total,
        expectation,
        estimand,
        identity_residual: total - (expectation - estimand),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{block_ate, pooled_ate, Adjustment};
    use crate::population::{Outcome, UnitRecord};
    use crate::randomize::enumerate_assignments;

    fn schedule(blocks: &[(&str, &[f64], &[f64], &[f64])]) -> Population {
        let mut units = Vec::new();
        for (b, w, y0, y1) in blocks {
            for j in 0..w.len() {
                units.push(UnitRecord {
                    block_id: b.to_string(),
                    cluster_id: j.to_string(),
                    unit_id: "1".into(),
                    weight: w[j],
                    covariates: vec![],
                    outcome: Outcome::Schedule {
                        y0: y0[j],
                        y1: y1[j],
                    },
                    treated: None,
                });
            }
        }
        Population::from_units(units).unwrap()
    }

    #[test]
    fn hand_enumeration_m4() {
        // Weights {1,1,2,4}; Y(0) = {0,1,2,3}, Y(1) = {1,3,2,7}.
        let pop = schedule(&[(
            "A",
            &[1.0, 1.0, 2.0, 4.0],
            &[0.0, 1.0, 2.0, 3.0],
            &[1.0, 3.0, 2.0, 7.0],
        )]);
        // Direct average over the 6 treated pairs.
        let w = [1.0, 1.0, 2.0, 4.0];
        let y0 = [0.0, 1.0, 2.0, 3.0];
        let y1 = [1.0, 3.0, 2.0, 7.0];
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let mut total = 0.0;
        for (a, b) in pairs {
            let t1 = (w[a] * y1[a] + w[b] * y1[b]) / (w[a] + w[b]);
            let rest: Vec<usize> = (0..4).filter(|&j| j != a && j != b).collect();
            let t0 = rest.iter().map(|&j| w[j] * y0[j]).sum::<f64>()
                / rest.iter().map(|&j| w[j]).sum::<f64>();
            total += t1 - t0;
        }
        let hand = total / 6.0;
        let e = exact_expectation(&pop, &[0.5], Statistic::BlockAte { block: 0 }, 100, 1).unwrap();
        assert!((e - hand).abs() < 1e-15);
        let r = hartley_bias(&pop, 0, 0.5, 100, 1).unwrap();
        assert!(r.identity_residual.abs() < 1e-12);
        assert_eq!(r.n_assignments, 6);
    }

    #[test]
    fn equal_weights_are_unbiased() {
        let pop = schedule(&[(
            "A",
            &[2.0; 5],
            &[0.0, 1.0, 2.0, 3.0, 9.0],
            &[1.0, 3.0, 2.0, 7.0, 0.0],
        )]);
        let r = hartley_bias(&pop, 0, 0.4, 100, 1).unwrap();
        assert!(r.total.abs() < 1e-14);
        assert!((r.expectation - r.estimand).abs() < 1e-14);
    }

    #[test]
    fn constant_outcomes_are_unbiased() {
        let pop = schedule(&[("A", &[1.0, 3.0, 0.5, 2.0], &[2.0; 4], &[5.0; 4])]);
        let r = hartley_bias(&pop, 0, 0.5, 100, 1).unwrap();
        assert!(r.total.abs() < 1e-14);
    }

    #[test]
    fn mean_treated_weight_is_block_mean_weight() {
        let pop = schedule(&[("A", &[1.0, 3.0, 0.5, 2.0, 7.0], &[0.0; 5], &[0.0; 5])]);
        let e = exact_expectation(
            &pop,
            &[0.4],
            Statistic::TreatedMeanWeight { block: 0 },
            100,
            1,
        )
        .unwrap();
        assert!((e - 13.5 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn larger_clusters_with_larger_treated_outcomes_give_negative_first_term() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y1: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let pop = schedule(&[("A", &w, &[0.0; 6], &y1)]);
        let r = hartley_bias(&pop, 0, 0.5, 100, 1).unwrap();
        assert!(r.bias_treated < 0.0);
        assert_eq!(r.bias_control, 0.0);
    }

    #[test]
    fn statistics_match_library_estimators() {
        let pop = schedule(&[
            (
                "A",
                &[1.0, 2.0, 0.5, 3.0],
                &[0.0, 1.0, 4.0, 2.0],
                &[1.0, 2.0, 3.0, 5.0],
            ),
            ("B", &[2.0, 0.7, 1.1], &[1.0, -1.0, 0.5], &[2.0, 0.0, 2.5]),
        ]);
        let space = enumerate_assignments(&pop, &[0.5, 1.0 / 3.0], 1000).unwrap();
        let (mut sb, mut sp) = (0.0, 0.0);
        for a in space.iter() {
            sb += block_ate(&pop, &a, &Adjustment::Unadjusted).unwrap()[1].beta1;
            sp += pooled_ate(&pop, &a, &Adjustment::Unadjusted).unwrap().beta1;
        }
        let n = space.len() as f64;
        let p = [0.5, 1.0 / 3.0];
        let eb = exact_expectation(&pop, &p, Statistic::BlockAte { block: 1 }, 1000, 1).unwrap();
        let ep = exact_expectation(&pop, &p, Statistic::PooledAte, 1000, 1).unwrap();
        assert!((eb - sb / n).abs() < 1e-14);
        assert!((ep - sp / n).abs() < 1e-14);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let w: Vec<f64> = (0..18).map(|j| 1.0 + (j * 7 % 5) as f64 * 0.37).collect();
        let y0: Vec<f64> = (0..18).map(|j| (j as f64).sin()).collect();
        let y1: Vec<f64> = (0..18).map(|j| (j as f64).cos() + 0.3).collect();
        let pop = schedule(&[("A", &w, &y0, &y1)]);
        let a =
            exact_expectation(&pop, &[0.5], Statistic::BlockAte { block: 0 }, 1 << 20, 1).unwrap();
        let b =
            exact_expectation(&pop, &[0.5], Statistic::BlockAte { block: 0 }, 1 << 20, 4).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let h = hartley_bias(&pop, 0, 0.5, 1 << 20, 3).unwrap();
        assert!(h.identity_residual.abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let pop = schedule(&[("A", &[1.0; 20], &[0.0; 20], &[0.0; 20])]);
        assert!(matches!(
            exact_expectation(&pop, &[0.5], Statistic::PooledAte, 1000, 1),
            Err(Error::EnumerationCap { count: 184756, .. })
        ));
    }
}
