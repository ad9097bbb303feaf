//! Closed-form weighted ratio estimators: block treatment effects with and
//! without covariate adjustment, the pooled precision-weighted effect, and the
//! assignment-free estimands of a potential-outcome schedule.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::population::{block_summary, BlockSummary, Population};
use crate::randomize::Assignment;

/// How the covariate slope entering the closed forms is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Adjustment {
    /// Ignore covariates.
    Unadjusted,
    /// One slope shared across blocks, estimated from the data.
    Estimated,
    /// A separate slope per block, each estimated within its block.
    EstimatedPerBlock,
    /// A given shared slope, used verbatim.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlockEstimate {
    pub block_id: String,
    pub beta1: f64,
    /// Intercept `p* ybar(1) + (1 - p*) ybar(0)`.
    pub beta0: f64,
    /// Weighted arm means `(treated, control)`.
    pub arm_means: (f64, f64),
    /// Treated minus control weighted covariate means; empty without adjustment.
    pub covariate_shift: Vec<f64>,
    /// Slope used for this block; empty without adjustment.
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PooledEstimate {
    pub beta1: f64,
    /// Precision weights `w1 w0 / w` per block.
    pub precision_weights: Vec<f64>,
    /// Unadjusted block contrasts `ybar(1) - ybar(0)`.
    pub block_contrasts: Vec<f64>,
    /// Precision-weighted covariate shift.
    pub covariate_shift: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Weighted mean of observed cluster means over arm `treated` of block `b`.
pub fn ratio_mean(pop: &Population, asg: &Assignment, b: usize, treated: bool) -> Result<f64> {
    let s = &block_summary(pop, Some(asg))?[b];
    let arms = s.arms.as_ref().expect("assignment supplied");
    Ok(if treated { arms.ybar1 } else { arms.ybar0 })
}

/// Per-block effects `ybar(1) - ybar(0) - (xbar1 - xbar0) gamma`.
pub fn block_ate(
    pop: &Population,
    asg: &Assignment,
    adj: &Adjustment,
) -> Result<Vec<BlockEstimate>> {
    let summaries = block_summary(pop, Some(asg))?;
    let v = pop.v();
    let gammas: Vec<Vec<f64>> = match adj {
        Adjustment::Unadjusted => vec![Vec::new(); pop.h()],
        Adjustment::Fixed(g) => {
            if g.len() != v {
                return Err(Error::DimensionMismatch {
                    what: "gamma",
                    expected: v,
                    got: g.len(),
                });
            }
            vec![g.clone(); pop.h()]
        }
        Adjustment::Estimated if v == 0 => vec![Vec::new(); pop.h()],
        Adjustment::Estimated => vec![interacted_gamma(pop, asg, None)?; pop.h()],
        Adjustment::EstimatedPerBlock if v == 0 => vec![Vec::new(); pop.h()],
        Adjustment::EstimatedPerBlock => (0..pop.h())
            .map(|b| interacted_gamma(pop, asg, Some(b)))
            .collect::<Result<_>>()?,
    };
    Ok(summaries
        .iter()
        .zip(gammas)
        .map(|(s, g)| block_estimate(s, g))
        .collect())
}

fn block_estimate(s: &BlockSummary, gamma: Vec<f64>) -> BlockEstimate {
    let a = s.arms.as_ref().expect("assignment supplied");
    let shift: Vec<f64> = if gamma.is_empty() {
        Vec::new()
    } else {
        a.xbar1
            .iter()
            .zip(&a.xbar0)
            .map(|(x1, x0)| x1 - x0)
            .collect()
    };
    let adj = dot(&shift, &gamma);
    BlockEstimate {
        block_id: s.id.clone(),
        beta1: a.ybar1 - a.ybar0 - adj,
        beta0: a.pstar * a.ybar1 + (1.0 - a.pstar) * a.ybar0,
        arm_means: (a.ybar1, a.ybar0),
        covariate_shift: shift,
        gamma,
    }
}

/// Pooled effect: precision-weighted block contrasts minus the precision-weighted
/// covariate shift times the slope.
pub fn pooled_ate(pop: &Population, asg: &Assignment, adj: &Adjustment) -> Result<PooledEstimate> {
    let summaries = block_summary(pop, Some(asg))?;
    let v = pop.v();
    let gamma = match adj {
        Adjustment::Unadjusted => Vec::new(),
        Adjustment::Estimated if v == 0 => Vec::new(),
        Adjustment::Estimated => pooled_gamma(pop, asg, &summaries)?,
        Adjustment::Fixed(g) => {
            if g.len() != v {
                return Err(Error::DimensionMismatch {
                    what: "gamma",
                    expected: v,
                    got: g.len(),
                });
            }
            g.clone()
        }
        Adjustment::EstimatedPerBlock => {
            return Err(Error::InvalidArgument(
                "the pooled effect uses a single shared slope".into(),
            ))
        }
    };
    let (k, contrast, shift) = pooled_parts(&summaries, gamma.len());
    let ksum = compensated_sum(k.iter().copied());
    let contrast_mean = compensated_sum(k.iter().zip(&contrast).map(|(a, c)| a * c)) / ksum;
    let shift_mean: Vec<f64> = (0..gamma.len())
        .map(|q| compensated_sum(k.iter().zip(&shift).map(|(a, s)| a * s[q])) / ksum)
        .collect();
    Ok(PooledEstimate {
        beta1: contrast_mean - dot(&shift_mean, &gamma),
        precision_weights: k,
        block_contrasts: contrast,
        covariate_shift: shift_mean,
        gamma,
    })
}

type PooledParts = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

fn pooled_parts(summaries: &[BlockSummary], v: usize) -> PooledParts {
    let mut k = Vec::new();
    let mut contrast = Vec::new();
    let mut shift = Vec::new();
    for s in summaries {
        let a = s.arms.as_ref().expect("assignment supplied");
        k.push(a.w1 * a.w0 / s.w);
        contrast.push(a.ybar1 - a.ybar0);
        shift.push((0..v).map(|q| a.xbar1[q] - a.xbar0[q]).collect());
    }
    (k, contrast, shift)
}

/// Slope from the interacted regression, by partialling out the block-by-arm
/// indicators: covariates and outcomes are centred at their weighted block-arm
/// means. With `only = Some(b)` the sums run over block `b` alone.
fn interacted_gamma(pop: &Population, asg: &Assignment, only: Option<usize>) -> Result<Vec<f64>> {
    let summaries = block_summary(pop, Some(asg))?;
    let v = pop.v();
    let mut sxx = DMatrix::zeros(v, v);
    let mut sxy = DVector::zeros(v);
    for (b, (block, s)) in pop.blocks().iter().zip(&summaries).enumerate() {
        if only.is_some_and(|o| o != b) {
            continue;
        }
        let a = s.arms.as_ref().expect("assignment supplied");
        for (j, c) in block.clusters.iter().enumerate() {
            let t = asg.treated(b, j);
            let (xm, ym) = if t {
                (&a.xbar1, a.ybar1)
            } else {
                (&a.xbar0, a.ybar0)
            };
            for u in &c.units {
                let xr = DVector::from_iterator(v, u.covariates.iter().zip(xm).map(|(x, m)| x - m));
                let yr = u.outcome.under(t) - ym;
                sxx.ger(u.weight, &xr, &xr, 1.0);
                sxy.axpy(u.weight * yr, &xr, 1.0);
            }
        }
    }
    solve_spd(sxx, sxy, "within block-arm covariate gram")
}

/// Slope from the restricted regression: partial out the block indicators and
/// the single centred treatment column.
fn pooled_gamma(
    pop: &Population,
    asg: &Assignment,
    summaries: &[BlockSummary],
) -> Result<Vec<f64>> {
    let v = pop.v();
    let (k, contrast, shift) = pooled_parts(summaries, v);
    let ksum: f64 = compensated_sum(k.iter().copied());
    let kappa_y = compensated_sum(k.iter().zip(&contrast).map(|(a, c)| a * c)) / ksum;
    let kappa_x: Vec<f64> = (0..v)
        .map(|q| compensated_sum(k.iter().zip(&shift).map(|(a, s)| a * s[q])) / ksum)
        .collect();
    let mut sxx = DMatrix::zeros(v, v);
    let mut sxy = DVector::zeros(v);
    for (b, (block, s)) in pop.blocks().iter().zip(summaries).enumerate() {
        let a = s.arms.as_ref().expect("assignment supplied");
        let ybar = a.pstar * a.ybar1 + (1.0 - a.pstar) * a.ybar0;
        for (j, c) in block.clusters.iter().enumerate() {
            let t = asg.treated(b, j);
            let tt = if t { 1.0 - a.pstar } else { -a.pstar };
            for u in &c.units {
                let xr = DVector::from_iterator(
                    v,
                    (0..v).map(|q| u.covariates[q] - s.xbarbar[q] - tt * kappa_x[q]),
                );
                let yr = u.outcome.under(t) - ybar - tt * kappa_y;
                sxx.ger(u.weight, &xr, &xr, 1.0);
                sxy.axpy(u.weight * yr, &xr, 1.0);
            }
        }
    }
    solve_spd(sxx, sxy, "partialled covariate gram")
}

pub(crate) fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let scale = a.diagonal().amax();
    let sv = a.singular_values();
    if !(scale > 0.0) || sv.min() / sv.max() < 1e-13 {
        return Err(Error::Singular(what.to_string()));
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(chol.solve(&b).iter().copied().collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Assignment-free estimands of a potential-outcome schedule.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScheduleEstimands {
    /// `Ybar_b(1) - Ybar_b(0)` per block.
    pub per_block: Vec<f64>,
    /// Pooled estimand with block weights `(m_b/m) p_b (1-p_b) wbar_b`.
    pub pooled: f64,
}

/// Block estimands and the pooled estimand for target proportions `p`
/// (one per block, or a single value for all blocks).
pub fn schedule_estimands(pop: &Population, p: &[f64]) -> Result<ScheduleEstimands> {
    pop.require_schedule()?;
    let p = expand(p, pop.h())?;
    let summaries = block_summary(pop, None)?;
    let m = pop.m() as f64;
    let per_block: Vec<f64> = summaries
        .iter()
        .map(|s| {
            let (y1, y0) = s.schedule_means.expect("schedule mode");
            y1 - y0
        })
        .collect();
    let weights: Vec<f64> = summaries
        .iter()
        .zip(&p)
        .map(|(s, &pb)| (s.m as f64 / m) * pb * (1.0 - pb) * s.wbar)
        .collect();
    let total = compensated_sum(weights.iter().copied());
    let pooled = compensated_sum(weights.iter().zip(&per_block).map(|(a, b)| a * b)) / total;
    Ok(ScheduleEstimands { per_block, pooled })
}

/// Expands a single proportion to all blocks and validates the range.
pub fn expand(p: &[f64], h: usize) -> Result<Vec<f64>> {
    let out = match p.len() {
        1 => vec![p[0]; h],
        n if n == h => p.to_vec(),
        n => {
            return Err(Error::DimensionMismatch {
                what: "treated proportions",
                expected: h,
                got: n,
            })
        }
    };
    if let Some(bad) = out.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "treated proportion {bad} outside (0,1)"
        )));
    }
    Ok(out)
}

/// Which part of the covariate variation enters a schedule moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentPart {
    /// Deviations from the block mean.
    Total,
    /// Cluster means' deviations from the block mean, weighted by cluster weight.
    Between,
    /// Deviations from the cluster mean.
    Within,
}

/// Covariate gram and covariate-outcome cross moment of a schedule, each
/// averaged over clusters (weights `1/m`), with the outcome mixed across arms as
/// `p_b Y(1) + (1 - p_b) Y(0)`.
pub fn schedule_moments(
    pop: &Population,
    p: &[f64],
    part: MomentPart,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    pop.require_schedule()?;
    let p = expand(p, pop.h())?;
    let v = pop.v();
    let m = pop.m() as f64;
    let mut sxx = DMatrix::zeros(v, v);
    let mut sxy = DVector::zeros(v);
    for (block, &pb) in pop.blocks().iter().zip(&p) {
        let xbb = block.xbarbar();
        for c in &block.clusters {
            match part {
                MomentPart::Between => {
                    let d =
                        DVector::from_iterator(v, c.agg.xbar.iter().zip(&xbb).map(|(x, m)| x - m));
                    let y = pb * c.agg.ybar.under(true) + (1.0 - pb) * c.agg.ybar.under(false);
                    sxx.ger(c.agg.weight, &d, &d, 1.0);
                    sxy.axpy(c.agg.weight * y, &d, 1.0);
                }
                MomentPart::Total | MomentPart::Within => {
                    let centre = if part == MomentPart::Total {
                        &xbb
                    } else {
                        &c.agg.xbar
                    };
                    for u in &c.units {
                        let d = DVector::from_iterator(
                            v,
                            u.covariates.iter().zip(centre).map(|(x, m)| x - m),
                        );
                        let y = pb * u.outcome.under(true) + (1.0 - pb) * u.outcome.under(false);
                        sxx.ger(u.weight, &d, &d, 1.0);
                        sxy.axpy(u.weight * y, &d, 1.0);
                    }
                }
            }
        }
    }
    Ok((sxx / m, sxy / m))
}

/// Population regression slope of the schedule: the full-schedule analogue of
/// the estimated covariate coefficient. Empty when there are no covariates.
pub fn schedule_gamma(pop: &Population, p: &[f64]) -> Result<Vec<f64>> {
    if pop.v() == 0 {
        pop.require_schedule()?;
        return Ok(Vec::new());
    }
    let (sxx, sxy) = schedule_moments(pop, p, MomentPart::Total)?;
    solve_spd(sxx, sxy, "schedule covariate gram")
}
