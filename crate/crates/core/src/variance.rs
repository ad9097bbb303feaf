//! Variance estimators: the estimable design-based variance with degrees-of-freedom
//! adjustments, the cluster-robust sandwich, the theoretical variances of a
//! potential-outcome schedule, and t-based confidence intervals.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{expand, schedule_estimands};
use crate::numeric::{compensated_sum, round_half_even, t_quantile, NeumaierSum};
use crate::population::{block_summary, Population};
use crate::wls::{ModelSpec, WlsFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum VarianceMethod {
    DesignBased,
    Crse,
    ScheduleTheoretical,
    PooledTheorem,
}

impl VarianceMethod {
    pub fn label(self) -> &'static str {
        match self {
            VarianceMethod::DesignBased => "design",
            VarianceMethod::Crse => "crse",
            VarianceMethod::ScheduleTheoretical => "schedule",
            VarianceMethod::PooledTheorem => "pooled-theorem",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VarianceReport {
    pub method: VarianceMethod,
    pub value: f64,
    /// Degrees of freedom for intervals (infinite for theoretical variances).
    pub df: f64,
    /// Small-sample factor applied to the sandwich (1 where none applies).
    pub correction: f64,
    pub components: Vec<(String, f64)>,
}

impl VarianceReport {
    pub fn se(&self) -> f64 {
        self.value.sqrt()
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

/// Cluster-robust small-sample factor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Correction {
    /// `m / (m - 1)` with `m` the total number of clusters.
    ClusterCount,
    Fixed(f64),
}

/// Share of the covariate degrees of freedom charged to a block.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum QStar {
    /// `w_b / sum_a w_a`.
    WeightShare,
    Fixed(f64),
}

/// Degrees-of-freedom rule for design-based intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DfRule {
    /// Satterthwaite combination of the two arm denominators.
    Satterthwaite,
    /// The smaller of the two arm denominators.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VarianceConfig {
    pub g: Correction,
    pub qstar: QStar,
    pub df_rule: DfRule,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        VarianceConfig {
            g: Correction::ClusterCount,
            qstar: QStar::WeightShare,
            df_rule: DfRule::Satterthwaite,
        }
    }
}

/// Scaled cluster residuals of a schedule for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledResiduals {
    /// `w_j (Y_j(1) - Ybar(1) - xtilde_j gamma) / wbar` per cluster.
    pub d1: Vec<f64>,
    pub d0: Vec<f64>,
    /// Sample variances (divisor `m - 1`) of `d1`, `d0` and `d1 - d0`.
    pub s2_1: f64,
    pub s2_0: f64,
    pub s2_diff: f64,
}

/// Scaled residuals for block `b` with slope `gamma` (empty for no adjustment).
pub fn scaled_residuals(pop: &Population, b: usize, gamma: &[f64]) -> Result<ScaledResiduals> {
    pop.require_schedule()?;
    let block = pop.block(b);
    if !gamma.is_empty() && gamma.len() != pop.v() {
        return Err(Error::DimensionMismatch {
            what: "gamma",
            expected: pop.v(),
            got: gamma.len(),
        });
    }
    let wbar = block.mean_weight();
    let xbb = block.xbarbar();
    let (ybb1, ybb0) = (block.schedule_mean(true), block.schedule_mean(false));
    let mut d1 = Vec::with_capacity(block.m());
    let mut d0 = Vec::with_capacity(block.m());
    for c in &block.clusters {
        let adj: f64 = gamma
            .iter()
            .enumerate()
            .map(|(q, g)| (c.agg.xbar[q] - xbb[q]) * g)
            .sum();
        d1.push(c.agg.weight * (c.agg.ybar.under(true) - ybb1 - adj) / wbar);
        d0.push(c.agg.weight * (c.agg.ybar.under(false) - ybb0 - adj) / wbar);
    }
    let m1 = (block.m() - 1) as f64;
    let s2_1 = compensated_sum(d1.iter().map(|d| d * d)) / m1;
    let s2_0 = compensated_sum(d0.iter().map(|d| d * d)) / m1;
    let s2_diff = compensated_sum(d1.iter().zip(&d0).map(|(a, c)| (a - c) * (a - c))) / m1;
    Ok(ScaledResiduals {
        d1,
        d0,
        s2_1,
        s2_0,
        s2_diff,
    })
}

/// Treated count for block `b` under proportion `p`, with both arms nonempty.
pub fn arm_sizes(pop: &Population, b: usize, p: f64) -> Result<(usize, usize)> {
    let m = pop.block(b).m();
    let m1 = if p > 0.0 && p < 1.0 {
        round_half_even(p * m as f64) as usize
    } else {
        0
    };
    if m1 < 1 || m1 + 1 > m {
        return Err(Error::InfeasibleCount {
            block: pop.block(b).id.clone(),
            p,
            m,
            m1,
            max: m - 1,
        });
    }
    Ok((m1, m - m1))
}

/// Theoretical variance `S2_D(1)/m1 + S2_D(0)/m0 - S2(D)/m` of the
/// slope-adjusted ratio difference in block `b`.
pub fn schedule_variance_block(
    pop: &Population,
    b: usize,
    p: f64,
    gamma: &[f64],
) -> Result<VarianceReport> {
    let r = scaled_residuals(pop, b, gamma)?;
    let (m1, m0) = arm_sizes(pop, b, p)?;
    let m = (m1 + m0) as f64;
    let t1 = r.s2_1 / m1 as f64;
    let t0 = r.s2_0 / m0 as f64;
    let cross = r.s2_diff / m;
    Ok(VarianceReport {
        method: VarianceMethod::ScheduleTheoretical,
        value: (t1 + t0 - cross).max(0.0),
        df: f64::INFINITY,
        correction: 1.0,
        components: vec![
            ("treated".into(), t1),
            ("control".into(), t0),
            ("cross".into(), cross),
        ],
    })
}

/// Estimable design-based variance of the block-`b` treatment coefficient, in
/// the matrix form with per-arm degrees-of-freedom denominators. The cross term
/// is not identifiable from observed data and is omitted.
pub fn design_variance_block(
    fit: &WlsFit,
    b: usize,
    cfg: &VarianceConfig,
) -> Result<VarianceReport> {
    let dm = &fit.design;
    if dm.spec == ModelSpec::PooledRestricted {
        return Err(Error::InvalidArgument(
            "block design-based variance needs a block-by-treatment specification".into(),
        ));
    }
    let n = dm.z.nrows();
    let h = dm.h;
    let target = dm.z.column(b).into_owned();
    let others: Vec<usize> = (0..h).filter(|&s| s != b).collect();
    let eta = if others.is_empty() {
        target
    } else {
        let sw = dm.weights.map(f64::sqrt);
        let mut a = DMatrix::zeros(n, others.len());
        for (k, &s) in others.iter().enumerate() {
            a.set_column(k, &dm.z.column(s).component_mul(&sw));
        }
        let y = target.component_mul(&sw);
        let qr = a.qr();
        let coef = qr
            .r()
            .solve_upper_triangular(&qr.q().tr_mul(&y))
            .ok_or_else(|| Error::Singular("treatment columns".into()))?;
        let others_z = DMatrix::from_fn(n, others.len(), |i, k| dm.z[(i, others[k])]);
        target - others_z * coef
    };

    let g_count = dm.n_clusters();
    let mut score = vec![0.0; g_count];
    // The normalising sum runs over both arms; summing it within each arm would
    // not reduce to the arm sample variances in the covariate-free case.
    let mut denom = NeumaierSum::new();
    for i in 0..n {
        let we = dm.weights[i] * eta[i];
        score[dm.cluster_of_row[i]] += we * fit.residuals[i];
        denom.add(we * eta[i]);
    }
    let denom = denom.value();
    let mut cluster_treated = vec![false; g_count];
    for i in 0..n {
        cluster_treated[dm.cluster_of_row[i]] = dm.treated_of_row[i];
    }
    let mut numer = [NeumaierSum::new(), NeumaierSum::new()];
    let mut counts = [0usize; 2];
    for (g, s) in score.iter().enumerate() {
        let t = cluster_treated[g] as usize;
        numer[t].add(s * s);
        if dm.block_of_cluster[g] == b {
            counts[t] += 1;
        }
    }
    let block_id = dm.labels[dm.n_treatment() + b]
        .trim_start_matches("block:")
        .to_string();
    for (t, arm) in [(1usize, "treated"), (0, "control")] {
        if counts[t] < 2 {
            return Err(Error::TooFewClusters {
                block: block_id.clone(),
                arm,
                count: counts[t],
            });
        }
    }

    // Block weight totals for p* and q*.
    let mut wblock = vec![0.0; h];
    let mut w1 = 0.0;
    for i in 0..n {
        wblock[dm.block_of_row[i]] += dm.weights[i];
        if dm.block_of_row[i] == b && dm.treated_of_row[i] {
            w1 += dm.weights[i];
        }
    }
    let wb = wblock[b];
    let pstar = w1 / wb;
    let (vstar, qstar) = match dm.spec {
        ModelSpec::BlockCovariateInteracted => (dm.v as f64, 1.0),
        _ => (
            dm.n_covariates() as f64,
            match cfg.qstar {
                QStar::WeightShare => wb / wblock.iter().sum::<f64>(),
                QStar::Fixed(q) => q,
            },
        ),
    };
    let (m1, m0) = (counts[1] as f64, counts[0] as f64);
    let df1 = m1 - vstar * pstar * qstar - 1.0;
    let df0 = m0 - vstar * (1.0 - pstar) * qstar - 1.0;
    for (df, arm) in [(df1, "treated"), (df0, "control")] {
        if !(df > 0.0) {
            return Err(Error::NonPositiveDf {
                block: block_id.clone(),
                arm,
                df,
            });
        }
    }
    let v1 = m1 / df1 * numer[1].value() / (denom * denom);
    let v0 = m0 / df0 * numer[0].value() / (denom * denom);
    let df = match cfg.df_rule {
        DfRule::Min => df1.min(df0),
        DfRule::Satterthwaite => {
            let d = v1 * v1 / df1 + v0 * v0 / df0;
            if d > 0.0 {
                (v1 + v0).powi(2) / d
            } else {
                df1.min(df0)
            }
        }
    };
    Ok(VarianceReport {
        method: VarianceMethod::DesignBased,
        value: v1 + v0,
        df,
        correction: 1.0,
        components: vec![
            ("treated".into(), v1),
            ("control".into(), v0),
            ("df_treated".into(), df1),
            ("df_control".into(), df0),
            ("v_star".into(), vstar),
            ("p_star".into(), pstar),
            ("q_star".into(), qstar),
        ],
    })
}

/// Cluster-robust sandwich `g (Z'WZ)^-1 (sum_j Z_j' W_j e_j e_j' W_j Z_j) (Z'WZ)^-1`.
#[derive(Debug, Clone)]
pub struct CrseResult {
    pub matrix: DMatrix<f64>,
    pub correction: f64,
    pub reports: Vec<VarianceReport>,
}

pub fn crse_variance(fit: &WlsFit, g: Correction) -> CrseResult {
    let dm = &fit.design;
    let (n, k) = dm.z.shape();
    let n_clusters = dm.n_clusters();
    let mut scores = DMatrix::zeros(n_clusters, k);
    for i in 0..n {
        let we = dm.weights[i] * fit.residuals[i];
        let g = dm.cluster_of_row[i];
        for c in 0..k {
            scores[(g, c)] += we * dm.z[(i, c)];
        }
    }
    let meat = scores.tr_mul(&scores);
    let gv = match g {
        Correction::ClusterCount => n_clusters as f64 / (n_clusters as f64 - 1.0),
        Correction::Fixed(x) => x,
    };
    let matrix = (&fit.gram_inverse * meat * &fit.gram_inverse) * gv;
    let df = (n_clusters - 1) as f64;
    let reports = (0..k)
        .map(|c| VarianceReport {
            method: VarianceMethod::Crse,
            value: matrix[(c, c)].max(0.0),
            df,
            correction: gv,
            components: vec![("clusters".into(), n_clusters as f64)],
        })
        .collect();
    CrseResult {
        matrix,
        correction: gv,
        reports,
    }
}

/// Theoretical variance of the pooled estimator for a schedule, with target
/// proportions `p` and slope `gamma`: a per-cluster sum of squares combining the
/// effect-heterogeneity term and the two arm terms.
pub fn pooled_theorem_variance(
    pop: &Population,
    p: &[f64],
    gamma: &[f64],
) -> Result<VarianceReport> {
    pop.require_schedule()?;
    let p = expand(p, pop.h())?;
    if !gamma.is_empty() && gamma.len() != pop.v() {
        return Err(Error::DimensionMismatch {
            what: "gamma",
            expected: pop.v(),
            got: gamma.len(),
        });
    }
    let est = schedule_estimands(pop, &p)?;
    let summaries = block_summary(pop, None)?;
    let m = pop.m() as f64;
    let a_total = compensated_sum(
        summaries
            .iter()
            .zip(&p)
            .map(|(s, &pb)| (s.m as f64 / m) * pb * (1.0 - pb) * s.wbar),
    );
    let mut total = NeumaierSum::new();
    let mut hetero = NeumaierSum::new();
    for (b, (block, s)) in pop.blocks().iter().zip(&summaries).enumerate() {
        let pb = p[b];
        let mb = s.m as f64;
        let c = (mb / m) * pb * (1.0 - pb) / a_total;
        let u = |t: bool| -> Vec<f64> {
            block
                .clusters
                .iter()
                .map(|cl| {
                    let xg: f64 = gamma
                        .iter()
                        .enumerate()
                        .map(|(q, g)| cl.agg.xbar[q] * g)
                        .sum();
                    cl.agg.weight * (cl.agg.ybar.under(t) - xg)
                })
                .collect()
        };
        let (u1, u0) = (u(true), u(false));
        let ubar1 = compensated_sum(u1.iter().copied()) / mb;
        let ubar0 = compensated_sum(u0.iter().copied()) / mb;
        let wbar = s.wbar;
        let lead =
            c * (1.0 - 2.0 * pb) / (pb * (1.0 - pb)).sqrt() * (est.per_block[b] - est.pooled);
        let k1 = ((1.0 - pb) / pb).sqrt() * c * wbar;
        let k0 = (pb / (1.0 - pb)).sqrt() * c * wbar;
        let mut block_sum = NeumaierSum::new();
        let mut block_het = NeumaierSum::new();
        for (j, cl) in block.clusters.iter().enumerate() {
            let w = cl.agg.weight;
            let first = lead * (w - wbar);
            let second = k1 * (u1[j] / wbar - (w / wbar) * (ubar1 / wbar));
            let third = k0 * (u0[j] / wbar - (w / wbar) * (ubar0 / wbar));
            let term = first + second + third;
            block_sum.add(term * term);
            block_het.add(first * first);
        }
        let scale = 1.0 / (mb * (mb - 1.0));
        total.add(block_sum.value() * scale);
        hetero.add(block_het.value() * scale);
    }
    Ok(VarianceReport {
        method: VarianceMethod::PooledTheorem,
        value: total.value().max(0.0),
        df: f64::INFINITY,
        correction: 1.0,
        components: vec![("heterogeneity_only".into(), hetero.value())],
    })
}

/// `estimate ± t_{df,(1+level)/2} · sqrt(value)`.
pub fn confidence_interval(estimate: f64, vr: &VarianceReport, level: f64) -> Result<(f64, f64)> {
    if !(vr.df > 0.0) {
        return Err(Error::NonPositiveDf {
            block: "-".into(),
            arm: "combined",
            df: vr.df,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0,1)"
        )));
    }
    if vr.value < 0.0 {
        return Err(Error::InvalidArgument("negative variance".into()));
    }
    let half = t_quantile(0.5 + level / 2.0, vr.df) * vr.value.sqrt();
    Ok((estimate - half, estimate + half))
}

/// Per-cluster weighted mean residuals of a fit, keyed by global cluster index.
pub fn cluster_mean_residuals(fit: &WlsFit) -> Vec<f64> {
    let dm = &fit.design;
    let mut num = vec![0.0; dm.n_clusters()];
    let mut den = vec![0.0; dm.n_clusters()];
    for i in 0..dm.z.nrows() {
        num[dm.cluster_of_row[i]] += dm.weights[i] * fit.residuals[i];
        den[dm.cluster_of_row[i]] += dm.weights[i];
    }
    num.iter().zip(&den).map(|(a, b)| a / b).collect()
}
