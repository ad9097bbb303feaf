//! Between/within covariate decomposition: the ICC matrix, the between and
//! within population slopes, and treatment-covariate R² for individual versus
//! cluster-aggregated regressions.
//!
//! All quantities are computed in the block-centred frame: covariates are
//! centred at their block weighted means and sums run over all blocks. With a
//! single block this is the ordinary centred regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{schedule_moments, solve_spd, MomentPart};
use crate::population::Population;
use crate::randomize::Assignment;

#[derive(Debug, Clone, PartialEq)]
pub struct IccDecomposition {
    /// `(X'WX)^{-1} (Xbar'Wbar Xbar)` on block-centred covariates.
    pub gamma_x: DMatrix<f64>,
    /// Between-cluster and within-cluster grams, each divided by the cluster count.
    pub s2_between: DMatrix<f64>,
    pub s2_within: DMatrix<f64>,
    pub trace: f64,
    /// `trace / v`.
    pub rho_bar: f64,
    /// Eigenvalues of `gamma_x`, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Between and within grams, divided by the cluster count.
fn grams(pop: &Population) -> (DMatrix<f64>, DMatrix<f64>) {
    let v = pop.v();
    let mut sb = DMatrix::zeros(v, v);
    let mut sw = DMatrix::zeros(v, v);
    for block in pop.blocks() {
        let xbb = block.xbarbar();
        for c in &block.clusters {
            let d = DVector::from_iterator(v, c.agg.xbar.iter().zip(&xbb).map(|(x, m)| x - m));
            sb.ger(c.agg.weight, &d, &d, 1.0);
            for u in &c.units {
                let e = DVector::from_iterator(
                    v,
                    u.covariates.iter().zip(&c.agg.xbar).map(|(x, m)| x - m),
                );
                sw.ger(u.weight, &e, &e, 1.0);
            }
        }
    }
    let m = pop.m() as f64;
    (sb / m, sw / m)
}

/// ICC matrix of the covariates and its between/within parts.
pub fn icc_matrix(pop: &Population) -> Result<IccDecomposition> {
    let v = pop.v();
    if v == 0 {
        return Err(Error::InvalidArgument(
            "the ICC matrix needs at least one covariate".into(),
        ));
    }
    let (sb, sw) = grams(pop);
    let total = &sb + &sw;
    let sv = total.singular_values();
    if !(sv.max() > 0.0) || sv.min() / sv.max() < 1e-13 {
        return Err(Error::Singular("total covariate gram".into()));
    }
    let chol = total
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("total covariate gram".into()))?;
    let gamma_x = chol.solve(&sb);
    // Eigenvalues via the symmetric similar matrix L^{-1} S_B L^{-T}.
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("total covariate gram".into()))?;
    let sym = &linv * &sb * linv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let trace = gamma_x.trace();
    Ok(IccDecomposition {
        gamma_x,
        s2_between: sb,
        s2_within: sw,
        trace,
        rho_bar: trace / v as f64,
        eigenvalues,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BetweenWithin {
    /// `None` when the covariates have no between-cluster variation.
    pub gamma_between: Option<Vec<f64>>,
    /// `None` when the covariates have no within-cluster variation.
    pub gamma_within: Option<Vec<f64>>,
    pub gamma: Vec<f64>,
    /// `max |gamma - G gamma_between - (I - G) gamma_within|` with `G` the ICC
    /// matrix; an absent slope enters with a zero weight.
    pub recombination_residual: f64,
}

/// Relative size below which a between or within gram counts as absent.
const NEGLIGIBLE_GRAM: f64 = 1e-12;

/// Population slopes from cluster-aggregated, within-cluster and total
/// schedule moments, and the residual of their recombination through the ICC matrix.
pub fn between_within_gammas(pop: &Population, p: &[f64]) -> Result<BetweenWithin> {
    let (sb, cb) = schedule_moments(pop, p, MomentPart::Between)?;
    let (sw, cw) = schedule_moments(pop, p, MomentPart::Within)?;
    let (st, ct) = schedule_moments(pop, p, MomentPart::Total)?;
    let scale = st.amax();
    let gamma = solve_spd(st, ct, "total covariate gram")?;
    let part = |s: DMatrix<f64>, c: DVector<f64>, what: &str| -> Result<Option<Vec<f64>>> {
        if s.amax() <= NEGLIGIBLE_GRAM * scale {
            Ok(None)
        } else {
            solve_spd(s, c, what).map(Some)
        }
    };
    let gamma_between = part(sb, cb, "between covariate gram")?;
    let gamma_within = part(sw, cw, "within covariate gram")?;
    let icc = icc_matrix(pop)?;
    let v = pop.v();
    let zero = vec![0.0; v];
    let gb = DVector::from_column_slice(gamma_between.as_deref().unwrap_or(&zero));
    let gw = DVector::from_column_slice(gamma_within.as_deref().unwrap_or(&zero));
    let recombined = &icc.gamma_x * &gb + (DMatrix::identity(v, v) - &icc.gamma_x) * &gw;
    let recombination_residual = gamma
        .iter()
        .zip(recombined.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(BetweenWithin {
        gamma_between,
        gamma_within,
        gamma,
        recombination_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2Pair {
    /// R² of the individual-level regression of the centred treatment on centred covariates.
    pub r2_tx: f64,
    /// R² of the cluster-level regression on centred cluster means.
    pub r2_txb: f64,
    /// Individual-level coefficients.
    pub pi: Vec<f64>,
    /// Cluster-level coefficients.
    pub lambda_between: Vec<f64>,
}

/// Precomputed covariate side of the R² regressions, reusable across allocations.
#[derive(Debug, Clone)]
pub struct R2Frame {
    /// Per block, per cluster: weight and centred cluster mean.
    clusters: Vec<Vec<(f64, Vec<f64>)>>,
    total_inv: DMatrix<f64>,
    between_inv: DMatrix<f64>,
}

impl R2Frame {
    pub fn new(pop: &Population) -> Result<R2Frame> {
        if pop.v() == 0 {
            return Err(Error::InvalidArgument(
                "R² needs at least one covariate".into(),
            ));
        }
        let (sb, sw) = grams(pop);
        let m = pop.m() as f64;
        let inv = |a: DMatrix<f64>, what: &str| -> Result<DMatrix<f64>> {
            let sv = a.singular_values();
            if !(sv.max() > 0.0) || sv.min() / sv.max() < 1e-13 {
                return Err(Error::Singular(what.into()));
            }
            a.try_inverse().ok_or_else(|| Error::Singular(what.into()))
        };
        let total_inv = inv((&sb + &sw) * m, "total covariate gram")?;
        let between_inv = inv(sb * m, "between covariate gram")?;
        let clusters = pop
            .blocks()
            .iter()
            .map(|b| {
                let xbb = b.xbarbar();
                b.clusters
                    .iter()
                    .map(|c| {
                        (
                            c.agg.weight,
                            c.agg.xbar.iter().zip(&xbb).map(|(x, m)| x - m).collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(R2Frame {
            clusters,
            total_inv,
            between_inv,
        })
    }

    pub fn evaluate(&self, asg: &Assignment) -> Result<R2Pair> {
        let v = self.total_inv.nrows();
        let mut cross = DVector::zeros(v);
        let mut tss = 0.0;
        for (b, block) in self.clusters.iter().enumerate() {
            let (mut w1, mut w) = (0.0, 0.0);
            for (j, (wj, xj)) in block.iter().enumerate() {
                w += wj;
                if asg.treated(b, j) {
                    w1 += wj;
                    for q in 0..v {
                        cross[q] += wj * xj[q];
                    }
                }
            }
            tss += w1 * (w - w1) / w;
        }
        if !(tss > 0.0) {
            return Err(Error::Degenerate(
                "every block has all clusters in one arm".into(),
            ));
        }
        let pi = &self.total_inv * &cross;
        let lambda = &self.between_inv * &cross;
        Ok(R2Pair {
            r2_tx: cross.dot(&pi) / tss,
            r2_txb: cross.dot(&lambda) / tss,
            pi: pi.iter().copied().collect(),
            lambda_between: lambda.iter().copied().collect(),
        })
    }
}

/// R² of the individual and aggregate treatment-on-covariate regressions.
pub fn r2_pair(pop: &Population, asg: &Assignment) -> Result<R2Pair> {
    asg.check_shape(pop)?;
    R2Frame::new(pop)?.evaluate(asg)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct R2Approximations {
    /// `v / m`.
    pub approx_txb: f64,
    /// `tr(G)/m + (v - tr(G))/n`.
    pub approx_tx: f64,
    /// `n / (1 + rho_bar (n/m - 1))`.
    pub n_star: f64,
}

/// Expected-R² approximations and the effective number of individuals.
pub fn r2_approximations(v: usize, m: usize, n: usize, icc: &IccDecomposition) -> R2Approximations {
    let (vf, mf, nf) = (v as f64, m as f64, n as f64);
    R2Approximations {
        approx_txb: vf / mf,
        approx_tx: icc.trace / mf + (vf - icc.trace) / nf,
        n_star: nf / (1.0 + icc.rho_bar * (nf / mf - 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{Outcome, UnitRecord};
    use crate::randomize::draw_assignment;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(rows: &[(&str, usize, f64, Vec<f64>, f64, f64)]) -> Population {
        Population::from_units(
            rows.iter()
                .enumerate()
                .map(|(i, (b, c, w, x, y0, y1))| UnitRecord {
                    block_id: b.to_string(),
                    cluster_id: c.to_string(),
                    unit_id: i.to_string(),
                    weight: *w,
                    covariates: x.clone(),
                    outcome: Outcome::Schedule { y0: *y0, y1: *y1 },
                    treated: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_pop(seed: u64, h: usize, m: usize, v: usize, cluster_constant: bool) -> Population {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let blocks = ["A", "B", "C"];
        for b in blocks.iter().take(h) {
            for c in 0..m {
                let n = rng.random_range(2..6);
                let u: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..1.0)).collect();
                for _ in 0..n {
                    let x: Vec<f64> = u
                        .iter()
                        .map(|uq| {
                            if cluster_constant {
                                *uq
                            } else {
                                uq + rng.random_range(-1.0..1.0)
                            }
                        })
                        .collect();
                    let w = (rng.random_range(-1.0f64..1.0)).exp();
                    let y0 = x.iter().sum::<f64>() + rng.random_range(-1.0..1.0);
                    let y1 =
                        y0 + 0.5 - x.first().copied().unwrap_or(0.0) + rng.random_range(-1.0..1.0);
                    rows.push((*b, c, w, x, y0, y1));
                }
            }
        }
        build(&rows)
    }

    #[test]
    fn half_between_variance() {
        // Cluster 0 has x in {0, 2}, cluster 1 has x in {-2, 0}.
        let pop = build(&[
            ("A", 0, 1.0, vec![0.0], 0.0, 0.0),
            ("A", 0, 1.0, vec![2.0], 0.0, 0.0),
            ("A", 1, 1.0, vec![-2.0], 0.0, 0.0),
            ("A", 1, 1.0, vec![0.0], 0.0, 0.0),
        ]);
        let icc = icc_matrix(&pop).unwrap();
        assert!((icc.gamma_x[(0, 0)] - 0.5).abs() < 1e-10);
        assert!((icc.rho_bar - 0.5).abs() < 1e-10);
    }

    #[test]
    fn cluster_constant_covariates_give_identity() {
        let pop = random_pop(3, 2, 6, 3, true);
        let icc = icc_matrix(&pop).unwrap();
        assert!((icc.gamma_x.clone() - DMatrix::identity(3, 3)).amax() < 1e-10);
        let bw = between_within_gammas(&pop, &[0.5]).unwrap();
        assert!(bw.gamma_within.is_none());
        let gb = bw.gamma_between.unwrap();
        for q in 0..3 {
            assert!((bw.gamma[q] - gb[q]).abs() < 1e-10);
        }
        assert!(bw.recombination_residual < 1e-10);
    }

    #[test]
    fn within_only_variation_gives_zero() {
        let pop = build(&[
            ("A", 0, 1.0, vec![1.0, 0.0], 0.0, 0.0),
            ("A", 0, 1.0, vec![-1.0, 2.0], 0.0, 0.0),
            ("A", 0, 1.0, vec![0.0, -2.0], 0.0, 0.0),
            ("A", 1, 1.0, vec![-1.0, 1.0], 0.0, 0.0),
            ("A", 1, 1.0, vec![1.0, -1.0], 0.0, 0.0),
        ]);
        let icc = icc_matrix(&pop).unwrap();
        assert!(icc.gamma_x.amax() < 1e-12);
    }

    #[test]
    fn eigenvalues_lie_in_unit_interval() {
        for s in 0..20 {
            let icc = icc_matrix(&random_pop(s, 2, 5, 3, false)).unwrap();
            assert!(icc
                .eigenvalues
                .iter()
                .all(|&e| (-1e-10..=1.0 + 1e-10).contains(&e)));
            assert!((icc.eigenvalues.iter().sum::<f64>() - icc.trace).abs() < 1e-10);
        }
    }

    #[test]
    fn recombination_identity() {
        for s in 0..20 {
            let pop = random_pop(100 + s, 1 + (s as usize % 3), 6, 2, false);
            let bw = between_within_gammas(&pop, &[0.4]).unwrap();
            assert!(
                bw.recombination_residual < 1e-8,
                "{}",
                bw.recombination_residual
            );
        }
    }

    #[test]
    fn common_slope_is_recovered_everywhere() {
        // Outcomes exactly linear in x with slope (2, -1).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        for c in 0..8 {
            for _ in 0..3 {
                let x = vec![
                    rng.random_range(-1.0..1.0) + c as f64 * 0.1,
                    rng.random_range(-1.0..1.0),
                ];
                let y = 2.0 * x[0] - x[1];
                rows.push(("A", c, rng.random_range(0.5..2.0), x, y, y + 1.0));
            }
        }
        let bw = between_within_gammas(&build(&rows), &[0.5]).unwrap();
        for g in [
            &bw.gamma,
            bw.gamma_between.as_ref().unwrap(),
            bw.gamma_within.as_ref().unwrap(),
        ] {
            assert!((g[0] - 2.0).abs() < 1e-10 && (g[1] + 1.0).abs() < 1e-10);
        }
    }

    /// Weighted least squares of `y` on the columns of `x` through the normal
    /// equations, with R² relative to the weighted total sum of squares of `y`.
    fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> (Vec<f64>, f64) {
        let sw = DMatrix::from_diagonal(&DVector::from_column_slice(w));
        let beta = (x.transpose() * &sw * x)
            .lu()
            .solve(&(x.transpose() * &sw * y))
            .unwrap();
        let fitted = x * &beta;
        let ess: f64 = (0..y.len()).map(|i| w[i] * fitted[i] * fitted[i]).sum();
        let tss: f64 = (0..y.len()).map(|i| w[i] * y[i] * y[i]).sum();
        (beta.iter().copied().collect(), ess / tss)
    }

    #[test]
    fn r2_matches_direct_regressions() {
        for s in 0..10u64 {
            let pop = random_pop(200 + s, 1, 10, 2, false);
            let asg = draw_assignment(&pop, &[0.5], s).unwrap();
            let r = r2_pair(&pop, &asg).unwrap();
            let block = pop.block(0);
            let xbb = block.xbarbar();
            let treated: Vec<bool> = asg.block(0).to_vec();
            let w1: f64 = block
                .clusters
                .iter()
                .zip(&treated)
                .filter(|(_, t)| **t)
                .map(|(c, _)| c.agg.weight)
                .sum();
            let pstar = w1 / block.weight();
            // Unit level.
            let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
            for (j, c) in block.clusters.iter().enumerate() {
                for u in &c.units {
                    xs.extend(u.covariates.iter().zip(&xbb).map(|(x, m)| x - m));
                    ys.push(f64::from(u8::from(treated[j])) - pstar);
                    ws.push(u.weight);
                }
            }
            let xm = DMatrix::from_row_slice(ws.len(), 2, &xs);
            let (pi, r2_tx) = lstsq(&xm, &DVector::from_vec(ys), &ws);
            // Cluster level.
            let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
            for (j, c) in block.clusters.iter().enumerate() {
                xs.extend(c.agg.xbar.iter().zip(&xbb).map(|(x, m)| x - m));
                ys.push(f64::from(u8::from(treated[j])) - pstar);
                ws.push(c.agg.weight);
            }
            let xm = DMatrix::from_row_slice(ws.len(), 2, &xs);
            let (lambda, r2_txb) = lstsq(&xm, &DVector::from_vec(ys), &ws);
            assert!((r.r2_tx - r2_tx).abs() < 1e-10);
            assert!((r.r2_txb - r2_txb).abs() < 1e-10);
            // pi = G lambda_B.
            let icc = icc_matrix(&pop).unwrap();
            let gl = &icc.gamma_x * DVector::from_vec(lambda.clone());
            for q in 0..2 {
                assert!((pi[q] - gl[q]).abs() < 1e-8);
                assert!((r.pi[q] - pi[q]).abs() < 1e-8);
                assert!((r.lambda_between[q] - lambda[q]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dominance_and_equality_case() {
        let pop = random_pop(7, 1, 30, 3, false);
        let frame = R2Frame::new(&pop).unwrap();
        let mut rng = crate::randomize::rng_for(7, 0);
        for _ in 0..500 {
            let asg = crate::randomize::draw_with_rng(&[30], &[15], &mut rng);
            let r = frame.evaluate(&asg).unwrap();
            assert!(r.r2_txb >= r.r2_tx - 1e-12);
        }
        let pop = random_pop(8, 2, 8, 2, true);
        let asg = draw_assignment(&pop, &[0.5], 1).unwrap();
        let r = r2_pair(&pop, &asg).unwrap();
        assert!((r.r2_txb - r.r2_tx).abs() < 1e-10);
    }

    #[test]
    fn mirrored_balanced_design_has_zero_r2() {
        // Treated clusters mirror the control clusters around zero.
        let pop = build(&[
            ("A", 0, 1.0, vec![1.0], 0.0, 0.0),
            ("A", 1, 1.0, vec![-1.0], 0.0, 0.0),
            ("A", 2, 1.0, vec![2.0], 0.0, 0.0),
            ("A", 3, 1.0, vec![-2.0], 0.0, 0.0),
        ]);
        let asg = Assignment::new(vec![vec![true, true, false, false]]);
        let r = r2_pair(&pop, &asg).unwrap();
        assert!(r.r2_tx.abs() < 1e-15 && r.r2_txb.abs() < 1e-15);
    }

    #[test]
    fn approximations() {
        let icc = IccDecomposition {
            gamma_x: DMatrix::zeros(2, 2),
            s2_between: DMatrix::zeros(2, 2),
            s2_within: DMatrix::zeros(2, 2),
            trace: 0.0,
            rho_bar: 0.0,
            eigenvalues: vec![0.0, 0.0],
        };
        let a = r2_approximations(2, 20, 1000, &icc);
        assert!((a.approx_txb - 0.10).abs() < 1e-15);
        assert!((a.approx_tx - 2.0 / 1000.0).abs() < 1e-15);
        assert_eq!(a.n_star, 1000.0);
        let full = IccDecomposition {
            trace: 2.0,
            rho_bar: 1.0,
            ..icc
        };
        assert!((r2_approximations(2, 20, 1000, &full).n_star - 20.0).abs() < 1e-12);
    }
}
