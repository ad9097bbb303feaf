//! Design matrices for the three regression specifications and a weighted
//! least-squares solver based on a Householder QR of the weight-scaled system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::population::{block_summary, Population};
use crate::randomize::Assignment;

/// Rank tolerance on the ratio of extreme singular values.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Regression specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum ModelSpec {
    /// Block-by-treatment interactions and block indicators only.
    NoCovariates,
    /// Block-by-treatment interactions, block indicators and shared centred covariates.
    FullInteracted,
    /// As `FullInteracted` but with a separate covariate slope per block.
    BlockCovariateInteracted,
    /// One centred treatment column, block indicators and shared centred covariates.
    PooledRestricted,
}

impl ModelSpec {
    pub fn uses_covariates(self) -> bool {
        self != ModelSpec::NoCovariates
    }

    /// Number of treatment columns for `h` blocks.
    pub fn treatment_columns(self, h: usize) -> usize {
        if self == ModelSpec::PooledRestricted {
            1
        } else {
            h
        }
    }

    /// Number of covariate columns for `h` blocks and `v` covariates.
    pub fn covariate_columns(self, h: usize, v: usize) -> usize {
        match self {
            ModelSpec::NoCovariates => 0,
            ModelSpec::FullInteracted | ModelSpec::PooledRestricted => v,
            ModelSpec::BlockCovariateInteracted => h * v,
        }
    }
}

impl ModelSpec {
    /// Command-line name of the specification.
    pub fn name(self) -> &'static str {
        match self {
            ModelSpec::NoCovariates => "none",
            ModelSpec::FullInteracted => "interacted",
            ModelSpec::BlockCovariateInteracted => "block-cov",
            ModelSpec::PooledRestricted => "pooled",
        }
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelSpec> {
        match s {
            "none" => Ok(ModelSpec::NoCovariates),
            "interacted" => Ok(ModelSpec::FullInteracted),
            "block-cov" => Ok(ModelSpec::BlockCovariateInteracted),
            "pooled" => Ok(ModelSpec::PooledRestricted),
            _ => Err(Error::Config(format!(
                "unknown model '{s}' (expected none, interacted, pooled or block-cov)"
            ))),
        }
    }
}

/// Weighted regression data with columns ordered as
/// `[treatment columns][block indicators][centred covariates]`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub spec: ModelSpec,
    pub z: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub y: DVector<f64>,
    pub labels: Vec<String>,
    /// Global cluster index of each row (clusters numbered block by block).
    pub cluster_of_row: Vec<usize>,
    pub block_of_row: Vec<usize>,
    /// Treatment status of each row's cluster.
    pub treated_of_row: Vec<bool>,
    /// Block of each global cluster index.
    pub block_of_cluster: Vec<usize>,
    pub h: usize,
    pub v: usize,
}

impl DesignMatrix {
    pub fn n_treatment(&self) -> usize {
        self.spec.treatment_columns(self.h)
    }

    pub fn n_covariates(&self) -> usize {
        self.spec.covariate_columns(self.h, self.v)
    }

    pub fn covariate_offset(&self) -> usize {
        self.n_treatment() + self.h
    }

    pub fn n_clusters(&self) -> usize {
        self.block_of_cluster.len()
    }

    /// Writes the matrix with weights and response as CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cluster".to_string(), "weight".to_string(), "y".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.z.nrows() {
            let mut rec = vec![
                self.cluster_of_row[i].to_string(),
                format!("{:e}", self.weights[i]),
                format!("{:e}", self.y[i]),
            ];
            rec.extend(self.z.row(i).iter().map(|x| format!("{x:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the design for `spec` under `asg`, revealing potential outcomes where needed.
pub fn build_design(pop: &Population, asg: &Assignment, spec: ModelSpec) -> Result<DesignMatrix> {
    let summaries = block_summary(pop, Some(asg))?;
    let h = pop.h();
    let v = if spec.uses_covariates() { pop.v() } else { 0 };
    let nt = spec.treatment_columns(h);
    let nc = spec.covariate_columns(h, v);
    let k = nt + h + nc;
    let n = pop.n();

    let mut labels = Vec::with_capacity(k);
    if spec == ModelSpec::PooledRestricted {
        labels.push("treat".to_string());
    } else {
        labels.extend(pop.blocks().iter().map(|b| format!("treat:{}", b.id)));
    }
    labels.extend(pop.blocks().iter().map(|b| format!("block:{}", b.id)));
    if spec == ModelSpec::BlockCovariateInteracted {
        for b in pop.blocks() {
            labels.extend((1..=v).map(|q| format!("x{q}:{}", b.id)));
        }
    } else {
        labels.extend((1..=v).map(|q| format!("x{q}")));
    }

    let mut z = DMatrix::zeros(n, k);
    let mut weights = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut cluster_of_row = Vec::with_capacity(n);
    let mut block_of_row = Vec::with_capacity(n);
    let mut treated_of_row = Vec::with_capacity(n);
    let mut block_of_cluster = Vec::with_capacity(pop.m());
    let mut row = 0;
    for (b, (block, s)) in pop.blocks().iter().zip(&summaries).enumerate() {
        let pstar = s.arms.as_ref().expect("assignment supplied").pstar;
        for (j, cluster) in block.clusters.iter().enumerate() {
            let g = block_of_cluster.len();
            block_of_cluster.push(b);
            let t = asg.treated(b, j);
            let ttilde = if t { 1.0 - pstar } else { -pstar };
            for u in &cluster.units {
                let tcol = if spec == ModelSpec::PooledRestricted {
                    0
                } else {
                    b
                };
                z[(row, tcol)] = ttilde;
                z[(row, nt + b)] = 1.0;
                let xoff = nt
                    + h
                    + if spec == ModelSpec::BlockCovariateInteracted {
                        b * v
                    } else {
                        0
                    };
                for q in 0..v {
                    z[(row, xoff + q)] = u.covariates[q] - s.xbarbar[q];
                }
                weights[row] = u.weight;
                y[row] = u.outcome.under(t);
                cluster_of_row.push(g);
                block_of_row.push(b);
                treated_of_row.push(t);
                row += 1;
            }
        }
    }
    Ok(DesignMatrix {
        spec,
        z,
        weights,
        y,
        labels,
        cluster_of_row,
        block_of_row,
        treated_of_row,
        block_of_cluster,
        h,
        v,
    })
}

#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: DVector<f64>,
    pub labels: Vec<String>,
    /// Unweighted residuals `y - Z delta`.
    pub residuals: DVector<f64>,
    /// `(Z'WZ)^-1`.
    pub gram_inverse: DMatrix<f64>,
    pub design: DesignMatrix,
}

impl WlsFit {
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.coefficients[i])
    }

    /// Treatment coefficient for block `b` (the single pooled coefficient under
    /// the restricted model).
    pub fn treatment_effect(&self, b: usize) -> f64 {
        if self.design.spec == ModelSpec::PooledRestricted {
            self.coefficients[0]
        } else {
            self.coefficients[b]
        }
    }

    pub fn intercept(&self, b: usize) -> f64 {
        self.coefficients[self.design.n_treatment() + b]
    }

    /// Covariate coefficients (all blocks' slopes, block-major, for the
    /// block-interacted model).
    pub fn gamma(&self) -> Vec<f64> {
        self.coefficients.as_slice()[self.design.covariate_offset()..].to_vec()
    }

    /// Largest `|Z' W e|` relative to `||Z||·||W e||`.
    pub fn orthogonality_defect(&self) -> f64 {
        let we = self.residuals.component_mul(&self.design.weights);
        let score = self.design.z.tr_mul(&we);
        let scale = self.design.z.norm() * we.norm();
        if scale == 0.0 {
            0.0
        } else {
            score.amax() / scale
        }
    }
}

/// Minimizes `sum w (y - z delta)^2` through a QR factorization of `sqrt(W) Z`.
pub fn fit_wls(dm: DesignMatrix) -> Result<WlsFit> {
    let (n, k) = dm.z.shape();
    let sw = dm.weights.map(f64::sqrt);
    let mut a = dm.z.clone();
    for (mut row, s) in a.row_iter_mut().zip(sw.iter()) {
        row *= *s;
    }
    if n < k {
        return Err(Error::RankDeficient {
            column: dm.labels[n].clone(),
        });
    }
    let b = dm.y.component_mul(&sw);
    let qr = a.qr();
    let r = qr.r();
    check_rank(&r, &dm.labels)?;
    let qtb = qr.q().tr_mul(&b);
    let coefficients = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("triangular factor".into()))?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("triangular factor".into()))?;
    let gram_inverse = &rinv * rinv.transpose();
    let residuals = &dm.y - &dm.z * &coefficients;
    Ok(WlsFit {
        coefficients,
        labels: dm.labels.clone(),
        residuals,
        gram_inverse,
        design: dm,
    })
}

/// The first column whose inclusion makes the leading triangular block
/// numerically singular is reported.
fn check_rank(r: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let k = r.ncols();
    for j in 0..k {
        let lead = r.view((0, 0), (j + 1, j + 1)).into_owned();
        let sv = lead.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min / max < RANK_TOLERANCE {
            return Err(Error::RankDeficient {
                column: labels[j].clone(),
            });
        }
    }
    Ok(())
}
