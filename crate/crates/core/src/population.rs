//! Blocked, clustered, weighted experimental data: ingestion, cluster aggregation
//! and block-level weighted ratio means.

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::randomize::Assignment;

/// Whether outcomes are observed (one per unit) or a full potential-outcome schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum OutcomeMode {
    Observed,
    Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Observed(f64),
    Schedule { y0: f64, y1: f64 },
}

impl Outcome {
    pub fn mode(&self) -> OutcomeMode {
        match self {
            Outcome::Observed(_) => OutcomeMode::Observed,
            Outcome::Schedule { .. } => OutcomeMode::Schedule,
        }
    }

    /// Outcome revealed under treatment status `treated`. Observed outcomes are
    /// returned as-is.
    pub fn under(&self, treated: bool) -> f64 {
        match *self {
            Outcome::Observed(y) => y,
            Outcome::Schedule { y0, y1 } => {
                if treated {
                    y1
                } else {
                    y0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub block_id: String,
    pub cluster_id: String,
    pub unit_id: String,
    pub weight: f64,
    pub covariates: Vec<f64>,
    pub outcome: Outcome,
    /// Realised treatment status, when the data carry one.
    pub treated: Option<bool>,
}

/// Weighted cluster mean outcome: one value when observed, one per arm for a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClusterMean {
    Observed(f64),
    Schedule { y0: f64, y1: f64 },
}

impl ClusterMean {
    pub fn under(&self, treated: bool) -> f64 {
        match *self {
            ClusterMean::Observed(y) => y,
            ClusterMean::Schedule { y0, y1 } => {
                if treated {
                    y1
                } else {
                    y0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAggregate {
    pub n: usize,
    /// Sum of unit weights.
    pub weight: f64,
    pub ybar: ClusterMean,
    pub xbar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub units: Vec<UnitRecord>,
    pub agg: ClusterAggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: String,
    pub clusters: Vec<Cluster>,
}

impl Block {
    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn weight(&self) -> f64 {
        compensated_sum(self.clusters.iter().map(|c| c.agg.weight))
    }

    pub fn mean_weight(&self) -> f64 {
        self.weight() / self.m() as f64
    }

    pub fn n_units(&self) -> usize {
        self.clusters.iter().map(|c| c.units.len()).sum()
    }

    /// Full-block weighted covariate mean (does not depend on the assignment).
    pub fn xbarbar(&self) -> Vec<f64> {
        let v = self.clusters.first().map_or(0, |c| c.agg.xbar.len());
        let w = self.weight();
        (0..v)
            .map(|k| {
                compensated_sum(self.clusters.iter().map(|c| c.agg.weight * c.agg.xbar[k])) / w
            })
            .collect()
    }

    /// Weighted mean of cluster means under arm `treated`, over all clusters.
    pub fn schedule_mean(&self, treated: bool) -> f64 {
        compensated_sum(
            self.clusters
                .iter()
                .map(|c| c.agg.weight * c.agg.ybar.under(treated)),
        ) / self.weight()
    }
}

/// Computes one cluster's weighted aggregates from its units.
pub fn aggregate_clusters(units: &[UnitRecord]) -> ClusterAggregate {
    let weight = compensated_sum(units.iter().map(|u| u.weight));
    let wmean = |f: &dyn Fn(&UnitRecord) -> f64| {
        compensated_sum(units.iter().map(|u| u.weight * f(u))) / weight
    };
    let v = units.first().map_or(0, |u| u.covariates.len());
    let xbar = (0..v).map(|k| wmean(&|u| u.covariates[k])).collect();
    let ybar = match units.first().map(|u| u.outcome.mode()) {
        Some(OutcomeMode::Schedule) => ClusterMean::Schedule {
            y0: wmean(&|u| u.outcome.under(false)),
            y1: wmean(&|u| u.outcome.under(true)),
        },
        _ => ClusterMean::Observed(wmean(&|u| u.outcome.under(false))),
    };
    ClusterAggregate {
        n: units.len(),
        weight,
        ybar,
        xbar,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    blocks: Vec<Block>,
    v: usize,
    mode: OutcomeMode,
}

impl Population {
    /// Groups units into blocks and clusters (first-appearance order) and
    /// aggregates each cluster. Row numbers in errors are 1-based positions in `units`.
    pub fn from_units(units: Vec<UnitRecord>) -> Result<Population> {
        let first = units.first().ok_or(Error::EmptyInput)?;
        let v = first.covariates.len();
        let mode = first.outcome.mode();
        let mut block_index: HashMap<String, usize> = HashMap::new();
        let mut cluster_index: Vec<HashMap<String, usize>> = Vec::new();
        let mut grouped: Vec<(String, Vec<(String, Vec<UnitRecord>)>)> = Vec::new();
        let mut cluster_treatment: Vec<Vec<Option<bool>>> = Vec::new();
        let has_treatment = first.treated.is_some();

        for (i, u) in units.into_iter().enumerate() {
            let row = i + 1;
            if !(u.weight > 0.0) || !u.weight.is_finite() {
                return Err(Error::NonPositiveWeight {
                    row,
                    weight: u.weight,
                });
            }
            if u.covariates.len() != v {
                return Err(Error::RaggedCovariates {
                    row,
                    expected: v,
                    found: u.covariates.len(),
                });
            }
            if u.outcome.mode() != mode {
                return Err(Error::MixedOutcomeModes { row });
            }
            if u.treated.is_some() != has_treatment {
                return Err(Error::BadTreatment {
                    row,
                    value: "missing".into(),
                });
            }
            let b = *block_index.entry(u.block_id.clone()).or_insert_with(|| {
                grouped.push((u.block_id.clone(), Vec::new()));
                cluster_index.push(HashMap::new());
                cluster_treatment.push(Vec::new());
                grouped.len() - 1
            });
            let clusters = &mut grouped[b].1;
            let c = *cluster_index[b]
                .entry(u.cluster_id.clone())
                .or_insert_with(|| {
                    clusters.push((u.cluster_id.clone(), Vec::new()));
                    cluster_treatment[b].push(u.treated);
                    clusters.len() - 1
                });
            if cluster_treatment[b][c] != u.treated {
                return Err(Error::InconsistentTreatment {
                    row,
                    block: u.block_id.clone(),
                    cluster: u.cluster_id.clone(),
                });
            }
            clusters[c].1.push(u);
        }

        let blocks = grouped
            .into_iter()
            .map(|(id, clusters)| {
                if clusters.len() < 2 {
                    return Err(Error::SmallBlock {
                        block: id,
                        m: clusters.len(),
                    });
                }
                let clusters = clusters
                    .into_iter()
                    .map(|(cid, units)| {
                        let agg = aggregate_clusters(&units);
                        Cluster {
                            id: cid,
                            units,
                            agg,
                        }
                    })
                    .collect();
                Ok(Block { id, clusters })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Population { blocks, v, mode })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &Block {
        &self.blocks[b]
    }

    /// Number of blocks.
    pub fn h(&self) -> usize {
        self.blocks.len()
    }

    /// Covariate dimension.
    pub fn v(&self) -> usize {
        self.v
    }

    pub fn mode(&self) -> OutcomeMode {
        self.mode
    }

    /// Total number of clusters.
    pub fn m(&self) -> usize {
        self.blocks.iter().map(Block::m).sum()
    }

    /// Total number of units.
    pub fn n(&self) -> usize {
        self.blocks.iter().map(Block::n_units).sum()
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::m).collect()
    }

    pub fn require_schedule(&self) -> Result<()> {
        if self.mode == OutcomeMode::Schedule {
            Ok(())
        } else {
            Err(Error::NeedsSchedule)
        }
    }

    /// The assignment recorded in the data's treatment column.
    pub fn observed_assignment(&self) -> Result<Assignment> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                b.clusters
                    .iter()
                    .map(|c| c.units[0].treated.ok_or(Error::MissingAssignment))
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Assignment::new(blocks))
    }

    /// Copy of the population with covariates dropped.
    pub fn without_covariates(&self) -> Population {
        self.map_units(|u| UnitRecord {
            covariates: Vec::new(),
            ..u.clone()
        })
    }

    /// Copy where every potential outcome is replaced by the one revealed under
    /// `asg`, giving observed-mode data with the assignment recorded.
    pub fn reveal(&self, asg: &Assignment) -> Result<Population> {
        asg.check_shape(self)?;
        let mut out = self.clone();
        out.mode = OutcomeMode::Observed;
        for (b, block) in out.blocks.iter_mut().enumerate() {
            for (j, cluster) in block.clusters.iter_mut().enumerate() {
                let t = asg.treated(b, j);
                for u in &mut cluster.units {
                    u.outcome = Outcome::Observed(u.outcome.under(t));
                    u.treated = Some(t);
                }
                cluster.agg = aggregate_clusters(&cluster.units);
            }
        }
        Ok(out)
    }

    /// Applies `f` to every unit and re-aggregates.
    pub fn map_units(&self, f: impl Fn(&UnitRecord) -> UnitRecord) -> Population {
        let mut out = self.clone();
        for block in &mut out.blocks {
            for cluster in &mut block.clusters {
                for u in &mut cluster.units {
                    *u = f(u);
                }
                cluster.agg = aggregate_clusters(&cluster.units);
            }
        }
        out.v = out.blocks[0].clusters[0].units[0].covariates.len();
        out.mode = out.blocks[0].clusters[0].units[0].outcome.mode();
        out
    }

    /// k-fold replication: every block gets k copies of each of its clusters.
    /// Copies are ordered copy-major and carry the suffix `#r` in their ids.
    pub fn replicate(&self, k: usize) -> Population {
        assert!(k >= 1, "replication factor must be at least 1");
        let mut out = self.clone();
        for block in &mut out.blocks {
            let original = std::mem::take(&mut block.clusters);
            for r in 0..k {
                for c in &original {
                    let mut c = c.clone();
                    if k > 1 {
                        c.id = format!("{}#{}", c.id, r + 1);
                        for u in &mut c.units {
                            u.cluster_id = c.id.clone();
                        }
                    }
                    block.clusters.push(c);
                }
            }
        }
        out
    }

    /// All unit records in block, cluster, row order.
    pub fn units(&self) -> impl Iterator<Item = &UnitRecord> {
        self.blocks
            .iter()
            .flat_map(|b| b.clusters.iter().flat_map(|c| c.units.iter()))
    }
}

/// Field delimiter and column naming for delimited input.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub delimiter: u8,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { delimiter: b',' }
    }
}

/// Reads delimited text with columns `block, cluster, unit, weight`, then `y` or
/// `y0, y1`, optional `t` (0/1 treatment), and covariates `x1..xv`.
pub fn ingest_units<R: Read>(source: R, opts: &IngestOptions) -> Result<Population> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let block = need("block")?;
    let cluster = need("cluster")?;
    let unit = need("unit")?;
    let weight = need("weight")?;
    let y = find("y");
    let (y0, y1) = (find("y0"), find("y1"));
    let treat = find("t");
    let outcome_cols = match (y, y0, y1) {
        (Some(y), None, None) => OutcomeCols::Observed(y),
        (None, Some(a), Some(b)) => OutcomeCols::Schedule(a, b),
        (None, Some(_), None) => return Err(Error::MissingColumn("y1".into())),
        (None, None, Some(_)) => return Err(Error::MissingColumn("y0".into())),
        (None, None, None) => return Err(Error::MissingColumn("y".into())),
        _ => {
            return Err(Error::Config(
                "both `y` and `y0`/`y1` present; choose one outcome mode".into(),
            ))
        }
    };

    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let known = ["block", "cluster", "unit", "weight", "y", "y0", "y1", "t"];
        if known.contains(&h) {
            continue;
        }
        match h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            Some(k) if k >= 1 => x_cols.push((k, i)),
            _ => return Err(Error::UnknownColumn(h.to_string())),
        }
    }
    x_cols.sort();
    for (pos, (k, _)) in x_cols.iter().enumerate() {
        if *k != pos + 1 {
            return Err(Error::MissingColumn(format!("x{}", pos + 1)));
        }
    }

    let mut units = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            let s = get(c);
            s.parse::<f64>().map_err(|_| Error::BadValue {
                row,
                column: headers[c].to_string(),
                value: s.to_string(),
            })
        };
        let w = num(weight)?;
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::NonPositiveWeight { row, weight: w });
        }
        let outcome = match outcome_cols {
            OutcomeCols::Observed(c) => Outcome::Observed(num(c)?),
            OutcomeCols::Schedule(a, b) => Outcome::Schedule {
                y0: num(a)?,
                y1: num(b)?,
            },
        };
        let treated = match treat {
            None => None,
            Some(c) => match get(c) {
                "1" => Some(true),
                "0" => Some(false),
                other => {
                    return Err(Error::BadTreatment {
                        row,
                        value: other.to_string(),
                    })
                }
            },
        };
        let covariates = x_cols
            .iter()
            .map(|&(_, c)| num(c))
            .collect::<Result<Vec<_>>>()?;
        units.push(UnitRecord {
            block_id: get(block).to_string(),
            cluster_id: get(cluster).to_string(),
            unit_id: get(unit).to_string(),
            weight: w,
            covariates,
            outcome,
            treated,
        });
    }
    Population::from_units(units)
}

#[derive(Clone, Copy)]
enum OutcomeCols {
    Observed(usize),
    Schedule(usize, usize),
}

/// Treated/control quantities of a block under a given assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub m1: usize,
    pub m0: usize,
    pub w1: f64,
    pub w0: f64,
    /// Treated weight share `w1 / w`.
    pub pstar: f64,
    /// Weighted mean of observed cluster means in each arm.
    pub ybar1: f64,
    pub ybar0: f64,
    /// Weighted covariate means in each arm.
    pub xbar1: Vec<f64>,
    pub xbar0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub id: String,
    pub m: usize,
    pub w: f64,
    pub wbar: f64,
    pub xbarbar: Vec<f64>,
    pub arms: Option<ArmSummary>,
    /// Assignment-free weighted means of each potential outcome, `(treated, control)`.
    pub schedule_means: Option<(f64, f64)>,
}

/// Block-level weights, weighted means and (given an assignment) arm summaries.
pub fn block_summary(pop: &Population, asg: Option<&Assignment>) -> Result<Vec<BlockSummary>> {
    if let Some(a) = asg {
        a.check_shape(pop)?;
    }
    pop.blocks()
        .iter()
        .enumerate()
        .map(|(b, block)| {
            let w = block.weight();
            let arms = match asg {
                Some(a) => Some(arm_summary(block, a.block(b))?),
                None => None,
            };
            let schedule_means = (pop.mode() == OutcomeMode::Schedule)
                .then(|| (block.schedule_mean(true), block.schedule_mean(false)));
            Ok(BlockSummary {
                id: block.id.clone(),
                m: block.m(),
                w,
                wbar: w / block.m() as f64,
                xbarbar: block.xbarbar(),
                arms,
                schedule_means,
            })
        })
        .collect()
}

/// Arm summary for one block given its treatment vector.
pub fn arm_summary(block: &Block, treat: &[bool]) -> Result<ArmSummary> {
    let v = block.clusters[0].agg.xbar.len();
    let arm = |t: bool| {
        let members: Vec<&Cluster> = block
            .clusters
            .iter()
            .zip(treat)
            .filter(|(_, &tj)| tj == t)
            .map(|(c, _)| c)
            .collect();
        let w = compensated_sum(members.iter().map(|c| c.agg.weight));
        let y = compensated_sum(members.iter().map(|c| c.agg.weight * c.agg.ybar.under(t))) / w;
        let x: Vec<f64> = (0..v)
            .map(|k| compensated_sum(members.iter().map(|c| c.agg.weight * c.agg.xbar[k])) / w)
            .collect();
        (members.len(), w, y, x)
    };
    let (m1, w1, ybar1, xbar1) = arm(true);
    let (m0, w0, ybar0, xbar0) = arm(false);
    if m1 == 0 {
        return Err(Error::EmptyArm {
            block: block.id.clone(),
            arm: "treated",
        });
    }
    if m0 == 0 {
        return Err(Error::EmptyArm {
            block: block.id.clone(),
            arm: "control",
        });
    }
    Ok(ArmSummary {
        m1,
        m0,
        w1,
        w0,
        pstar: w1 / (w1 + w0),
        ybar1,
        ybar0,
        xbar1,
        xbar0,
    })
}
