//! Monte Carlo engine: clustered covariate and outcome generation, repeated
//! randomization draws, and aggregation of bias, SE calibration, coverage and
//! treatment-covariate R².
//!
//! Every random quantity comes from a ChaCha8 stream selected by
//! `(kind, repeat, draw)`, and per-draw results are reduced in draw order, so a
//! study is bit-identical for any worker count.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::collinearity::{icc_matrix, r2_approximations, R2Frame};
use crate::error::{Error, Result};
use crate::estimators::schedule_estimands;
use crate::numeric::{ks_normal, sample_variance, NeumaierSum};
use crate::population::{Outcome, Population, UnitRecord};
use crate::randomize::{draw_with_rng, rng_for, treated_counts, Assignment};
use crate::report::{fmt6, fmt_full, provenance, sha256_hex, Table};
use crate::variance::{
    confidence_interval, crse_variance, design_variance_block, Correction, VarianceConfig,
};
use crate::wls::{build_design, fit_wls, ModelSpec};

const KIND_POPULATION: u64 = 1;
const KIND_DRAW: u64 = 2;

/// Stream index for a `(kind, repeat, draw)` triple.
pub fn stream_id(kind: u64, repeat: usize, draw: usize) -> u64 {
    (kind << 56) | ((repeat as u64) << 32) | draw as u64
}

/// How unit weights are set in generated populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Weighting {
    /// Every unit has weight 1, so clusters weigh by their size.
    Persons,
    /// Units weigh `1/n_j`, so every cluster has weight 1.
    Clusters,
}

impl FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Weighting> {
        match s {
            "persons" => Ok(Weighting::Persons),
            "clusters" => Ok(Weighting::Clusters),
            _ => Err(Error::Config(format!(
                "unknown weighting '{s}' (expected persons or clusters)"
            ))),
        }
    }
}

impl Weighting {
    pub fn name(self) -> &'static str {
        match self {
            Weighting::Persons => "persons",
            Weighting::Clusters => "clusters",
        }
    }
}

/// Which variance estimators a study evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum VarianceChoice {
    Design,
    Crse,
    Both,
}

impl VarianceChoice {
    pub fn design(self) -> bool {
        self != VarianceChoice::Crse
    }
    pub fn crse(self) -> bool {
        self != VarianceChoice::Design
    }
    pub fn name(self) -> &'static str {
        match self {
            VarianceChoice::Design => "design",
            VarianceChoice::Crse => "crse",
            VarianceChoice::Both => "both",
        }
    }
}

impl FromStr for VarianceChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<VarianceChoice> {
        match s {
            "design" => Ok(VarianceChoice::Design),
            "crse" => Ok(VarianceChoice::Crse),
            "both" => Ok(VarianceChoice::Both),
            _ => Err(Error::Config(format!(
                "unknown variance '{s}' (expected design, crse or both)"
            ))),
        }
    }
}

/// Simulation settings. Covariates follow `x_1 = u_1 + e_1`,
/// `x_k = theta x_{k-1} + u_k + e_k` with `theta = r / sqrt(1 - r^2)`,
/// `Var(e) = 1` and `Var(u) = rho_x / (1 - rho_x)`. Outcomes follow
/// `Y(0) = beta sum_k x_k + c_j + eps` with `Var(c) = icc_y / (1 - icc_y)`,
/// `Var(eps) = 1`, and `Y(1) = Y(0) + tau + delta_j` with `sd(delta) = tau_sd`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimConfig {
    pub v: usize,
    pub rho_x: f64,
    pub r: f64,
    /// Clusters per block.
    pub m: usize,
    pub blocks: usize,
    pub p: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    pub draws: usize,
    pub repeats: usize,
    pub seed: u64,
    pub weighting: Weighting,
    pub beta: f64,
    pub icc_y: f64,
    pub tau: f64,
    pub tau_sd: f64,
    pub model: ModelSpec,
    pub variance: VarianceChoice,
    pub level: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v: 2,
            rho_x: 0.0,
            r: 0.5,
            m: 20,
            blocks: 1,
            p: 0.6,
            n_lo: 25,
            n_hi: 75,
            draws: 500,
            repeats: 10,
            seed: 0,
            weighting: Weighting::Persons,
            beta: 0.5,
            icc_y: 0.2,
            tau: 0.25,
            tau_sd: 0.1,
            model: ModelSpec::FullInteracted,
            variance: VarianceChoice::Both,
            level: 0.95,
        }
    }
}

const KEYS: [&str; 19] = [
    "v",
    "rho_x",
    "r",
    "m",
    "blocks",
    "p",
    "n_lo",
    "n_hi",
    "draws",
    "repeats",
    "seed",
    "weighting",
    "beta",
    "icc_y",
    "tau",
    "tau_sd",
    "model",
    "variance",
    "level",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

impl SimConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "v" => self.v = parse(key, value)?,
            "rho_x" => self.rho_x = parse(key, value)?,
            "r" => self.r = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "n_lo" => self.n_lo = parse(key, value)?,
            "n_hi" => self.n_hi = parse(key, value)?,
            "draws" => self.draws = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "weighting" => self.weighting = value.trim().parse()?,
            "beta" => self.beta = parse(key, value)?,
            "icc_y" => self.icc_y = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "tau_sd" => self.tau_sd = parse(key, value)?,
            "model" => self.model = value.trim().parse()?,
            "variance" => self.variance = value.trim().parse()?,
            "level" => self.level = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and text after
    /// `#` are ignored.
    pub fn parse_text(text: &str) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    /// Canonical `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let map = self.values();
        KEYS.iter().map(|k| format!("{k}={}\n", map[k])).collect()
    }

    fn values(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("v", self.v.to_string());
        m.insert("rho_x", fmt_full(self.rho_x));
        m.insert("r", fmt_full(self.r));
        m.insert("m", self.m.to_string());
        m.insert("blocks", self.blocks.to_string());
        m.insert("p", fmt_full(self.p));
        m.insert("n_lo", self.n_lo.to_string());
        m.insert("n_hi", self.n_hi.to_string());
        m.insert("draws", self.draws.to_string());
        m.insert("repeats", self.repeats.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("weighting", self.weighting.name().to_string());
        m.insert("beta", fmt_full(self.beta));
        m.insert("icc_y", fmt_full(self.icc_y));
        m.insert("tau", fmt_full(self.tau));
        m.insert("tau_sd", fmt_full(self.tau_sd));
        m.insert("model", self.model.name().to_string());
        m.insert("variance", self.variance.name().to_string());
        m.insert("level", fmt_full(self.level));
        m
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_text())
    }

    pub fn theta(&self) -> f64 {
        self.r / (1.0 - self.r * self.r).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.rho_x) {
            return bad(format!("rho_x = {} must lie in [0, 1)", self.rho_x));
        }
        if !(self.r > -1.0 && self.r < 1.0) {
            return bad(format!("r = {} must lie in (-1, 1)", self.r));
        }
        if !(0.0..1.0).contains(&self.icc_y) {
            return bad(format!("icc_y = {} must lie in [0, 1)", self.icc_y));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p = {} must lie in (0, 1)", self.p));
        }
        if self.draws < 1 || self.repeats < 1 || self.blocks < 1 {
            return bad("draws, repeats and blocks must be at least 1".into());
        }
        if self.m < 2 {
            return bad(format!("m = {} must be at least 2", self.m));
        }
        if self.n_lo < 1 || self.n_hi < self.n_lo {
            return bad(format!(
                "cluster size range [{}, {}] is empty",
                self.n_lo, self.n_hi
            ));
        }
        if !(self.tau_sd >= 0.0) || !self.beta.is_finite() || !self.tau.is_finite() {
            return bad("tau_sd must be nonnegative and beta, tau finite".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level = {} must lie in (0, 1)", self.level));
        }
        Ok(())
    }
}

/// Cluster sizes and per-unit covariate rows for one block.
pub fn gen_covariates(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Vec<f64>>>> {
    cfg.validate()?;
    let sd_u = (cfg.rho_x / (1.0 - cfg.rho_x)).sqrt();
    let theta = cfg.theta();
    let sizes: Vec<usize> = (0..cfg.m)
        .map(|_| rng.random_range(cfg.n_lo..=cfg.n_hi))
        .collect();
    let mut out = Vec::with_capacity(cfg.m);
    for &n in &sizes {
        let u: Vec<f64> = (0..cfg.v)
            .map(|_| sd_u * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut cluster = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = Vec::with_capacity(cfg.v);
            for k in 0..cfg.v {
                let e: f64 = rng.sample(StandardNormal);
                let prev = if k == 0 { 0.0 } else { theta * x[k - 1] };
                x.push(prev + u[k] + e);
            }
            cluster.push(x);
        }
        out.push(cluster);
    }
    Ok(out)
}

/// Full potential-outcome population for base dataset `repeat`.
pub fn gen_population(cfg: &SimConfig, repeat: usize) -> Result<Population> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, stream_id(KIND_POPULATION, repeat, 0));
    let sd_c = (cfg.icc_y / (1.0 - cfg.icc_y)).sqrt();
    let delta = Normal::new(0.0, cfg.tau_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut units = Vec::new();
    for b in 0..cfg.blocks {
        let clusters = gen_covariates(cfg, &mut rng)?;
        for (j, rows) in clusters.into_iter().enumerate() {
            let c: f64 = sd_c * rng.sample::<f64, _>(StandardNormal);
            let d: f64 = delta.sample(&mut rng);
            let n = rows.len();
            let weight = match cfg.weighting {
                Weighting::Persons => 1.0,
                Weighting::Clusters => 1.0 / n as f64,
            };
            for (i, x) in rows.into_iter().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                let y0 = cfg.beta * x.iter().sum::<f64>() + c + eps;
                units.push(UnitRecord {
                    block_id: format!("b{}", b + 1),
                    cluster_id: format!("c{}", j + 1),
                    unit_id: format!("{}", i + 1),
                    weight,
                    covariates: x,
                    outcome: Outcome::Schedule {
                        y0,
                        y1: y0 + cfg.tau + d,
                    },
                    treated: None,
                });
            }
        }
    }
    Population::from_units(units)
}

/// SHA-256 of a population's unit table at full precision.
pub fn population_hash(pop: &Population) -> String {
    let mut text = String::new();
    for u in pop.units() {
        let (y0, y1) = (u.outcome.under(false), u.outcome.under(true));
        text.push_str(&format!(
            "{},{},{},{:?},{:?},{:?}",
            u.block_id, u.cluster_id, u.unit_id, u.weight, y0, y1
        ));
        for x in &u.covariates {
            text.push_str(&format!(",{x:?}"));
        }
        text.push('\n');
    }
    sha256_hex(&text)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

/// Maps `f` over `0..n` on `workers` threads, keeping index order.
fn ordered_map<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if workers <= 1 {
        (0..n).map(f).collect()
    } else {
        pool(workers)?.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[derive(Debug, Clone)]
struct CoefDraw {
    estimate: f64,
    se_design: Option<f64>,
    covered_design: Option<bool>,
    se_crse: Option<f64>,
    covered_crse: Option<bool>,
}

#[derive(Debug, Clone)]
struct DrawRecord {
    r2: Option<(f64, f64)>,
    coefs: Vec<CoefDraw>,
}

/// Per-coefficient Monte Carlo summary.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CoefSummary {
    pub label: String,
    /// Estimand averaged over base datasets.
    pub estimand: f64,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    /// Mean over base datasets of the per-dataset SD of the estimates.
    pub empirical_sd: f64,
    pub mean_se_design: Option<f64>,
    pub mean_se_crse: Option<f64>,
    pub se_ratio_design: Option<f64>,
    pub se_ratio_crse: Option<f64>,
    pub coverage_design: Option<f64>,
    pub coverage_crse: Option<f64>,
    /// KS distance to N(0,1) of the estimates standardized within each base dataset.
    pub ks: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct R2Summary {
    pub mean_r2_tx: f64,
    pub mean_r2_txb: f64,
    pub approx_tx: f64,
    pub approx_txb: f64,
    /// Smallest per-draw `R2_TXB - R2_TX`.
    pub min_dominance: f64,
    pub mean_trace: f64,
    pub mean_n: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimSummary {
    pub config: SimConfig,
    pub rng: &'static str,
    pub total_draws: usize,
    pub coefficients: Vec<CoefSummary>,
    pub r2: Option<R2Summary>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::new();
    let mut n = 0usize;
    for x in xs {
        s.add(x);
        n += 1;
    }
    s.value() / n as f64
}

struct Repeat {
    estimands: Vec<f64>,
    labels: Vec<String>,
    draws: Vec<DrawRecord>,
    trace: Option<f64>,
    n: usize,
    approx: Option<(f64, f64)>,
}

fn run_repeat(cfg: &SimConfig, r: usize, workers: usize, estimate: bool) -> Result<Repeat> {
    let pop = gen_population(cfg, r)?;
    let counts = pop.cluster_counts();
    let treated = treated_counts(&pop, &[cfg.p])?;
    let frame = if cfg.v > 0 {
        Some(R2Frame::new(&pop)?)
    } else {
        None
    };
    let (trace, approx) = if cfg.v > 0 {
        let icc = icc_matrix(&pop)?;
        let a = r2_approximations(cfg.v, pop.m(), pop.n(), &icc);
        (Some(icc.trace), Some((a.approx_tx, a.approx_txb)))
    } else {
        (None, None)
    };
    let spec = cfg.model;
    let est = schedule_estimands(&pop, &[cfg.p])?;
    let estimands = if spec == ModelSpec::PooledRestricted {
        vec![est.pooled]
    } else {
        est.per_block.clone()
    };
    let labels: Vec<String> = if spec == ModelSpec::PooledRestricted {
        vec!["pooled".into()]
    } else {
        pop.blocks()
            .iter()
            .map(|b| format!("block:{}", b.id))
            .collect()
    };
    let vcfg = VarianceConfig::default();
    let one = |d: usize| -> Result<DrawRecord> {
        let mut rng = rng_for(cfg.seed, stream_id(KIND_DRAW, r, d));
        let asg: Assignment = draw_with_rng(&counts, &treated, &mut rng);
        let r2 = match &frame {
            Some(f) => {
                let p = f.evaluate(&asg)?;
                Some((p.r2_tx, p.r2_txb))
            }
            None => None,
        };
        let mut coefs = Vec::new();
        if estimate {
            let fit = fit_wls(build_design(&pop, &asg, spec)?)?;
            let crse = if cfg.variance.crse() {
                Some(crse_variance(&fit, Correction::ClusterCount))
            } else {
                None
            };
            for (c, &truth) in estimands.iter().enumerate() {
                let estimate = fit.coefficients[c];
                let (mut se_design, mut covered_design) = (None, None);
                if cfg.variance.design() && spec != ModelSpec::PooledRestricted {
                    let vr = design_variance_block(&fit, c, &vcfg)?;
                    let (lo, hi) = confidence_interval(estimate, &vr, cfg.level)?;
                    se_design = Some(vr.se());
                    covered_design = Some(lo <= truth && truth <= hi);
                }
                let (mut se_crse, mut covered_crse) = (None, None);
                if let Some(cr) = &crse {
                    let vr = &cr.reports[c];
                    let (lo, hi) = confidence_interval(estimate, vr, cfg.level)?;
                    se_crse = Some(vr.se());
                    covered_crse = Some(lo <= truth && truth <= hi);
                }
                coefs.push(CoefDraw {
                    estimate,
                    se_design,
                    covered_design,
                    se_crse,
                    covered_crse,
                });
            }
        }
        Ok(DrawRecord { r2, coefs })
    };
    let draws = ordered_map(cfg.draws, workers, one)?;
    Ok(Repeat {
        estimands,
        labels,
        draws,
        trace,
        n: pop.n(),
        approx,
    })
}

fn summarize_r2(repeats: &[Repeat]) -> Option<R2Summary> {
    repeats.first()?.trace?;
    let all = || {
        repeats
            .iter()
            .flat_map(|r| r.draws.iter().map(|d| d.r2.expect("covariates present")))
    };
    Some(R2Summary {
        mean_r2_tx: mean_of(all().map(|x| x.0)),
        mean_r2_txb: mean_of(all().map(|x| x.1)),
        approx_tx: mean_of(
            repeats
                .iter()
                .map(|r| r.approx.expect("covariates present").0),
        ),
        approx_txb: mean_of(
            repeats
                .iter()
                .map(|r| r.approx.expect("covariates present").1),
        ),
        min_dominance: all().map(|x| x.1 - x.0).fold(f64::INFINITY, f64::min),
        mean_trace: mean_of(repeats.iter().map(|r| r.trace.expect("covariates present"))),
        mean_n: mean_of(repeats.iter().map(|r| r.n as f64)),
    })
}

fn summarize_coef(repeats: &[Repeat], c: usize) -> CoefSummary {
    let est = |r: &Repeat| {
        r.draws
            .iter()
            .map(move |d| d.coefs[c].estimate)
            .collect::<Vec<f64>>()
    };
    let per_repeat_sd: Vec<f64> = repeats
        .iter()
        .map(|r| sample_variance(&est(r)).sqrt())
        .collect();
    let empirical_sd = mean_of(per_repeat_sd.iter().copied());
    let mut z = Vec::new();
    for (r, sd) in repeats.iter().zip(&per_repeat_sd) {
        let e = est(r);
        let mu = mean_of(e.iter().copied());
        z.extend(e.iter().map(|x| (x - mu) / sd));
    }
    let all = || {
        repeats
            .iter()
            .flat_map(move |r| r.draws.iter().map(move |d| (&d.coefs[c], r.estimands[c])))
    };
    let opt_mean = |f: &dyn Fn(&CoefDraw) -> Option<f64>| -> Option<f64> {
        let xs: Option<Vec<f64>> = all().map(|(d, _)| f(d)).collect();
        xs.map(|v| mean_of(v.into_iter()))
    };
    let mean_se_design = opt_mean(&|d| d.se_design);
    let mean_se_crse = opt_mean(&|d| d.se_crse);
    CoefSummary {
        label: repeats[0].labels[c].clone(),
        estimand: mean_of(repeats.iter().map(|r| r.estimands[c])),
        mean_estimate: mean_of(all().map(|(d, _)| d.estimate)),
        mean_bias: mean_of(all().map(|(d, t)| d.estimate - t)),
        empirical_sd,
        mean_se_design,
        mean_se_crse,
        se_ratio_design: mean_se_design.map(|s| s / empirical_sd),
        se_ratio_crse: mean_se_crse.map(|s| s / empirical_sd),
        coverage_design: opt_mean(&|d| d.covered_design.map(|b| f64::from(u8::from(b)))),
        coverage_crse: opt_mean(&|d| d.covered_crse.map(|b| f64::from(u8::from(b)))),
        ks: if z.iter().all(|x| x.is_finite()) {
            ks_normal(&z)
        } else {
            f64::NAN
        },
    }
}

/// Runs `repeats` base datasets with `draws` randomizations each.
pub fn run_study(cfg: &SimConfig, workers: usize) -> Result<SimSummary> {
    cfg.validate()?;
    let repeats: Vec<Repeat> = (0..cfg.repeats)
        .map(|r| run_repeat(cfg, r, workers, true))
        .collect::<Result<_>>()?;
    let coefficients = (0..repeats[0].estimands.len())
        .map(|c| summarize_coef(&repeats, c))
        .collect();
    Ok(SimSummary {
        config: cfg.clone(),
        rng: crate::randomize::RNG_ID,
        total_draws: cfg.draws * cfg.repeats,
        coefficients,
        r2: summarize_r2(&repeats),
    })
}

impl SimSummary {
    pub fn table(&self, full_precision: bool) -> Table {
        let f = |x: f64| if full_precision { fmt_full(x) } else { fmt6(x) };
        let o = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), f);
        let mut t = Table::new([
            "coefficient",
            "estimand",
            "mean_estimate",
            "mean_bias",
            "empirical_sd",
            "mean_se_design",
            "se_ratio_design",
            "coverage_design",
            "mean_se_crse",
            "se_ratio_crse",
            "coverage_crse",
            "ks",
        ]);
        for c in &self.coefficients {
            t.push(vec![
                c.label.clone(),
                f(c.estimand),
                f(c.mean_estimate),
                f(c.mean_bias),
                f(c.empirical_sd),
                o(c.mean_se_design),
                o(c.se_ratio_design),
                o(c.coverage_design),
                o(c.mean_se_crse),
                o(c.se_ratio_crse),
                o(c.coverage_crse),
                f(c.ks),
            ]);
        }
        t
    }

    pub fn r2_table(&self, full_precision: bool) -> Option<Table> {
        let r = self.r2?;
        let f = |x: f64| if full_precision { fmt_full(x) } else { fmt6(x) };
        let mut t = Table::new([
            "mean_r2_tx",
            "mean_r2_txb",
            "approx_tx",
            "approx_txb",
            "min_dominance",
            "mean_trace",
            "mean_n",
        ]);
        t.push(vec![
            f(r.mean_r2_tx),
            f(r.mean_r2_txb),
            f(r.approx_tx),
            f(r.approx_txb),
            f(r.min_dominance),
            f(r.mean_trace),
            f(r.mean_n),
        ]);
        Some(t)
    }

    /// Provenance header, the echoed config and the coefficient and R² tables as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = provenance(Some(self.config.seed), &self.config.to_text());
        for line in self.config.to_text().lines() {
            out.push_str(&format!("# config: {line}\n"));
        }
        out.push_str(&self.table(true).to_csv());
        if let Some(t) = self.r2_table(true) {
            out.push('\n');
            out.push_str(&t.to_csv());
        }
        out
    }
}

/// One cell of the R² approximation study.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TableA1Row {
    pub v: usize,
    pub rho_x: f64,
    pub m: usize,
    pub r2: R2Summary,
}

impl TableA1Row {
    pub fn dominance(&self) -> f64 {
        self.r2.mean_r2_txb - self.r2.mean_r2_tx
    }
}

/// Mean R² and their approximations over a grid of covariate counts, ICCs and
/// cluster counts, holding the remaining settings of `base`.
pub fn table_a1_study(
    base: &SimConfig,
    vs: &[usize],
    rhos: &[f64],
    ms: &[usize],
    workers: usize,
) -> Result<Vec<TableA1Row>> {
    if vs.is_empty() || rhos.is_empty() || ms.is_empty() {
        return Err(Error::Config("the study grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &v in vs {
        if v == 0 {
            return Err(Error::Config("the study grid needs v >= 1".into()));
        }
        for &rho_x in rhos {
            for &m in ms {
                let cfg = SimConfig {
                    v,
                    rho_x,
                    m,
                    ..base.clone()
                };
                cfg.validate()?;
                let repeats: Vec<Repeat> = (0..cfg.repeats)
                    .map(|r| run_repeat(&cfg, r, workers, false))
                    .collect::<Result<_>>()?;
                rows.push(TableA1Row {
                    v,
                    rho_x,
                    m,
                    r2: summarize_r2(&repeats).expect("v >= 1"),
                });
            }
        }
    }
    Ok(rows)
}

pub fn table_a1_table(rows: &[TableA1Row], full_precision: bool) -> Table {
    let f = |x: f64| if full_precision { fmt_full(x) } else { fmt6(x) };
    let mut t = Table::new([
        "v",
        "rho_x",
        "m",
        "mean_r2_tx",
        "approx_tx",
        "mean_r2_txb",
        "approx_txb",
        "dominance",
        "min_draw_dominance",
        "mean_trace",
        "mean_n",
    ]);
    for r in rows {
        t.push(vec![
            r.v.to_string(),
            f(r.rho_x),
            r.m.to_string(),
            f(r.r2.mean_r2_tx),
            f(r.r2.approx_tx),
            f(r.r2.mean_r2_txb),
            f(r.r2.approx_txb),
            f(r.dominance()),
            f(r.r2.min_dominance),
            f(r.r2.mean_trace),
            f(r.r2.mean_n),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            m: 12,
            draws: 40,
            repeats: 2,
            seed: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn theta_from_r() {
        assert!((SimConfig::default().theta() - 0.57735).abs() < 1e-5);
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let cfg = SimConfig::parse_text(
            "v = 5 # five\nrho_x=0.4\n\nmodel = pooled\nweighting=clusters\n",
        )
        .unwrap();
        assert_eq!(
            (cfg.v, cfg.rho_x, cfg.model, cfg.weighting),
            (5, 0.4, ModelSpec::PooledRestricted, Weighting::Clusters)
        );
        assert_eq!(SimConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
        assert!(SimConfig::parse_text("bogus=1").is_err());
        assert!(SimConfig::parse_text("v").is_err());
        let bad = SimConfig {
            rho_x: 1.0,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert_eq!(SimConfig::default().draws, 500);
        assert_eq!(SimConfig::default().repeats, 10);
    }

    #[test]
    fn sizes_and_totals() {
        let cfg = SimConfig {
            m: 20,
            ..SimConfig::default()
        };
        let pop = gen_population(&cfg, 0).unwrap();
        assert_eq!(pop.m(), 20);
        assert!(pop.blocks()[0]
            .clusters
            .iter()
            .all(|c| (25..=75).contains(&c.units.len())));
        assert!((500..=1500).contains(&pop.n()));
    }

    /// One-way ANOVA ICC estimator with unequal group sizes.
    fn anova_icc(groups: &[Vec<f64>]) -> f64 {
        let n: usize = groups.iter().map(Vec::len).sum();
        let k = groups.len();
        let grand = groups.iter().flatten().sum::<f64>() / n as f64;
        let means: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect();
        let ssb: f64 = groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
            .sum();
        let ssw: f64 = groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
            .sum();
        let msb = ssb / (k - 1) as f64;
        let msw = ssw / (n - k) as f64;
        let n0 = (n as f64
            - groups
                .iter()
                .map(|g| (g.len() * g.len()) as f64)
                .sum::<f64>()
                / n as f64)
            / (k - 1) as f64;
        (msb - msw) / (msb + (n0 - 1.0) * msw)
    }

    #[test]
    fn covariate_icc_matches_target() {
        let cfg = SimConfig {
            v: 1,
            rho_x: 0.8,
            m: 200,
            n_lo: 50,
            n_hi: 50,
            ..SimConfig::default()
        };
        let x = gen_covariates(&cfg, &mut rng_for(1, 0)).unwrap();
        let groups: Vec<Vec<f64>> = x.iter().map(|c| c.iter().map(|r| r[0]).collect()).collect();
        let icc = anova_icc(&groups);
        assert!((0.75..=0.85).contains(&icc), "{icc}");
        let cfg = SimConfig {
            v: 1,
            rho_x: 0.0,
            m: 200,
            n_lo: 50,
            n_hi: 50,
            ..SimConfig::default()
        };
        let x = gen_covariates(&cfg, &mut rng_for(2, 0)).unwrap();
        let groups: Vec<Vec<f64>> = x.iter().map(|c| c.iter().map(|r| r[0]).collect()).collect();
        assert!(anova_icc(&groups) < 0.02);
    }

    #[test]
    fn zero_effect_gives_zero_estimand() {
        let cfg = SimConfig {
            tau: 0.0,
            tau_sd: 0.0,
            ..small()
        };
        let pop = gen_population(&cfg, 0).unwrap();
        let e = schedule_estimands(&pop, &[cfg.p]).unwrap();
        assert_eq!(e.per_block, vec![0.0]);
    }

    #[test]
    fn population_is_reproducible() {
        let a = population_hash(&gen_population(&small(), 1).unwrap());
        let b = population_hash(&gen_population(&small(), 1).unwrap());
        let c = population_hash(&gen_population(&small(), 2).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cluster_weighting_gives_unit_cluster_weights() {
        let cfg = SimConfig {
            weighting: Weighting::Clusters,
            ..small()
        };
        let pop = gen_population(&cfg, 0).unwrap();
        assert!(pop.blocks()[0]
            .clusters
            .iter()
            .all(|c| (c.agg.weight - 1.0).abs() < 1e-12));
    }

    #[test]
    fn study_is_worker_invariant() {
        let cfg = SimConfig {
            blocks: 2,
            ..small()
        };
        let a = run_study(&cfg, 1).unwrap();
        let b = run_study(&cfg, 4).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.coefficients.len(), 2);
        let c = &a.coefficients[0];
        assert!((0.0..=1.0).contains(&c.coverage_design.unwrap()));
        assert!(c.empirical_sd >= 0.0);
        let r2 = a.r2.unwrap();
        assert!(r2.min_dominance >= -1e-12);
    }

    #[test]
    fn equal_weights_unadjusted_is_unbiased() {
        let cfg = SimConfig {
            weighting: Weighting::Clusters,
            model: ModelSpec::NoCovariates,
            draws: 400,
            repeats: 3,
            ..small()
        };
        let s = run_study(&cfg, 2).unwrap();
        let c = &s.coefficients[0];
        let band = 3.0 * c.empirical_sd / ((cfg.draws * cfg.repeats) as f64).sqrt();
        assert!(c.mean_bias.abs() < band, "{} vs {band}", c.mean_bias);
    }

    #[test]
    fn pooled_model_reports_crse_only() {
        let cfg = SimConfig {
            model: ModelSpec::PooledRestricted,
            blocks: 2,
            ..small()
        };
        let s = run_study(&cfg, 1).unwrap();
        assert_eq!(s.coefficients.len(), 1);
        assert!(s.coefficients[0].coverage_design.is_none());
        assert!(s.coefficients[0].coverage_crse.is_some());
    }

    #[test]
    fn grid_rows_have_dominance() {
        let base = SimConfig {
            draws: 30,
            repeats: 2,
            seed: 3,
            ..SimConfig::default()
        };
        let rows = table_a1_study(&base, &[2], &[0.0, 0.8], &[20], 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.dominance() >= 0.0 && r.r2.min_dominance >= -1e-12));
        assert!(table_a1_study(&base, &[], &[0.0], &[20], 1).is_err());
    }
}
