//! Command-line interface: `analyze`, `simulate`, `r2lab`, `exact` and `conditions`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::asymptotics::{condition_report, normality_diagnostic};
use crate::bias_exact::hartley_bias;
use crate::error::{Error, Result};
use crate::estimators::schedule_gamma;
use crate::population::{block_summary, ingest_units, IngestOptions, Population};
use crate::randomize::{DEFAULT_ENUMERATION_CAP, RNG_ID};
use crate::report::{fmt6, fmt_full, provenance, sha256_hex, Table, TOOL_VERSION};
use crate::simlab::{run_study, table_a1_study, table_a1_table, SimConfig};
use crate::variance::{
    confidence_interval, crse_variance, design_variance_block, Correction, DfRule, QStar,
    VarianceConfig, VarianceReport,
};
use crate::wls::{build_design, fit_wls, ModelSpec};

#[derive(Debug, Parser)]
#[command(
    name = "clusterate",
    version,
    about = "Design-based estimation for blocked cluster-randomized trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate treatment effects and standard errors from observed trial data.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study of estimator bias, SE calibration and coverage.
    Simulate(SimulateArgs),
    /// Tabulate mean treatment-covariate R² against their approximations over a grid.
    R2lab(R2labArgs),
    /// Exact ratio bias by enumerating every assignment of a potential-outcome table.
    Exact(ExactArgs),
    /// Finite-sample regularity ratios for the normal approximations.
    Conditions(ConditionsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    None,
    Interacted,
    Pooled,
    BlockCov,
}

impl From<ModelArg> for ModelSpec {
    fn from(m: ModelArg) -> ModelSpec {
        match m {
            ModelArg::None => ModelSpec::NoCovariates,
            ModelArg::Interacted => ModelSpec::FullInteracted,
            ModelArg::Pooled => ModelSpec::PooledRestricted,
            ModelArg::BlockCov => ModelSpec::BlockCovariateInteracted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceArg {
    Design,
    Crse,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DfArg {
    Satterthwaite,
    Min,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also write the output to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Delimited unit-level data file.
    #[arg(long)]
    pub input: PathBuf,
    /// Field delimiter: a single character, or `tab`.
    #[arg(long, default_value = ",")]
    pub delimiter: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "interacted")]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "both")]
    pub variance: VarianceArg,
    /// Cluster-robust small-sample factor: a number, or `m/(m-1)`.
    #[arg(long, default_value = "m/(m-1)")]
    pub g: String,
    /// Block share of covariate degrees of freedom: a number, or `share` for the block weight share.
    #[arg(long, default_value = "share")]
    pub qstar: String,
    /// Degrees-of-freedom rule for design-based intervals.
    #[arg(long, value_enum, default_value = "satterthwaite")]
    pub df: DfArg,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plain-text `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub v: Option<usize>,
    #[arg(long = "rho-x")]
    pub rho_x: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub variance: Option<VarianceArg>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "CLUSTERATE_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct R2labArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Covariate counts of the grid.
    #[arg(long = "grid-v", value_delimiter = ',', default_value = "2,5,10")]
    pub grid_v: Vec<usize>,
    /// Covariate ICCs of the grid.
    #[arg(long = "grid-rho", value_delimiter = ',', default_value = "0,0.4,0.8")]
    pub grid_rho: Vec<f64>,
    /// Cluster counts of the grid.
    #[arg(long = "grid-m", value_delimiter = ',', default_value = "20,40,60")]
    pub grid_m: Vec<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, env = "CLUSTERATE_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Seed (required; echoed in the provenance header).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treated proportion per block: one value, or one per block separated by commas.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub p: Vec<f64>,
    /// Largest number of assignments to enumerate per block.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP as u64)]
    pub cap: u64,
    #[arg(long, env = "CLUSTERATE_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ConditionsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub p: Vec<f64>,
    /// `none` ignores covariates; any other model adjusts with the population slope.
    #[arg(long, value_enum, default_value = "none")]
    pub model: ModelArg,
    /// Replicate every block's clusters this many times before evaluating.
    #[arg(long, default_value_t = 1)]
    pub replicate: usize,
    /// Also run a normality check with this many draws (needs --seed).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "CLUSTERATE_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub output: Output,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind().exit_code()
        }
    }
}

/// Runs one command, writing its primary output to `out`.
pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Analyze(a) => analyze(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::R2lab(a) => r2lab(a, out),
        Command::Exact(a) => exact(a, out),
        Command::Conditions(a) => conditions(a, out),
    }
}

fn delimiter(s: &str) -> Result<u8> {
    match s {
        "tab" | "\\t" => Ok(b'\t'),
        _ if s.len() == 1 => Ok(s.as_bytes()[0]),
        _ => Err(Error::Config(format!(
            "delimiter '{s}' must be one character or 'tab'"
        ))),
    }
}

/// Reads the input file and returns the population with the file's digest.
fn load(input: &InputArgs) -> Result<(Population, String)> {
    let bytes = fs::read(&input.input)?;
    let digest = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
    let pop = ingest_units(
        bytes.as_slice(),
        &IngestOptions {
            delimiter: delimiter(&input.delimiter)?,
        },
    )?;
    Ok((pop, digest))
}

fn require_seed(seed: Option<u64>, command: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Config(format!("{command} needs --seed for reproducibility")))
}

/// Renders `tables` in the requested format with a provenance header, prints
/// it and writes it to `--out` when given.
fn emit(
    output: &Output,
    seed: Option<u64>,
    config: &str,
    tables: &[(&str, Table)],
    json: serde_json::Value,
    out: &mut dyn Write,
) -> Result<()> {
    let text = match output.format {
        Format::Json => {
            let doc = serde_json::json!({
                "provenance": {
                    "tool": TOOL_VERSION,
                    "rng": RNG_ID,
                    "seed": seed,
                    "config_sha256": sha256_hex(config),
                    "config": config,
                },
                "result": json,
            });
            serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))? + "\n"
        }
        Format::Table | Format::Csv => {
            let mut s = provenance(seed, config);
            for line in config.lines() {
                s.push_str(&format!("# config: {line}\n"));
            }
            for (i, (title, t)) in tables.iter().enumerate() {
                if i > 0 {
                    s.push('\n');
                }
                if output.format == Format::Table {
                    if !title.is_empty() {
                        s.push_str(&format!("{title}\n"));
                    }
                    s.push_str(&t.to_text());
                } else {
                    s.push_str(&t.to_csv());
                }
            }
            s
        }
    };
    out.write_all(text.as_bytes())?;
    if let Some(path) = &output.out {
        fs::write(path, &text)?;
    }
    Ok(())
}

fn num(format: Format) -> fn(f64) -> String {
    if format == Format::Table {
        fmt6
    } else {
        fmt_full
    }
}

#[derive(Debug, Clone, serde::Serialize)]
struct EstimateRow {
    coefficient: String,
    estimate: f64,
    method: &'static str,
    se: f64,
    df: f64,
    g: f64,
    ci_lower: f64,
    ci_upper: f64,
}

fn estimate_row(
    coefficient: &str,
    estimate: f64,
    vr: &VarianceReport,
    level: f64,
) -> Result<EstimateRow> {
    let (lo, hi) = confidence_interval(estimate, vr, level)?;
    Ok(EstimateRow {
        coefficient: coefficient.to_string(),
        estimate,
        method: vr.method.label(),
        se: vr.se(),
        df: vr.df,
        g: vr.correction,
        ci_lower: lo,
        ci_upper: hi,
    })
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let (pop, digest) = load(&a.input)?;
    let asg = pop.observed_assignment()?;
    let spec: ModelSpec = a.model.into();
    let g = if a.g == "m/(m-1)" {
        Correction::ClusterCount
    } else {
        Correction::Fixed(
            a.g.parse()
                .map_err(|_| Error::Config(format!("bad --g '{}'", a.g)))?,
        )
    };
    let qstar = if a.qstar == "share" {
        QStar::WeightShare
    } else {
        QStar::Fixed(
            a.qstar
                .parse()
                .map_err(|_| Error::Config(format!("bad --qstar '{}'", a.qstar)))?,
        )
    };
    let df_rule = if a.df == DfArg::Min {
        DfRule::Min
    } else {
        DfRule::Satterthwaite
    };
    let vcfg = VarianceConfig { g, qstar, df_rule };
    let want_design = a.variance != VarianceArg::Crse;
    let want_crse = a.variance != VarianceArg::Design;
    if spec == ModelSpec::PooledRestricted && a.variance == VarianceArg::Design {
        return Err(Error::InvalidArgument(
            "the design-based variance is per block; use --variance crse with --model pooled"
                .into(),
        ));
    }
    let fit = fit_wls(build_design(&pop, &asg, spec)?)?;
    let crse = want_crse.then(|| crse_variance(&fit, g));
    let nt = fit.design.n_treatment();
    let mut rows = Vec::new();
    let mut design_reports = Vec::new();
    for c in 0..nt {
        let label = fit.labels[c].clone();
        let est = fit.coefficients[c];
        if want_design && spec != ModelSpec::PooledRestricted {
            let vr = design_variance_block(&fit, c, &vcfg)?;
            rows.push(estimate_row(&label, est, &vr, a.level)?);
            design_reports.push(vr);
        }
        if let Some(cr) = &crse {
            rows.push(estimate_row(&label, est, &cr.reports[c], a.level)?);
        }
    }
    // Precision-weighted combination of the block effects.
    if spec != ModelSpec::PooledRestricted && pop.h() > 1 {
        let summaries = block_summary(&pop, Some(&asg))?;
        let k: Vec<f64> = summaries
            .iter()
            .map(|s| {
                let arms = s.arms.as_ref().expect("assignment given");
                arms.w1 * arms.w0 / (arms.w1 + arms.w0)
            })
            .collect();
        let total: f64 = k.iter().sum();
        let wts: Vec<f64> = k.iter().map(|x| x / total).collect();
        let est: f64 = wts.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum();
        if !design_reports.is_empty() {
            let parts: Vec<f64> = wts
                .iter()
                .zip(&design_reports)
                .map(|(a, r)| a * a * r.value)
                .collect();
            let value: f64 = parts.iter().sum();
            let denom: f64 = parts
                .iter()
                .zip(&design_reports)
                .map(|(p, r)| p * p / r.df)
                .sum();
            let df = if denom > 0.0 {
                value * value / denom
            } else {
                design_reports
                    .iter()
                    .map(|r| r.df)
                    .fold(f64::INFINITY, f64::min)
            };
            let vr = VarianceReport {
                value,
                df,
                ..design_reports[0].clone()
            };
            rows.push(estimate_row("combined", est, &vr, a.level)?);
        }
        if let Some(cr) = &crse {
            let mut value = 0.0;
            for i in 0..nt {
                for j in 0..nt {
                    value += wts[i] * wts[j] * cr.matrix[(i, j)];
                }
            }
            let vr = VarianceReport {
                value: value.max(0.0),
                ..cr.reports[0].clone()
            };
            rows.push(estimate_row("combined", est, &vr, a.level)?);
        }
    }
    let config = format!(
        "command=analyze\ninput_sha256={digest}\nmodel={}\nvariance={:?}\ng={}\nqstar={}\ndf={:?}\nlevel={}\n",
        spec.name(),
        a.variance,
        a.g,
        a.qstar,
        a.df,
        fmt_full(a.level)
    )
    .to_lowercase();
    let f = num(a.output.format);
    let mut t = Table::new([
        "coefficient",
        "estimate",
        "method",
        "se",
        "df",
        "g",
        "ci_lower",
        "ci_upper",
    ]);
    for r in &rows {
        t.push(vec![
            r.coefficient.clone(),
            f(r.estimate),
            r.method.to_string(),
            f(r.se),
            f(r.df),
            f(r.g),
            f(r.ci_lower),
            f(r.ci_upper),
        ]);
    }
    let json = serde_json::json!({ "rows": rows });
    emit(&a.output, None, &config, &[("", t)], json, out)
}

fn base_config(path: &Option<PathBuf>, sets: &[String]) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => SimConfig::parse_text(&fs::read_to_string(p)?)?,
        None => SimConfig::default(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set '{s}' is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let seed = require_seed(a.seed, "simulate")?;
    let mut cfg = base_config(&a.config, &a.set)?;
    cfg.seed = seed;
    let set =
        |cfg: &mut SimConfig, k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
    set(&mut cfg, "draws", a.draws.map(|x| x.to_string()))?;
    set(&mut cfg, "repeats", a.repeats.map(|x| x.to_string()))?;
    set(&mut cfg, "m", a.m.map(|x| x.to_string()))?;
    set(&mut cfg, "v", a.v.map(|x| x.to_string()))?;
    set(&mut cfg, "rho_x", a.rho_x.map(fmt_full))?;
    set(&mut cfg, "p", a.p.map(fmt_full))?;
    set(&mut cfg, "level", a.level.map(fmt_full))?;
    if let Some(m) = a.model {
        cfg.model = m.into();
    }
    if let Some(v) = a.variance {
        cfg.set("variance", &format!("{v:?}").to_lowercase())?;
    }
    cfg.validate()?;
    let s = run_study(&cfg, a.workers)?;
    let full = a.output.format != Format::Table;
    let mut tables = vec![("estimates", s.table(full))];
    if let Some(t) = s.r2_table(full) {
        tables.push(("treatment-covariate R2", t));
    }
    let json = serde_json::to_value(&s).map_err(|e| Error::Config(e.to_string()))?;
    emit(&a.output, Some(seed), &cfg.to_text(), &tables, json, out)
}

fn r2lab(a: &R2labArgs, out: &mut dyn Write) -> Result<()> {
    let seed = require_seed(a.seed, "r2lab")?;
    let mut cfg = base_config(&a.config, &a.set)?;
    cfg.seed = seed;
    if let Some(d) = a.draws {
        cfg.draws = d;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    let rows = table_a1_study(&cfg, &a.grid_v, &a.grid_rho, &a.grid_m, a.workers)?;
    let grid = format!(
        "grid_v={:?}\ngrid_rho={:?}\ngrid_m={:?}\n",
        a.grid_v, a.grid_rho, a.grid_m
    );
    let config = cfg.to_text() + &grid;
    let t = table_a1_table(&rows, a.output.format != Format::Table);
    let json = serde_json::to_value(&rows).map_err(|e| Error::Config(e.to_string()))?;
    emit(&a.output, Some(seed), &config, &[("", t)], json, out)
}

fn exact(a: &ExactArgs, out: &mut dyn Write) -> Result<()> {
    let seed = require_seed(a.seed, "exact")?;
    let (pop, digest) = load(&a.input)?;
    pop.require_schedule()?;
    let p = crate::estimators::expand(&a.p, pop.h())?;
    let mut reports = Vec::new();
    for (b, &pb) in p.iter().enumerate() {
        reports.push(hartley_bias(&pop, b, pb, a.cap as u128, a.workers)?);
    }
    let f = num(a.output.format);
    let mut t = Table::new([
        "block",
        "m",
        "m1",
        "assignments",
        "bias_treated",
        "bias_control",
        "total",
        "expectation",
        "estimand",
        "identity_residual",
    ]);
    for r in &reports {
        t.push(vec![
            r.block_id.clone(),
            r.m.to_string(),
            r.m1.to_string(),
            r.n_assignments.to_string(),
            f(r.bias_treated),
            f(r.bias_control),
            f(r.total),
            f(r.expectation),
            f(r.estimand),
            fmt_full(r.identity_residual),
        ]);
    }
    let config = format!(
        "command=exact\ninput_sha256={digest}\np={}\ncap={}\n",
        p.iter().map(|x| fmt_full(*x)).collect::<Vec<_>>().join(","),
        a.cap
    );
    let json = serde_json::to_value(&reports).map_err(|e| Error::Config(e.to_string()))?;
    emit(&a.output, Some(seed), &config, &[("", t)], json, out)
}

fn conditions(a: &ConditionsArgs, out: &mut dyn Write) -> Result<()> {
    if a.replicate < 1 {
        return Err(Error::Config("--replicate must be at least 1".into()));
    }
    let (pop, digest) = load(&a.input)?;
    let pop = pop.replicate(a.replicate);
    let spec: ModelSpec = a.model.into();
    let gamma = if spec.uses_covariates() && pop.v() > 0 {
        schedule_gamma(&pop, &a.p)?
    } else {
        Vec::new()
    };
    let report = condition_report(&pop, &a.p, &gamma)?;
    let f = num(a.output.format);
    let mut t = Table::new(["block", "quantity", "arm", "value", "degenerate"]);
    for r in report.rows() {
        t.push(vec![
            r.block,
            r.quantity.into(),
            r.arm.into(),
            f(r.value),
            r.degenerate.to_string(),
        ]);
    }
    let mut tables = vec![("", t)];
    let mut normality = Vec::new();
    if let Some(reps) = a.reps {
        let seed = require_seed(a.seed, "conditions --reps")?;
        let p = crate::estimators::expand(&a.p, pop.h())?;
        let mut nt = Table::new(["block", "reps", "ks", "mean", "variance"]);
        for (b, block) in pop.blocks().iter().enumerate() {
            let d = normality_diagnostic(&pop, b, p[b], &gamma, reps, seed, a.workers)?;
            nt.push(vec![
                block.id.clone(),
                reps.to_string(),
                f(d.ks),
                f(d.mean),
                f(d.variance),
            ]);
            normality.push(d);
        }
        tables.push(("normality", nt));
    }
    let config = format!(
        "command=conditions\ninput_sha256={digest}\np={}\nmodel={}\nreplicate={}\nreps={}\n",
        a.p.iter()
            .map(|x| fmt_full(*x))
            .collect::<Vec<_>>()
            .join(","),
        spec.name(),
        a.replicate,
        a.reps.map_or_else(|| "none".to_string(), |r| r.to_string())
    );
    let json = serde_json::json!({ "conditions": report, "normality": normality });
    emit(&a.output, a.seed, &config, &tables, json, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> Result<String> {
        let cli =
            Cli::try_parse_from(std::iter::once("clusterate").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        execute(&cli.command, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(
            run_capture(&["simulate", "--draws", "2"]),
            Err(Error::Config(_))
        ));
        assert!(matches!(run_capture(&["r2lab"]), Err(Error::Config(_))));
    }

    #[test]
    fn delimiters() {
        assert_eq!(delimiter("tab").unwrap(), b'\t');
        assert_eq!(delimiter(";").unwrap(), b';');
        assert!(delimiter("ab").is_err());
    }

    #[test]
    fn simulate_echoes_config() {
        let out = run_capture(&[
            "simulate",
            "--seed",
            "3",
            "--draws",
            "5",
            "--repeats",
            "1",
            "--m",
            "10",
        ])
        .unwrap();
        assert!(out.starts_with("# tool: clusterate"));
        assert!(out.contains("# config: draws=5\n"));
        assert!(out.contains("# seed: 3\n"));
        let bad = run_capture(&["simulate", "--seed", "3", "--rho-x", "1"]);
        assert_eq!(bad.unwrap_err().kind().exit_code(), 2);
    }
}
