//! Command-line front end: `mlp estimate | study | cost`.
//!
//! Settings resolve as flags, then `--config <file>` (flat `key = value`
//! lines, `#` comments, keys named like the long flags), then defaults.
//!
//! Exit codes: 0 success, 2 usage, 3 numerical failure, 4 overflow.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::cost::{self, CostError, CostModel, OverflowPolicy};
use crate::harness::{self, HarnessError, StudyConfig};
use crate::mlp::{self, MlpConfig, MlpError, Variant};
use crate::problem::{make_family, FamilyParams, FamilyTag};
use crate::rng::{MultiIndex, KEY_SCHEME_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_OVERFLOW: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mlp", version, about = "Multilevel Picard approximations for semilinear heat equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One realization of U_{n,m}(t, x).
    Estimate(EstimateArgs),
    /// RMSE, bound and complexity study; writes CSV, JSON summary and manifest.
    Study(StudyArgs),
    /// Draw-count table: recursion, measured ledger and d(5m)^n bound.
    Cost(CostArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Flat key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// constant | quadratic | explinf | sine
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// signed | shared (aliases: section3 | intro)
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
    /// Family parameter, e.g. `--param c=0.5` (repeatable).
    #[arg(long = "param")]
    params: Vec<String>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    m: Option<u64>,
    #[arg(long)]
    t: Option<f64>,
    /// Comma-separated point; defaults to the family's ξ.
    #[arg(long)]
    x: Option<String>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    /// e.g. `1:1,2:2,3:3`
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Dimensions for the analytic cost-scaling table.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    /// Also run the estimator and report its measured ledger.
    #[arg(long)]
    measured: bool,
    /// Print arbitrary-precision counts instead of failing on overflow.
    #[arg(long)]
    bigint: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Overflow(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) | CliError::Io(_) => EXIT_NUMERICAL,
            CliError::Overflow(_) => EXIT_OVERFLOW,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Overflow(m) => write!(f, "overflow: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<MlpError> for CliError {
    fn from(e: MlpError) -> Self {
        match e {
            MlpError::TooLarge { .. } => CliError::Overflow(e.to_string()),
            MlpError::TimeOutOfRange { .. } | MlpError::PointLength { .. } | MlpError::ZeroBase => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Problem(p) => CliError::Usage(p.to_string()),
            HarnessError::Config(m) => CliError::Usage(m),
            HarnessError::Mlp(m) => m.into(),
            HarnessError::Cost(CostError::Overflow { .. }) => CliError::Overflow(e.to_string()),
            HarnessError::Io(_) | HarnessError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub master_seed: u64,
    pub key_scheme_version: u32,
    pub code_version: String,
    pub timestamp: u64,
}

impl RunManifest {
    fn new(command: &str, config: BTreeMap<String, String>, master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config,
            master_seed,
            key_scheme_version: KEY_SCHEME_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Flag values layered over a config file, then defaults. Every resolved value
/// is echoed into the manifest.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn get<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<T, CliError>
    where
        T: ToString,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid value `{raw}` for `{key}` in config")))?,
                None => default.ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))?,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn get_opt(&mut self, key: &str, flag: Option<String>) -> Option<String> {
        let v = flag.or_else(|| self.file.get(key).cloned());
        if let Some(s) = &v {
            self.resolved.insert(key.to_string(), s.clone());
        }
        v
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", no + 1)))?;
        out.insert(k.trim().trim_start_matches("--").to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Parses `n:m,n:m,...`.
pub fn parse_levels(s: &str) -> Result<Vec<(u32, u64)>, CliError> {
    s.split(',')
        .map(|pair| {
            let (n, m) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("level `{pair}` is not n:m")))?;
            let n = n.trim().parse().map_err(|_| CliError::Usage(format!("bad n in `{pair}`")))?;
            let m = m.trim().parse().map_err(|_| CliError::Usage(format!("bad m in `{pair}`")))?;
            Ok((n, m))
        })
        .collect()
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| CliError::Usage(format!("bad {what} `{v}`"))))
        .collect()
}

fn parse_params(settings: &mut Settings, flags: &[String]) -> Result<FamilyParams, CliError> {
    let mut params = FamilyParams::new();
    if let Some(raw) = settings.file.get("param").cloned() {
        for kv in raw.split(',') {
            insert_param(&mut params, kv)?;
        }
    }
    for kv in flags {
        insert_param(&mut params, kv)?;
    }
    if !params.is_empty() {
        let echo: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
        settings.resolved.insert("param".into(), echo.join(","));
    }
    Ok(params)
}

fn insert_param(params: &mut FamilyParams, kv: &str) -> Result<(), CliError> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("param `{kv}` is not key=value")))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("param `{kv}` has a non-numeric value")))?;
    params.insert(k.trim().to_string(), v);
    Ok(())
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn parse_family(s: &str) -> Result<FamilyTag, CliError> {
    s.parse().map_err(|e: crate::problem::ProblemError| CliError::Usage(e.to_string()))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

fn parse_format(s: &str) -> Result<Format, CliError> {
    match s {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        other => Err(CliError::Usage(format!("unknown format `{other}` (expected csv|json)"))),
    }
}

fn run_estimate(args: EstimateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let c = args.common;
    let mut s = Settings::load(c.config.as_deref())?;
    let family = parse_family(&s.get("problem", c.problem, None)?)?;
    let dim: usize = s.get("dim", c.dim, None)?;
    let horizon: f64 = s.get("horizon", c.horizon, Some(1.0))?;
    let n: u32 = s.get("n", args.n, None)?;
    let m: u64 = s.get("m", args.m, None)?;
    let seed: u64 = s.get("seed", c.seed, None)?;
    let variant = parse_variant(&s.get("variant", c.variant, Some("signed".into()))?)?;
    let format = parse_format(&s.get("format", c.format, Some("json".into()))?)?;
    let _workers: usize = s.get("workers", c.workers, Some(1))?;
    let params = parse_params(&mut s, &c.params)?;
    let fam = make_family(family, dim, horizon, &params).map_err(|e| CliError::Usage(e.to_string()))?;
    let t: f64 = s.get("t", args.t, Some(0.0))?;
    let x: Vec<f64> = match s.get_opt("x", args.x) {
        Some(raw) => parse_list(&raw, "coordinate")?,
        None => fam.problem.xi().to_vec(),
    };

    let cfg = MlpConfig::new(n, m, seed).with_variant(variant);
    let est = mlp::evaluate(&fam.problem, &cfg, &MultiIndex::root(), t, &x)?;
    let manifest = RunManifest::new("estimate", s.resolved, seed);

    match format {
        Format::Json => {
            let doc = json!({
                "estimate": {
                    "value": est.value,
                    "normals": est.ledger.normals,
                    "uniforms": est.ledger.uniforms,
                    "n": n,
                    "m": m,
                    "variant": variant,
                    "t": t,
                    "x": x,
                },
                "manifest": manifest,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?)?;
        }
        Format::Csv => {
            writeln!(out, "# manifest: {}", serde_json::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?)?;
            writeln!(out, "value,normals,uniforms")?;
            writeln!(out, "{:?},{},{}", est.value, est.ledger.normals, est.ledger.uniforms)?;
        }
    }
    Ok(())
}

fn run_study(args: StudyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let c = args.common;
    let mut s = Settings::load(c.config.as_deref())?;
    let family = parse_family(&s.get("problem", c.problem, None)?)?;
    let dim: usize = s.get("dim", c.dim, None)?;
    let horizon: f64 = s.get("horizon", c.horizon, Some(1.0))?;
    let levels = parse_levels(&s.get::<String>("levels", args.levels, None)?)?;
    let reps: usize = s.get("reps", args.reps, None)?;
    let seed: u64 = s.get("seed", c.seed, Some(0))?;
    let delta: f64 = s.get("delta", args.delta, Some(1.0))?;
    let variant = parse_variant(&s.get("variant", c.variant, Some("signed".into()))?)?;
    let dims = parse_list(&s.get("dims", args.dims, Some(dim.to_string()))?, "dimension")?;
    let out_dir = PathBuf::from(s.get::<String>("out-dir", args.out_dir.map(|p| p.display().to_string()), None)?);
    let workers = c.workers.or_else(|| s.file.get("workers").and_then(|v| v.parse().ok())).unwrap_or(0);
    let params = parse_params(&mut s, &c.params)?;

    let cfg = StudyConfig {
        family,
        params,
        dim,
        horizon,
        levels,
        reps,
        dims,
        delta,
        master_seed: seed,
        variant,
        workers,
    };
    let report = match harness::complexity_study(&cfg) {
        Ok(r) => r,
        Err(HarnessError::DegenerateFit(_)) => harness::rmse_study(&cfg)?,
        Err(e) => return Err(e.into()),
    };
    let manifest = RunManifest::new("study", s.resolved, seed);

    let mut csv_buf = Vec::new();
    report.write_csv(&mut csv_buf)?;
    let summary = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    let manifest_json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;

    fs::create_dir_all(&out_dir)?;
    let files = [
        ("study.csv", csv_buf),
        ("summary.json", summary),
        ("manifest.json", manifest_json),
    ];
    // stage everything first so a failure leaves no partial output behind
    for (name, bytes) in &files {
        fs::write(out_dir.join(format!(".{name}.partial")), bytes)?;
    }
    for (name, _) in &files {
        fs::rename(out_dir.join(format!(".{name}.partial")), out_dir.join(name))?;
    }
    writeln!(out, "wrote {}", out_dir.join("study.csv").display())?;
    Ok(())
}

#[derive(Serialize)]
struct CostRow {
    n: u32,
    m: u64,
    d: usize,
    rv_analytic: String,
    rv_measured: String,
    rv_bound: String,
}

/// Largest analytic count for which `--measured` actually runs the estimator.
const MEASURE_LIMIT: u64 = 50_000_000;

fn run_cost(args: CostArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let c = args.common;
    let mut s = Settings::load(c.config.as_deref())?;
    let dims: Vec<usize> = parse_list(&s.get::<String>("dims", args.dims, None)?, "dimension")?;
    let levels = parse_levels(&s.get::<String>("levels", args.levels, None)?)?;
    let variant = parse_variant(&s.get("variant", c.variant, Some("signed".into()))?)?;
    let format = parse_format(&s.get("format", c.format, Some("csv".into()))?)?;
    let seed: u64 = s.get("seed", c.seed, Some(0))?;
    let policy = if args.bigint { OverflowPolicy::BigInt } else { OverflowPolicy::Error };
    s.resolved.insert("measured".into(), args.measured.to_string());
    s.resolved.insert("bigint".into(), args.bigint.to_string());

    let mut rows = Vec::new();
    let mut overflowed = false;
    for &d in &dims {
        let model = CostModel::new(d).map_err(|e| CliError::Usage(e.to_string()))?;
        for &(n, m) in &levels {
            let cell = |r: Result<cost::Count, CostError>, flag: &mut bool| match r {
                Ok(v) => Ok(v.to_string()),
                Err(CostError::Overflow { .. }) => {
                    *flag = true;
                    Ok("overflow".to_string())
                }
                Err(e) => Err(CliError::Usage(e.to_string())),
            };
            let analytic = cost::rv_count(&model, n, m, variant, policy);
            let small = analytic.as_ref().ok().and_then(|c| match c {
                cost::Count::Small(v) => Some(*v),
                cost::Count::Big(_) => None,
            });
            let rv_analytic = cell(analytic, &mut overflowed)?;
            let rv_bound = if n == 0 {
                "0".to_string()
            } else {
                cell(cost::rv_bound_count(d, n, m, policy), &mut overflowed)?
            };
            let rv_measured = match small {
                Some(v) if args.measured && v <= MEASURE_LIMIT => {
                    let fam = make_family(FamilyTag::ConstantTerminal, d, 1.0, &FamilyParams::new())
                        .map_err(|e| CliError::Usage(e.to_string()))?;
                    let cfg = MlpConfig::new(n, m, seed).with_variant(variant);
                    let est = mlp::evaluate(&fam.problem, &cfg, &MultiIndex::root(), 0.0, fam.problem.xi())?;
                    est.ledger.total().to_string()
                }
                _ => String::new(),
            };
            rows.push(CostRow {
                n,
                m,
                d,
                rv_analytic,
                rv_measured,
                rv_bound,
            });
        }
    }

    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
            out.write_all(&bytes)?;
        }
        Format::Json => {
            let manifest = RunManifest::new("cost", s.resolved.clone(), seed);
            let doc = json!({ "rows": rows, "manifest": manifest });
            writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?)?;
        }
    }
    if overflowed {
        return Err(CliError::Overflow("one or more rows overflowed 63 bits (rerun with --bigint)".into()));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => run_estimate(a, out),
        Command::Study(a) => run_study(a, out),
        Command::Cost(a) => run_cost(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "mlp: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
