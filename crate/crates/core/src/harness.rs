//! Statistical experiments on top of the estimator: empirical RMSE against a
//! reference value, the a-priori RMSE bound, the cost-versus-accuracy
//! inequality and Monte Carlo estimates of the time-weighted semi-norms.

use std::io;
use std::time::Instant;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::cost::{self, ComplexityConstant, CostError, CostModel};
use crate::mlp::{self, MlpConfig, MlpError, Variant};
use crate::oracle::{self, OracleError};
use crate::problem::{self, BoundConstants, FamilyParams, FamilyTag, Problem, ProblemError};
use crate::rng::{IndexKey, MultiIndex};

/// Bumped when CSV columns or JSON fields change.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Confidence level of the RMSE inflation factor.
pub const RMSE_CONFIDENCE: f64 = 0.999;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("no reference solution: {0}")]
    Reference(#[from] OracleError),
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("degenerate complexity fit: {0}")]
    DegenerateFit(String),
    #[error("non-finite field value at t={t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub family: FamilyTag,
    pub params: FamilyParams,
    pub dim: usize,
    pub horizon: f64,
    /// `(n, m)` pairs, typically `n = m`.
    pub levels: Vec<(u32, u64)>,
    pub reps: usize,
    /// Dimensions for the analytic cost-scaling table.
    pub dims: Vec<usize>,
    pub delta: f64,
    pub master_seed: u64,
    pub variant: Variant,
    /// Worker threads; `0` uses the global pool. Never changes results.
    #[serde(skip)]
    pub workers: usize,
}

impl StudyConfig {
    pub fn new(family: FamilyTag, dim: usize, levels: Vec<(u32, u64)>, reps: usize, master_seed: u64) -> Self {
        Self {
            family,
            params: FamilyParams::new(),
            dim,
            horizon: 1.0,
            levels,
            reps,
            dims: vec![1, 10, 100],
            delta: 1.0,
            master_seed,
            variant: Variant::SignedIndex,
            workers: 0,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.reps < 2 {
            return Err(HarnessError::Config("reps must be at least 2".into()));
        }
        if self.levels.is_empty() {
            return Err(HarnessError::Config("levels must be nonempty".into()));
        }
        if !(self.delta > 0.0) {
            return Err(HarnessError::Config("delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub n: u32,
    pub m: u64,
    pub mean: f64,
    pub stderr: f64,
    pub rmse: f64,
    pub rv_analytic: u64,
    pub rv_measured: u64,
    pub rv_bound: Option<u64>,
    pub theorem_bound: f64,
    pub inflation: f64,
    pub bound_holds: bool,
    /// `ln(d·C·RMSE^{−(2+δ)})`, filled by [`complexity_study`].
    pub ln_complexity_rhs: Option<f64>,
    pub complexity_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimScaling {
    pub dim: usize,
    pub n: u32,
    pub m: u64,
    pub rv_analytic: u64,
    /// `rv(d) / rv(dims[0])`
    pub ratio: f64,
    pub rv_per_dim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub config: StudyConfig,
    pub reference: f64,
    pub bound_constants: BoundConstants,
    pub apriori_bound: f64,
    pub rows: Vec<LevelRow>,
    pub complexity: Option<ComplexityConstant>,
    /// Least-squares slope of `ln RV` against `ln(1/RMSE)`.
    pub slope: Option<f64>,
    pub dim_scaling: Vec<DimScaling>,
}

/// `e^{LT}(g_l2 + T‖F(0)‖₁) · e^{M/2}(1+2LT)^N / M^{N/2}`.
pub fn theorem_bound(problem: &Problem, bounds: &BoundConstants, n: u32, m: u64) -> f64 {
    let lt = problem.lip() * problem.horizon();
    let mf = m as f64;
    let nf = n as f64;
    oracle::apriori_bound(problem, bounds.g_l2, bounds.f0_norm)
        * (0.5 * mf + nf * (1.0 + 2.0 * lt).ln() - 0.5 * nf * mf.ln()).exp()
}

/// `sqrt(χ²_{q}(reps) / reps)`: turns an in-expectation bound on the MSE into
/// a one-sided test on the empirical RMSE from `reps` samples.
pub fn rmse_inflation(reps: usize, confidence: f64) -> f64 {
    let chi = ChiSquared::new(reps as f64).expect("reps > 0");
    (chi.inverse_cdf(confidence) / reps as f64).sqrt()
}

/// Runs `reps` independent evaluations of `U_{n,m}(0, ξ)` per level and
/// compares them with the reference solution and the RMSE bound.
pub fn rmse_study(config: &StudyConfig) -> Result<StudyReport, HarnessError> {
    config.validate()?;
    let fam = problem::make_family(config.family, config.dim, config.horizon, &config.params)?;
    let p = &fam.problem;
    let xi = p.xi().to_vec();
    let reference = fam.exact(0.0, &xi)?;
    let bounds = fam.bound_constants();
    let model = CostModel::new(config.dim)?;
    let inflation = rmse_inflation(config.reps, RMSE_CONFIDENCE);

    let mut rows = Vec::with_capacity(config.levels.len());
    for &(n, m) in &config.levels {
        let cfg = MlpConfig::new(n, m, config.master_seed).with_variant(config.variant);
        let ests = mlp::evaluate_replicated(p, &cfg, 0.0, &xi, config.reps, config.workers)?;
        let rv_measured = ests[0].ledger.total();
        if ests.iter().any(|e| e.ledger.total() != rv_measured) {
            return Err(HarnessError::Config("ledger differs between replications".into()));
        }
        let values: Vec<f64> = ests.iter().map(|e| e.value).collect();
        let (mean, stderr) = mean_and_stderr(&values);
        let rmse = (values.iter().map(|v| (v - reference).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
        let bound = theorem_bound(p, &bounds, n, m);
        rows.push(LevelRow {
            n,
            m,
            mean,
            stderr,
            rmse,
            rv_analytic: cost::rv_recursion(&model, n, m, config.variant)?,
            rv_measured,
            rv_bound: cost::rv_bound(config.dim, n, m).ok(),
            theorem_bound: bound,
            inflation,
            bound_holds: rmse <= bound * inflation,
            ln_complexity_rhs: None,
            complexity_holds: None,
        });
    }

    let dim_scaling = match config.levels.last() {
        Some(&(n, m)) => dim_scaling(&config.dims, n, m, config.variant)?,
        None => Vec::new(),
    };

    Ok(StudyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        reference,
        bound_constants: bounds,
        apriori_bound: oracle::apriori_bound(p, bounds.g_l2, bounds.f0_norm),
        rows,
        complexity: None,
        slope: None,
        dim_scaling,
    })
}

/// Analytic draw counts at fixed `(n, m)` across dimensions.
pub fn dim_scaling(dims: &[usize], n: u32, m: u64, variant: Variant) -> Result<Vec<DimScaling>, HarnessError> {
    let mut out: Vec<DimScaling> = Vec::with_capacity(dims.len());
    for &d in dims {
        let rv = cost::rv_recursion(&CostModel::new(d)?, n, m, variant)?;
        let first = out.first().map(|r| r.rv_analytic).unwrap_or(rv);
        out.push(DimScaling {
            dim: d,
            n,
            m,
            rv_analytic: rv,
            ratio: rv as f64 / first as f64,
            rv_per_dim: rv as f64 / d as f64,
        });
    }
    Ok(out)
}

/// [`rmse_study`] plus the cost-versus-error inequality
/// `RV_{N,N} ≤ d·C·RMSE^{−(2+δ)}` at each level and a log–log fit of cost
/// against accuracy.
pub fn complexity_study(config: &StudyConfig) -> Result<StudyReport, HarnessError> {
    let mut report = rmse_study(config)?;
    let positive: Vec<&LevelRow> = report.rows.iter().filter(|r| r.rmse > 0.0).collect();
    if positive.len() < 3 {
        return Err(HarnessError::DegenerateFit(format!(
            "need at least 3 levels with nonzero RMSE, have {}",
            positive.len()
        )));
    }
    let xs: Vec<f64> = positive.iter().map(|r| -r.rmse.ln()).collect();
    let ys: Vec<f64> = positive.iter().map(|r| (r.rv_analytic as f64).ln()).collect();
    let slope = least_squares_slope(&xs, &ys)
        .ok_or_else(|| HarnessError::DegenerateFit("all RMSE values are equal".into()))?;

    let fam = problem::make_family(config.family, config.dim, config.horizon, &config.params)?;
    let bc = report.bound_constants;
    let cc = cost::complexity_constant(&fam.problem, config.delta, bc.g_l2, bc.f0_norm)?;
    for row in report.rows.iter_mut() {
        if row.rmse > 0.0 {
            let rhs = cc.ln_rv_bound(config.dim, row.rmse);
            row.ln_complexity_rhs = Some(rhs);
            row.complexity_holds = Some((row.rv_analytic as f64).ln() <= rhs);
        }
    }
    report.complexity = Some(cc);
    report.slope = Some(slope);
    Ok(report)
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeminormEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of `‖V‖ₖ`:
///
/// * `k = 0`: `(E|V(0,ξ)|²)^{1/2}`;
/// * `k ≥ 1`: `(T⁻ᵏ ∫₀ᵀ t^{k−1}/(k−1)! E|V(t,ξ+W_t)|² dt)^{1/2}`, sampled with
///   `t = T·u^{1/k}` (density `k t^{k−1}/Tᵏ`), which leaves `E|V|²/k!`.
///
/// The standard error comes from the delta method.
pub fn seminorm_estimate_with_se(
    problem: &Problem,
    field: &dyn Fn(f64, &[f64]) -> f64,
    k: u32,
    samples: usize,
    seed: u64,
) -> Result<SeminormEstimate, HarnessError> {
    if samples == 0 {
        return Err(HarnessError::Config("samples must be positive".into()));
    }
    let d = problem.dim();
    let big_t = problem.horizon();
    let k_fact: f64 = (1..=k).map(f64::from).product();
    let base = IndexKey::from_index(seed, &MultiIndex::root());
    let mut x = vec![0.0; d];
    let mut acc = Vec::with_capacity(samples);
    for s in 0..samples {
        let (t, v) = if k == 0 {
            (0.0, field(0.0, problem.xi()))
        } else {
            let node = base.child(k as i64, s as i64);
            let t = big_t * node.stream(mlp::TIME_DRAW).uniform().powf(1.0 / k as f64);
            node.stream(mlp::SPACE_DRAW).fill_normals(&mut x);
            let sd = t.sqrt();
            for (xk, c) in x.iter_mut().zip(problem.xi()) {
                *xk = c + sd * *xk;
            }
            (t, field(t, &x))
        };
        if !v.is_finite() {
            return Err(HarnessError::NonFinite { t });
        }
        acc.push(v * v / k_fact);
    }
    let (mean, se_sq) = mean_and_stderr(&acc);
    let value = mean.sqrt();
    let stderr = if samples < 2 {
        f64::NAN
    } else if value > 0.0 {
        se_sq / (2.0 * value)
    } else {
        0.0
    };
    Ok(SeminormEstimate { value, stderr })
}

pub fn seminorm_estimate(
    problem: &Problem,
    field: &dyn Fn(f64, &[f64]) -> f64,
    k: u32,
    samples: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    seminorm_estimate_with_se(problem, field, k, samples, seed).map(|e| e.value)
}

/// Monte Carlo `g_l2 = (E|g(ξ+W_T)|²)^{1/2}` and `T‖F(0)‖₁`, for problems
/// without closed forms.
pub fn estimate_bound_constants(problem: &Problem, samples: usize, seed: u64) -> Result<BoundConstants, HarnessError> {
    if samples < 2 {
        return Err(HarnessError::Config("need at least 2 samples".into()));
    }
    let d = problem.dim();
    let big_t = problem.horizon();
    let base = IndexKey::from_index(seed, &MultiIndex::root());
    let mut y = vec![0.0; d];
    let mut g2 = Vec::with_capacity(samples);
    let mut f2 = Vec::with_capacity(samples);
    for s in 0..samples {
        let node = base.child(0, s as i64);
        node.stream(mlp::SPACE_DRAW).fill_normals(&mut y);
        let sd = big_t.sqrt();
        for (yk, c) in y.iter_mut().zip(problem.xi()) {
            *yk = c + sd * *yk;
        }
        let g = problem.terminal(&y);

        let node = base.child(1, s as i64);
        let t = big_t * node.stream(mlp::TIME_DRAW).uniform();
        node.stream(mlp::SPACE_DRAW).fill_normals(&mut y);
        let sd = t.sqrt();
        for (yk, c) in y.iter_mut().zip(problem.xi()) {
            *yk = c + sd * *yk;
        }
        let f = problem.nonlinearity(t, &y, 0.0);
        if !g.is_finite() || !f.is_finite() {
            return Err(HarnessError::NonFinite { t });
        }
        g2.push(g * g);
        f2.push(f * f);
    }
    let (mg, seg) = mean_and_stderr(&g2);
    let (mf, sef) = mean_and_stderr(&f2);
    // T‖F(0)‖₁ = T (E_{t~U[0,T]} E|f(t, ξ+W_t, 0)|²)^{1/2}
    let g_l2 = mg.sqrt();
    let f0 = big_t * mf.sqrt();
    Ok(BoundConstants {
        g_l2,
        f0_norm: f0,
        g_l2_se: if g_l2 > 0.0 { seg / (2.0 * g_l2) } else { 0.0 },
        f0_norm_se: if f0 > 0.0 { big_t * sef / (2.0 * mf.sqrt()) } else { 0.0 },
    })
}

/// Wall-clock seconds of `reps` evaluations at each dimension, best of `trials`.
pub fn time_dimensions(
    family: FamilyTag,
    dims: &[usize],
    config: &MlpConfig,
    reps: usize,
    trials: usize,
) -> Result<Vec<(usize, f64)>, HarnessError> {
    let mut out = Vec::with_capacity(dims.len());
    for &d in dims {
        let fam = problem::make_family(family, d, 1.0, &FamilyParams::new())?;
        let xi = fam.problem.xi().to_vec();
        let mut best = f64::INFINITY;
        for _ in 0..trials.max(1) {
            let start = Instant::now();
            for r in 1..=reps {
                mlp::evaluate(&fam.problem, config, &MultiIndex::replicate(r as i64), 0.0, &xi)?;
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        out.push((d, best));
    }
    Ok(out)
}

pub const CSV_COLUMNS: [&str; 19] = [
    "schema_version",
    "family",
    "dim",
    "variant",
    "n",
    "m",
    "reps",
    "reference",
    "mean",
    "stderr",
    "rmse",
    "rv_analytic",
    "rv_measured",
    "rv_bound",
    "theorem_bound",
    "inflation",
    "bound_holds",
    "ln_complexity_rhs",
    "complexity_holds",
];

impl StudyReport {
    /// One row per level, columns [`CSV_COLUMNS`]. Floats use the shortest
    /// round-trip representation; absent values are empty.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                self.schema_version.to_string(),
                self.config.family.to_string(),
                self.config.dim.to_string(),
                self.config.variant.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                self.config.reps.to_string(),
                format!("{:?}", self.reference),
                format!("{:?}", r.mean),
                format!("{:?}", r.stderr),
                format!("{:?}", r.rmse),
                r.rv_analytic.to_string(),
                r.rv_measured.to_string(),
                opt(r.rv_bound.map(|v| v.to_string())),
                format!("{:?}", r.theorem_bound),
                format!("{:?}", r.inflation),
                r.bound_holds.to_string(),
                opt(r.ln_complexity_rhs.map(|v| format!("{v:?}"))),
                opt(r.complexity_holds.map(|v| v.to_string())),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
