//! Semilinear heat problems `∂ₜu + ½Δu + f(t,x,u) = 0`, `u(T,·) = g`, and a
//! small catalog of test families with known reference values.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{self, OracleError, PicardOptions, PicardSolution, QuadratureGrid};
use crate::rng::{IndexKey, MultiIndex};

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type NonlinearityFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;

/// Named family parameters, e.g. `{"c": 0.5}`.
pub type FamilyParams = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("Lipschitz constant must be nonnegative, got {0}")]
    BadLipschitz(f64),
    #[error("growth exponent must be nonnegative, got {0}")]
    BadGrowth(f64),
    #[error("evaluation point has length {got}, expected {expected}")]
    PointLength { expected: usize, got: usize },
    #[error("unknown problem family `{0}`")]
    UnknownFamily(String),
    #[error("unknown parameter `{param}` for family {family}")]
    UnknownParam { family: FamilyTag, param: String },
    #[error("family {0} requires dimension 1")]
    DimensionUnsupported(FamilyTag),
    #[error("nonlinearity returned a non-finite value at t={t}, v={v}, w={w}")]
    NonFinite { t: f64, v: f64, w: f64 },
}

/// A problem instance `(d, T, L, p, ξ, g, f)`.
///
/// `g` and `f` must be pure: the estimator's reproducibility relies on it.
#[derive(Clone)]
pub struct Problem {
    dim: usize,
    horizon: f64,
    lip: f64,
    growth: f64,
    xi: Vec<f64>,
    terminal: TerminalFn,
    nonlinearity: NonlinearityFn,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("lip", &self.lip)
            .field("growth", &self.growth)
            .field("xi", &self.xi)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        dim: usize,
        horizon: f64,
        lip: f64,
        growth: f64,
        xi: Vec<f64>,
        terminal: TerminalFn,
        nonlinearity: NonlinearityFn,
    ) -> Result<Self, ProblemError> {
        if dim == 0 {
            return Err(ProblemError::ZeroDimension);
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ProblemError::BadHorizon(horizon));
        }
        if !(lip >= 0.0) {
            return Err(ProblemError::BadLipschitz(lip));
        }
        if !(growth >= 0.0) {
            return Err(ProblemError::BadGrowth(growth));
        }
        if xi.len() != dim {
            return Err(ProblemError::PointLength {
                expected: dim,
                got: xi.len(),
            });
        }
        Ok(Self {
            dim,
            horizon,
            lip,
            growth,
            xi,
            terminal,
            nonlinearity,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    /// Declared growth exponent. Metadata only; never enforced.
    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    #[inline]
    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    #[inline]
    pub fn nonlinearity(&self, t: f64, x: &[f64], v: f64) -> f64 {
        (self.nonlinearity)(t, x, v)
    }

    /// Same problem with a different evaluation point.
    pub fn with_xi(mut self, xi: Vec<f64>) -> Result<Self, ProblemError> {
        if xi.len() != self.dim {
            return Err(ProblemError::PointLength {
                expected: self.dim,
                got: xi.len(),
            });
        }
        self.xi = xi;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyTag {
    #[serde(rename = "constant")]
    ConstantTerminal,
    #[serde(rename = "quadratic")]
    QuadraticLinear,
    #[serde(rename = "explinf")]
    ExponentialLinearF,
    #[serde(rename = "sine")]
    SineNonlinear,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 4] = [
        FamilyTag::ConstantTerminal,
        FamilyTag::QuadraticLinear,
        FamilyTag::ExponentialLinearF,
        FamilyTag::SineNonlinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::ConstantTerminal => "constant",
            FamilyTag::QuadraticLinear => "quadratic",
            FamilyTag::ExponentialLinearF => "explinf",
            FamilyTag::SineNonlinear => "sine",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        match self {
            FamilyTag::ConstantTerminal => &["c", "xi"],
            FamilyTag::QuadraticLinear => &["xi"],
            FamilyTag::ExponentialLinearF => &["a", "c", "xi"],
            FamilyTag::SineNonlinear => &["xi"],
        }
    }

    pub fn has_closed_form(self) -> bool {
        !matches!(self, FamilyTag::SineNonlinear)
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyTag {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FamilyTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ProblemError::UnknownFamily(s.to_string()))
    }
}

/// Second moment of the terminal value and the scaled size of `f(·,·,0)`,
/// i.e. `(E|g(ξ+W_T)|²)^{1/2}` and `T‖F(0)‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub g_l2: f64,
    pub f0_norm: f64,
    /// Monte Carlo standard errors; zero for closed forms.
    pub g_l2_se: f64,
    pub f0_norm_se: f64,
}

impl BoundConstants {
    pub fn exact(g_l2: f64, f0_norm: f64) -> Self {
        Self {
            g_l2,
            f0_norm,
            g_l2_se: 0.0,
            f0_norm_se: 0.0,
        }
    }
}

enum Reference {
    Closed(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
    Oracle(OnceLock<Result<PicardSolution, OracleError>>),
}

/// A problem together with its reference solution.
pub struct AnalyticFamily {
    pub problem: Problem,
    pub tag: FamilyTag,
    pub params: FamilyParams,
    reference: Reference,
    bounds: BoundConstants,
}

impl fmt::Debug for AnalyticFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticFamily")
            .field("tag", &self.tag)
            .field("params", &self.params)
            .field("problem", &self.problem)
            .finish_non_exhaustive()
    }
}

impl AnalyticFamily {
    /// The reference solution `u(t, x)`.
    ///
    /// Closed forms are evaluated directly. The sine family solves the
    /// fixed-point equation once with [`oracle::picard_solve`] on first use.
    pub fn exact(&self, t: f64, x: &[f64]) -> Result<f64, OracleError> {
        match &self.reference {
            Reference::Closed(u) => Ok(u(t, x)),
            Reference::Oracle(cell) => {
                let sol = cell.get_or_init(|| {
                    oracle::picard_solve(
                        &self.problem,
                        &QuadratureGrid::new(64, 32),
                        &PicardOptions::for_problem(&self.problem),
                    )
                });
                match sol {
                    Ok(s) => Ok(s.value(t, x)),
                    Err(e) => Err(e.clone()),
                }
            }
        }
    }

    /// The closed-form `u`, if there is one.
    pub fn closed_form(&self) -> Option<&(dyn Fn(f64, &[f64]) -> f64 + Send + Sync)> {
        match &self.reference {
            Reference::Closed(u) => Some(u.as_ref()),
            Reference::Oracle(_) => None,
        }
    }

    pub fn bound_constants(&self) -> BoundConstants {
        self.bounds
    }
}

fn param(params: &FamilyParams, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Builds one of the built-in families.
///
/// Parameters (all optional): `xi` sets every coordinate of the evaluation
/// point (default 0); `constant` takes `c` (default 1); `explinf` takes `a`,
/// applied to every coordinate (default `1/d`), and `c` (default 0.5).
pub fn make_family(
    tag: FamilyTag,
    dim: usize,
    horizon: f64,
    params: &FamilyParams,
) -> Result<AnalyticFamily, ProblemError> {
    if let Some(bad) = params.keys().find(|k| !tag.allowed_params().contains(&k.as_str())) {
        return Err(ProblemError::UnknownParam {
            family: tag,
            param: bad.clone(),
        });
    }
    if tag == FamilyTag::SineNonlinear && dim != 1 {
        return Err(ProblemError::DimensionUnsupported(tag));
    }
    if dim == 0 {
        return Err(ProblemError::ZeroDimension);
    }
    let xi = vec![param(params, "xi", 0.0); dim];
    let big_t = horizon;

    let (problem, reference, bounds) = match tag {
        FamilyTag::ConstantTerminal => {
            let c = param(params, "c", 1.0);
            let p = Problem::new(
                dim,
                horizon,
                0.0,
                0.0,
                xi,
                Arc::new(move |_| c),
                Arc::new(|_, _, _| 0.0),
            )?;
            let u: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync> = Arc::new(move |_, _| c);
            (p, Reference::Closed(u), BoundConstants::exact(c.abs(), 0.0))
        }
        FamilyTag::QuadraticLinear => {
            let p = Problem::new(
                dim,
                horizon,
                0.0,
                2.0,
                xi.clone(),
                Arc::new(sq_norm),
                Arc::new(|_, _, _| 0.0),
            )?;
            let d = dim as f64;
            let u: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync> =
                Arc::new(move |t, x| sq_norm(x) + d * (big_t - t));
            // E‖ξ+W_T‖⁴ from the Gaussian moments E Y⁴ = μ⁴ + 6μ²T + 3T².
            let m2: Vec<f64> = xi.iter().map(|m| m * m + big_t).collect();
            let m4: Vec<f64> = xi
                .iter()
                .map(|m| m.powi(4) + 6.0 * m * m * big_t + 3.0 * big_t * big_t)
                .collect();
            let s2: f64 = m2.iter().sum();
            let sq: f64 = m2.iter().map(|v| v * v).sum();
            let fourth = m4.iter().sum::<f64>() + s2 * s2 - sq;
            (p, Reference::Closed(u), BoundConstants::exact(fourth.sqrt(), 0.0))
        }
        FamilyTag::ExponentialLinearF => {
            let a = param(params, "a", 1.0 / dim as f64);
            let c = param(params, "c", 0.5);
            let avec = vec![a; dim];
            let a_sq = a * a * dim as f64;
            let g_a = avec.clone();
            // exp(a·x) is not polynomially bounded; record that as infinite growth.
            let p = Problem::new(
                dim,
                horizon,
                c.abs(),
                f64::INFINITY,
                xi.clone(),
                Arc::new(move |x| dot(&g_a, x).exp()),
                Arc::new(move |_, _, v| c * v),
            )?;
            let u_a = avec.clone();
            let u: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync> = Arc::new(move |t, x| {
                let tau = big_t - t;
                (c * tau).exp() * (dot(&u_a, x) + 0.5 * a_sq * tau).exp()
            });
            let g_l2 = (dot(&avec, &xi) + a_sq * big_t).exp();
            (p, Reference::Closed(u), BoundConstants::exact(g_l2, 0.0))
        }
        FamilyTag::SineNonlinear => {
            let p = Problem::new(
                1,
                horizon,
                1.0,
                0.0,
                xi.clone(),
                Arc::new(|x| x[0].cos()),
                Arc::new(|_, _, v| v.sin()),
            )?;
            // E cos²(ξ+W_T) = (1 + cos(2ξ) e^{-2T}) / 2
            let g2 = 0.5 * (1.0 + (2.0 * xi[0]).cos() * (-2.0 * big_t).exp());
            (p, Reference::Oracle(OnceLock::new()), BoundConstants::exact(g2.sqrt(), 0.0))
        }
    };

    Ok(AnalyticFamily {
        problem,
        tag,
        params: params.clone(),
        reference,
        bounds,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest observed difference quotient `|f(t,x,v) − f(t,x,w)| / |v − w|`
/// over random probes. Compare the result against [`Problem::lip`].
///
/// Probes use `t ~ U[0,T]`, `x ~ ξ + N(0, T·I)`, `v ~ N(0, 9)` and
/// `w = v ± h` with `h` log-uniform on `[1e-4, 1]`.
pub fn probe_lipschitz(problem: &Problem, samples: usize, seed: u64) -> Result<f64, ProblemError> {
    let d = problem.dim();
    let base = IndexKey::from_index(seed, &MultiIndex::root());
    let sd = problem.horizon().sqrt();
    let mut x = vec![0.0; d];
    let mut z = vec![0.0; 2];
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        let node = base.child(0, s as i64);
        let t = problem.horizon() * node.stream(0).uniform();
        node.stream(1).fill_normals(&mut x);
        for (xi, v) in x.iter_mut().zip(problem.xi()) {
            *xi = v + sd * *xi;
        }
        node.stream(2).fill_normals(&mut z);
        let v = 3.0 * z[0];
        let h = 10f64.powf(-4.0 * node.stream(3).uniform());
        let w = if z[1] < 0.0 { v - h } else { v + h };
        let fv = problem.nonlinearity(t, &x, v);
        let fw = problem.nonlinearity(t, &x, w);
        let q = (fv - fw).abs() / (v - w).abs();
        if !q.is_finite() {
            return Err(ProblemError::NonFinite { t, v, w });
        }
        worst = worst.max(q);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> FamilyParams {
        FamilyParams::new()
    }

    #[test]
    fn constant_family_reference() {
        let mut p = no_params();
        p.insert("c".into(), 1.0);
        let fam = make_family(FamilyTag::ConstantTerminal, 3, 1.0, &p).unwrap();
        assert_eq!(fam.exact(0.3, &[1.0, -2.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn quadratic_family_reference() {
        let fam = make_family(FamilyTag::QuadraticLinear, 2, 1.0, &no_params()).unwrap();
        assert_eq!(fam.exact(0.0, &[0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn explinf_family_reference() {
        let mut p = no_params();
        p.insert("a".into(), 1.0);
        p.insert("c".into(), 0.5);
        let fam = make_family(FamilyTag::ExponentialLinearF, 1, 1.0, &p).unwrap();
        assert!((fam.exact(0.0, &[0.0]).unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(fam.problem.lip(), 0.5);
    }

    #[test]
    fn family_errors() {
        assert!(matches!(
            make_family(FamilyTag::SineNonlinear, 2, 1.0, &no_params()),
            Err(ProblemError::DimensionUnsupported(_))
        ));
        assert!(matches!("cubic".parse::<FamilyTag>(), Err(ProblemError::UnknownFamily(_))));
        let mut p = no_params();
        p.insert("zeta".into(), 1.0);
        assert!(matches!(
            make_family(FamilyTag::QuadraticLinear, 1, 1.0, &p),
            Err(ProblemError::UnknownParam { .. })
        ));
        assert!(matches!(
            make_family(FamilyTag::QuadraticLinear, 1, 0.0, &no_params()),
            Err(ProblemError::BadHorizon(_))
        ));
    }

    #[test]
    fn tag_round_trip() {
        for tag in FamilyTag::ALL {
            assert_eq!(tag.name().parse::<FamilyTag>().unwrap(), tag);
        }
    }

    #[test]
    fn quadratic_g_l2_matches_direct_moment() {
        // d=1, ξ=0, T=1: E W⁴ = 3.
        let fam = make_family(FamilyTag::QuadraticLinear, 1, 1.0, &no_params()).unwrap();
        assert!((fam.bound_constants().g_l2 - 3f64.sqrt()).abs() < 1e-15);
        // d=2: E(W₁²+W₂²)² = 3 + 3 + 2 = 8.
        let fam = make_family(FamilyTag::QuadraticLinear, 2, 1.0, &no_params()).unwrap();
        assert!((fam.bound_constants().g_l2 - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn probe_linear_and_zero() {
        let fam = make_family(FamilyTag::ExponentialLinearF, 1, 1.0, &no_params()).unwrap();
        let q = probe_lipschitz(&fam.problem, 1000, 3).unwrap();
        assert!((q - 0.5).abs() < 1e-12, "{q}");
        let fam = make_family(FamilyTag::QuadraticLinear, 4, 1.0, &no_params()).unwrap();
        assert_eq!(probe_lipschitz(&fam.problem, 1000, 3).unwrap(), 0.0);
    }

    #[test]
    fn probe_sine_approaches_one() {
        let fam = make_family(FamilyTag::SineNonlinear, 1, 1.0, &no_params()).unwrap();
        let q = probe_lipschitz(&fam.problem, 1000, 9).unwrap();
        assert!(q > 0.9 && q <= 1.0 + 1e-9, "{q}");
    }

    #[test]
    fn probe_reports_nan() {
        let p = Problem::new(
            1,
            1.0,
            1.0,
            0.0,
            vec![0.0],
            Arc::new(|_| 0.0),
            Arc::new(|_, _, v| if v > 0.0 { f64::NAN } else { v }),
        )
        .unwrap();
        assert!(matches!(probe_lipschitz(&p, 100, 1), Err(ProblemError::NonFinite { .. })));
    }

    #[test]
    fn builtin_families_respect_declared_lip() {
        for tag in FamilyTag::ALL {
            let dim = if tag == FamilyTag::SineNonlinear { 1 } else { 3 };
            let fam = make_family(tag, dim, 1.0, &no_params()).unwrap();
            let q = probe_lipschitz(&fam.problem, 2000, 17).unwrap();
            assert!(q <= fam.problem.lip() + 1e-9, "{tag}: {q}");
        }
    }
}
