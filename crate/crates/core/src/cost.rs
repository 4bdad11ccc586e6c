//! Draw-count recursion, the `d(5M)ⁿ` bound and the cost-versus-accuracy
//! constant.
//!
//! The recursion is used with equality: one realization of `U_{n,M}` consumes
//! `d` normals per terminal sample and `d` normals plus one uniform per
//! `(l, i)` summand node, plus everything its sub-estimators consume.

use std::fmt;

use num_bigint::BigUint;
use serde::Serialize;
use thiserror::Error;

use crate::mlp::Variant;
use crate::problem::Problem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("draw count overflows 63 bits (d={dim}, n={n}, m={m})")]
    Overflow { dim: usize, n: u32, m: u64 },
    #[error("Monte Carlo base must be at least 1")]
    ZeroBase,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("delta must be positive, got {0}")]
    BadDelta(f64),
}

/// Scalars consumed per node of the recursion tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub dim: usize,
    /// `d + 1`: one uniform time and a `d`-dimensional Gaussian increment.
    pub per_node_scalars: u64,
    /// `d`: one Gaussian increment per terminal sample.
    pub g_node_scalars: u64,
}

impl CostModel {
    pub fn new(dim: usize) -> Result<Self, CostError> {
        if dim == 0 {
            return Err(CostError::ZeroDimension);
        }
        Ok(Self {
            dim,
            per_node_scalars: dim as u64 + 1,
            g_node_scalars: dim as u64,
        })
    }
}

/// Normals and uniforms counted separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DrawCounts {
    pub normals: u64,
    pub uniforms: u64,
}

impl DrawCounts {
    pub fn total(&self) -> u64 {
        self.normals + self.uniforms
    }
}

/// Counts that may not fit a machine word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Count {
    Small(u64),
    Big(BigUint),
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Count::Small(v) => write!(f, "{v}"),
            Count::Big(v) => write!(f, "{v}"),
        }
    }
}

impl Count {
    pub fn to_big(&self) -> BigUint {
        match self {
            Count::Small(v) => BigUint::from(*v),
            Count::Big(v) => v.clone(),
        }
    }
}

/// What to do when a count exceeds `2⁶³ − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowPolicy {
    #[default]
    Error,
    BigInt,
}

const COUNT_LIMIT: u64 = i64::MAX as u64;

trait Arith: Clone {
    fn lit(v: u64) -> Self;
    fn add(&self, o: &Self) -> Option<Self>;
    fn mul(&self, o: &Self) -> Option<Self>;
}

impl Arith for u64 {
    fn lit(v: u64) -> Self {
        v
    }
    fn add(&self, o: &Self) -> Option<Self> {
        self.checked_add(*o).filter(|v| *v <= COUNT_LIMIT)
    }
    fn mul(&self, o: &Self) -> Option<Self> {
        self.checked_mul(*o).filter(|v| *v <= COUNT_LIMIT)
    }
}

impl Arith for BigUint {
    fn lit(v: u64) -> Self {
        BigUint::from(v)
    }
    fn add(&self, o: &Self) -> Option<Self> {
        Some(self + o)
    }
    fn mul(&self, o: &Self) -> Option<Self> {
        Some(self * o)
    }
}

/// `X_n = a·mⁿ + Σ_{l<n} m^{n−l}(b + X_l + 1_ℕ(l) X_{l−1})`, `X_0 = 0`.
fn recursion<T: Arith>(a: u64, b: u64, n: u32, m: u64) -> Option<T> {
    let mm = T::lit(m);
    let mut pow = vec![T::lit(1)];
    for k in 1..=n as usize {
        pow.push(pow[k - 1].mul(&mm)?);
    }
    let mut xs: Vec<T> = vec![T::lit(0)];
    for k in 1..=n as usize {
        let mut acc = T::lit(a).mul(&pow[k])?;
        for l in 0..k {
            let mut inner = T::lit(b).add(&xs[l])?;
            if l >= 1 {
                inner = inner.add(&xs[l - 1])?;
            }
            acc = acc.add(&pow[k - l].mul(&inner)?)?;
        }
        xs.push(acc);
    }
    xs.pop()
}

fn check(model: &CostModel, m: u64) -> Result<(), CostError> {
    if m == 0 {
        return Err(CostError::ZeroBase);
    }
    if model.dim == 0 {
        return Err(CostError::ZeroDimension);
    }
    Ok(())
}

/// Normals and uniforms consumed by one realization of `U_{n,m}`.
///
/// Both index variants consume the same amount: the level-`(l−1)` evaluation
/// samples its own subtree whichever multi-index it is rooted at.
pub fn draw_recursion(
    model: &CostModel,
    n: u32,
    m: u64,
    _variant: Variant,
) -> Result<DrawCounts, CostError> {
    check(model, m)?;
    let overflow = || CostError::Overflow {
        dim: model.dim,
        n,
        m,
    };
    let normals = recursion::<u64>(model.g_node_scalars, model.dim as u64, n, m).ok_or_else(overflow)?;
    let uniforms = recursion::<u64>(0, 1, n, m).ok_or_else(overflow)?;
    normals.add(&uniforms).ok_or_else(overflow)?;
    Ok(DrawCounts { normals, uniforms })
}

/// `RV_{n,m}`: total scalar draws (normals plus uniforms).
pub fn rv_recursion(model: &CostModel, n: u32, m: u64, variant: Variant) -> Result<u64, CostError> {
    draw_recursion(model, n, m, variant).map(|c| c.total())
}

/// [`rv_recursion`] in arbitrary precision.
pub fn rv_recursion_big(model: &CostModel, n: u32, m: u64) -> Result<BigUint, CostError> {
    check(model, m)?;
    recursion::<BigUint>(model.dim as u64, model.per_node_scalars, n, m)
        .ok_or(CostError::ZeroBase)
}

pub fn rv_count(
    model: &CostModel,
    n: u32,
    m: u64,
    variant: Variant,
    policy: OverflowPolicy,
) -> Result<Count, CostError> {
    match rv_recursion(model, n, m, variant) {
        Ok(v) => Ok(Count::Small(v)),
        Err(CostError::Overflow { .. }) if policy == OverflowPolicy::BigInt => {
            rv_recursion_big(model, n, m).map(Count::Big)
        }
        Err(e) => Err(e),
    }
}

/// `d·(5m)ⁿ`.
pub fn rv_bound(dim: usize, n: u32, m: u64) -> Result<u64, CostError> {
    if m == 0 {
        return Err(CostError::ZeroBase);
    }
    let overflow = CostError::Overflow { dim, n, m };
    let base = m.checked_mul(5).ok_or(overflow.clone())?;
    base.checked_pow(n)
        .and_then(|p| p.checked_mul(dim as u64))
        .filter(|v| *v <= COUNT_LIMIT)
        .ok_or(overflow)
}

pub fn rv_bound_big(dim: usize, n: u32, m: u64) -> BigUint {
    BigUint::from(dim) * BigUint::from(5 * m).pow(n)
}

pub fn rv_bound_count(dim: usize, n: u32, m: u64, policy: OverflowPolicy) -> Result<Count, CostError> {
    match rv_bound(dim, n, m) {
        Ok(v) => Ok(Count::Small(v)),
        Err(CostError::Overflow { .. }) if policy == OverflowPolicy::BigInt => {
            Ok(Count::Big(rv_bound_big(dim, n, m)))
        }
        Err(e) => Err(e),
    }
}

/// A nonnegative extended real stored by its natural logarithm.
/// `ln = -inf` is zero, `ln = +inf` is infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogReal {
    pub ln: f64,
}

impl LogReal {
    pub fn value(&self) -> f64 {
        self.ln.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.ln < f64::INFINITY
    }
}

/// The constant `C` of the cost-versus-error inequality
/// `RV_{N,N} ≤ d·C·ε^{−(2+δ)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityConstant {
    pub delta: f64,
    /// `[e^{LT}(g_l2 + f0_norm)]^{2+δ}`
    pub prefactor: LogReal,
    /// `sup_n (4+8LT)^{n(2+δ)} / n^{nδ/2}`
    pub sup_factor: LogReal,
    /// Integer maximizer of the supremum (saturates for astronomically large values).
    pub argmax: u64,
    pub constant: LogReal,
}

impl ComplexityConstant {
    /// `ln(d·C·ε^{−(2+δ)})`
    pub fn ln_rv_bound(&self, dim: usize, rmse: f64) -> f64 {
        (dim as f64).ln() + self.constant.ln - (2.0 + self.delta) * rmse.ln()
    }
}

/// `ln[(4+8LT)^{n(2+δ)} / n^{nδ/2}]`
pub fn ln_sup_term(lt: f64, delta: f64, n: u64) -> f64 {
    let nf = n as f64;
    nf * (2.0 + delta) * (4.0 + 8.0 * lt).ln() - 0.5 * nf * delta * nf.ln()
}

/// Computes `C` for `problem` (only `L` and `T` enter), given
/// `g_l2 = (E|g(ξ+W_T)|²)^{1/2}` and `f0_norm = T‖F(0)‖₁`.
///
/// The log of each supremum term is concave in `n`, so the supremum over ℕ is
/// attained at one of the two integers around the stationary point
/// `n* = (4+8LT)^{2(2+δ)/δ} / e`.
pub fn complexity_constant(
    problem: &Problem,
    delta: f64,
    g_l2: f64,
    f0_norm: f64,
) -> Result<ComplexityConstant, CostError> {
    if !(delta > 0.0) {
        return Err(CostError::BadDelta(delta));
    }
    let lt = problem.lip() * problem.horizon();
    let prefactor = LogReal {
        ln: (2.0 + delta) * (lt + (g_l2 + f0_norm).ln()),
    };
    let ln_a = (4.0 + 8.0 * lt).ln();
    let ln_star = 2.0 * (2.0 + delta) * ln_a / delta - 1.0;
    let n_star = ln_star.exp();
    let (sup_factor, argmax) = if n_star < 2f64.powi(52) {
        let lo = (n_star.floor() as u64).max(1);
        let hi = lo + 1;
        let (a, b) = (ln_sup_term(lt, delta, lo), ln_sup_term(lt, delta, hi));
        if a >= b {
            (LogReal { ln: a }, lo)
        } else {
            (LogReal { ln: b }, hi)
        }
    } else {
        // Continuous maximum; at n* the log term equals n*·δ/2.
        (LogReal { ln: n_star * delta / 2.0 }, u64::MAX)
    };
    let constant = LogReal {
        ln: if prefactor.ln == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            prefactor.ln + sup_factor.ln
        },
    };
    Ok(ComplexityConstant {
        delta,
        prefactor,
        sup_factor,
        argmax,
        constant,
    })
}
