//! The full-history multilevel Picard estimator `U_{n,M}^θ(t, x)`.
//!
//! For `n ≥ 1`
//!
//! ```text
//! U_{n,M}^θ(t,x) = M⁻ⁿ Σ_{i=1}^{Mⁿ} g(x + W^{(θ,0,−i)}_{T−t})
//!   + Σ_{l=0}^{n−1} (T−t)/M^{n−l} Σ_{i=1}^{M^{n−l}}
//!       [ f(R, Y, U_{l,M}^{(θ,l,i)}(R, Y)) − 1_ℕ(l) f(R, Y, U_{l−1,M}^{(θ,±l,i)}(R, Y)) ]
//! ```
//!
//! with `R = t + (T−t)·r^{(θ,l,i)}` uniform on `[t, T]` and
//! `Y = x + W^{(θ,l,i)}_{R−t}`. Both `f` terms of a summand share `R` and `Y`;
//! only the multi-index of the level-`(l−1)` sub-estimator depends on the
//! [`Variant`]. `U_{0,M} = U_{−1,M} = 0`.
//!
//! Every random draw is addressed through [`crate::rng`], so an estimate is a
//! pure function of `(problem, config, θ, t, x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::Problem;
use crate::rng::{IndexKey, MultiIndex};

/// Draw counter for the uniform time `r^θ`.
pub const TIME_DRAW: u32 = 0;
/// Draw counter for the Gaussian increment of `W^θ`.
pub const SPACE_DRAW: u32 = 1;

/// Multi-index used by the subtracted level-`(l−1)` sub-estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `(θ, −l, i)`: independent of the level-`l` sub-estimator.
    #[default]
    #[serde(rename = "signed", alias = "section3")]
    SignedIndex,
    /// `(θ, l, i)`: shares the sub-tree with the level-`l` sub-estimator.
    #[serde(rename = "shared", alias = "intro")]
    SharedIndex,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::SignedIndex => "signed",
            Variant::SharedIndex => "shared",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "signed" | "section3" => Ok(Variant::SignedIndex),
            "shared" | "intro" => Ok(Variant::SharedIndex),
            other => Err(format!("unknown variant `{other}` (expected signed|shared)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n: u32,
    pub m: u64,
    pub variant: Variant,
    pub master_seed: u64,
}

impl MlpConfig {
    pub fn new(n: u32, m: u64, master_seed: u64) -> Self {
        Self {
            n,
            m,
            variant: Variant::default(),
            master_seed,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

/// Scalar draws consumed by one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RvLedger {
    pub normals: u64,
    pub uniforms: u64,
}

impl RvLedger {
    pub fn total(&self) -> u64 {
        self.normals + self.uniforms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ledger: RvLedger,
    pub config: MlpConfig,
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvalSite {
    Terminal,
    Nonlinearity,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("point has length {got}, expected {expected}")]
    PointLength { expected: usize, got: usize },
    #[error("Monte Carlo base must be at least 1")]
    ZeroBase,
    #[error("depth {n} with base {m} needs more than 2^63 samples")]
    TooLarge { n: u32, m: u64 },
    #[error("{site:?} returned a non-finite value at t={t}, x={x:?}, v={v:?}")]
    NonFinite {
        site: EvalSite,
        t: f64,
        x: Vec<f64>,
        v: Option<f64>,
    },
    #[error("replication count must be at least 1")]
    NoReplications,
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// Mean accumulator that is exact for constant inputs: it sums deviations from
/// the first term with Neumaier compensation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ShiftedMean {
    shift: Option<f64>,
    sum: f64,
    comp: f64,
    count: u64,
}

impl ShiftedMean {
    #[inline]
    pub(crate) fn push(&mut self, v: f64) {
        let shift = *self.shift.get_or_insert(v);
        let y = v - shift;
        let s = self.sum + y;
        if self.sum.abs() >= y.abs() {
            self.comp += (self.sum - s) + y;
        } else {
            self.comp += (y - s) + self.sum;
        }
        self.sum = s;
        self.count += 1;
    }

    pub(crate) fn mean(&self) -> f64 {
        match self.shift {
            None => 0.0,
            Some(shift) => shift + (self.sum + self.comp) / self.count as f64,
        }
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn push(&mut self, v: f64) {
        let s = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - s) + v;
        } else {
            self.comp += (v - s) + self.sum;
        }
        self.sum = s;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Evaluator<'a> {
    problem: &'a Problem,
    m: u64,
    variant: Variant,
    /// `pow[k] = m^k`
    pow: Vec<u64>,
}

impl Evaluator<'_> {
    fn level(
        &self,
        n: u32,
        node: &IndexKey,
        t: f64,
        x: &[f64],
        ledger: &mut RvLedger,
    ) -> Result<f64, MlpError> {
        if n == 0 {
            return Ok(0.0);
        }
        let p = self.problem;
        let d = p.dim();
        let big_t = p.horizon();
        let tau = big_t - t;
        let mut y = vec![0.0; d];

        let sd = tau.sqrt();
        let mut g_mean = ShiftedMean::default();
        for i in 1..=self.pow[n as usize] {
            node.child(0, -(i as i64)).stream(SPACE_DRAW).fill_normals(&mut y);
            ledger.normals += d as u64;
            for (yk, xk) in y.iter_mut().zip(x) {
                *yk = xk + sd * *yk;
            }
            let gv = p.terminal(&y);
            if !gv.is_finite() {
                return Err(MlpError::NonFinite {
                    site: EvalSite::Terminal,
                    t: big_t,
                    x: y,
                    v: None,
                });
            }
            g_mean.push(gv);
        }

        let mut total = CompensatedSum::default();
        total.push(g_mean.mean());
        for l in 0..n {
            let mut inner = ShiftedMean::default();
            for i in 1..=self.pow[(n - l) as usize] {
                let key = node.child(l as i64, i as i64);
                let dt = tau * key.stream(TIME_DRAW).uniform();
                let r = t + dt;
                key.stream(SPACE_DRAW).fill_normals(&mut y);
                ledger.uniforms += 1;
                ledger.normals += d as u64;
                let s = dt.sqrt();
                for (yk, xk) in y.iter_mut().zip(x) {
                    *yk = xk + s * *yk;
                }
                let u_l = self.level(l, &key, r, &y, ledger)?;
                let mut term = self.f_checked(r, &y, u_l)?;
                if l >= 1 {
                    let sub = match self.variant {
                        Variant::SignedIndex => node.child(-(l as i64), i as i64),
                        Variant::SharedIndex => key,
                    };
                    let u_prev = self.level(l - 1, &sub, r, &y, ledger)?;
                    term -= self.f_checked(r, &y, u_prev)?;
                }
                inner.push(term);
            }
            total.push(tau * inner.mean());
        }
        Ok(total.value())
    }

    #[inline]
    fn f_checked(&self, t: f64, x: &[f64], v: f64) -> Result<f64, MlpError> {
        let out = self.problem.nonlinearity(t, x, v);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(MlpError::NonFinite {
                site: EvalSite::Nonlinearity,
                t,
                x: x.to_vec(),
                v: Some(v),
            })
        }
    }
}

fn powers(n: u32, m: u64) -> Result<Vec<u64>, MlpError> {
    if m == 0 {
        return Err(MlpError::ZeroBase);
    }
    let mut pow = vec![1u64];
    for k in 1..=n as usize {
        let v = pow[k - 1]
            .checked_mul(m)
            .filter(|v| *v <= i64::MAX as u64)
            .ok_or(MlpError::TooLarge { n, m })?;
        pow.push(v);
    }
    Ok(pow)
}

/// One realization of `U_{n,M}^θ(t, x)`.
pub fn evaluate(
    problem: &Problem,
    config: &MlpConfig,
    theta: &MultiIndex,
    t: f64,
    x: &[f64],
) -> Result<Estimate, MlpError> {
    if !(0.0..=problem.horizon()).contains(&t) {
        return Err(MlpError::TimeOutOfRange {
            t,
            horizon: problem.horizon(),
        });
    }
    if x.len() != problem.dim() {
        return Err(MlpError::PointLength {
            expected: problem.dim(),
            got: x.len(),
        });
    }
    let ev = Evaluator {
        problem,
        m: config.m,
        variant: config.variant,
        pow: powers(config.n, config.m)?,
    };
    debug_assert!(ev.m >= 1);
    let mut ledger = RvLedger::default();
    let root = IndexKey::from_index(config.master_seed, theta);
    let value = ev.level(config.n, &root, t, x, &mut ledger)?;
    Ok(Estimate {
        value,
        ledger,
        config: *config,
        t,
        x: x.to_vec(),
    })
}

/// `reps` independent realizations rooted at `(1), (2), …, (reps)`.
///
/// `workers = 0` uses rayon's global pool. Output does not depend on `workers`.
pub fn evaluate_replicated(
    problem: &Problem,
    config: &MlpConfig,
    t: f64,
    x: &[f64],
    reps: usize,
    workers: usize,
) -> Result<Vec<Estimate>, MlpError> {
    if reps == 0 {
        return Err(MlpError::NoReplications);
    }
    let run = || {
        (1..=reps)
            .into_par_iter()
            .map(|r| evaluate(problem, config, &MultiIndex::replicate(r as i64), t, x))
            .collect::<Result<Vec<_>, _>>()
    };
    with_workers(workers, run).map_err(MlpError::Pool)?
}

/// Runs `op` on a dedicated pool of `workers` threads, or on the global pool
/// when `workers == 0`.
pub fn with_workers<T: Send>(workers: usize, op: impl FnOnce() -> T + Send) -> Result<T, String> {
    if workers == 0 {
        return Ok(op());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(|pool| pool.install(op))
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{draw_recursion, CostModel};
    use crate::problem::{make_family, FamilyParams, FamilyTag};

    fn family(tag: FamilyTag, d: usize) -> Problem {
        make_family(tag, d, 1.0, &FamilyParams::new()).unwrap().problem
    }

    #[test]
    fn depth_zero_is_zero() {
        let p = family(FamilyTag::QuadraticLinear, 2);
        let est = evaluate(&p, &MlpConfig::new(0, 3, 1), &MultiIndex::root(), 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.ledger, RvLedger::default());
    }

    #[test]
    fn constant_family_is_exact() {
        let p = family(FamilyTag::ConstantTerminal, 3);
        for n in 1..=3 {
            for m in 1..=3 {
                let est = evaluate(&p, &MlpConfig::new(n, m, 5), &MultiIndex::root(), 0.25, &[1.0, 2.0, 3.0])
                    .unwrap();
                assert_eq!(est.value, 1.0);
            }
        }
    }

    #[test]
    fn terminal_time_returns_g() {
        let p = family(FamilyTag::QuadraticLinear, 2);
        let x = [0.3, -1.7];
        for n in 1..=3 {
            let est = evaluate(&p, &MlpConfig::new(n, 3, 9), &MultiIndex::root(), 1.0, &x).unwrap();
            assert_eq!(est.value, p.terminal(&x));
        }
    }

    #[test]
    fn quadratic_n1_m4_is_mean_of_squares() {
        // With n=1 the f-sum vanishes (f ≡ 0), so the estimate is the average
        // of the four g-draws rebuilt here straight from the rng module.
        let p = family(FamilyTag::QuadraticLinear, 1);
        let cfg = MlpConfig::new(1, 4, 21);
        let theta = MultiIndex::root();
        let est = evaluate(&p, &cfg, &theta, 0.0, &[0.0]).unwrap();
        let direct: f64 = (1..=4)
            .map(|i| {
                let key = crate::rng::StreamKey::new(21, theta.child(0, -i), SPACE_DRAW);
                crate::rng::normal_vector(&key, 1)[0].powi(2)
            })
            .sum::<f64>()
            / 4.0;
        assert!((est.value - direct).abs() < 1e-14);
    }

    #[test]
    fn ledger_matches_recursion_small() {
        for variant in [Variant::SignedIndex, Variant::SharedIndex] {
            for d in 1..=2 {
                let p = family(FamilyTag::ExponentialLinearF, d);
                for n in 0..=3 {
                    for m in 1..=3 {
                        let cfg = MlpConfig::new(n, m, 2).with_variant(variant);
                        let est = evaluate(&p, &cfg, &MultiIndex::root(), 0.0, &vec![0.0; d]).unwrap();
                        let c = draw_recursion(&CostModel::new(d).unwrap(), n, m, variant).unwrap();
                        assert_eq!((est.ledger.normals, est.ledger.uniforms), (c.normals, c.uniforms));
                    }
                }
            }
        }
    }

    #[test]
    fn errors() {
        let p = family(FamilyTag::QuadraticLinear, 1);
        let cfg = MlpConfig::new(1, 2, 0);
        assert!(matches!(
            evaluate(&p, &cfg, &MultiIndex::root(), 1.5, &[0.0]),
            Err(MlpError::TimeOutOfRange { .. })
        ));
        assert!(matches!(
            evaluate(&p, &cfg, &MultiIndex::root(), 0.0, &[0.0, 1.0]),
            Err(MlpError::PointLength { .. })
        ));
        assert!(matches!(
            evaluate(&p, &MlpConfig::new(1, 0, 0), &MultiIndex::root(), 0.0, &[0.0]),
            Err(MlpError::ZeroBase)
        ));
        assert!(matches!(
            evaluate(&p, &MlpConfig::new(100, 10, 0), &MultiIndex::root(), 0.0, &[0.0]),
            Err(MlpError::TooLarge { .. })
        ));
    }

    #[test]
    fn non_finite_outputs_are_reported() {
        use std::sync::Arc;
        let p = Problem::new(
            1,
            1.0,
            1.0,
            0.0,
            vec![0.0],
            Arc::new(|x| x[0]),
            Arc::new(|_, _, v| if v > 100.0 { f64::NAN } else { 1.0 / (v - v) }),
        )
        .unwrap();
        let err = evaluate(&p, &MlpConfig::new(2, 2, 0), &MultiIndex::root(), 0.0, &[0.0]).unwrap_err();
        assert!(matches!(
            err,
            MlpError::NonFinite {
                site: EvalSite::Nonlinearity,
                v: Some(_),
                ..
            }
        ));
        let p = Problem::new(
            1,
            1.0,
            0.0,
            0.0,
            vec![0.0],
            Arc::new(|_| f64::INFINITY),
            Arc::new(|_, _, _| 0.0),
        )
        .unwrap();
        let err = evaluate(&p, &MlpConfig::new(1, 2, 0), &MultiIndex::root(), 0.0, &[0.0]).unwrap_err();
        assert!(matches!(err, MlpError::NonFinite { site: EvalSite::Terminal, .. }));
    }

    #[test]
    fn replicated_matches_single_and_is_worker_independent() {
        let p = family(FamilyTag::ExponentialLinearF, 2);
        let cfg = MlpConfig::new(2, 2, 77);
        let one = evaluate_replicated(&p, &cfg, 0.0, &[0.0, 0.0], 1, 1).unwrap();
        let direct = evaluate(&p, &cfg, &MultiIndex::replicate(1), 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(one[0], direct);
        let a = evaluate_replicated(&p, &cfg, 0.0, &[0.0, 0.0], 8, 1).unwrap();
        let b = evaluate_replicated(&p, &cfg, 0.0, &[0.0, 0.0], 8, 8).unwrap();
        let bits = |v: &[Estimate]| v.iter().map(|e| e.value.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(matches!(
            evaluate_replicated(&p, &cfg, 0.0, &[0.0, 0.0], 0, 1),
            Err(MlpError::NoReplications)
        ));
    }

    #[test]
    fn shifted_mean_exact_for_constants() {
        let mut m = ShiftedMean::default();
        for _ in 0..27 {
            m.push(0.1);
        }
        assert_eq!(m.mean(), 0.1);
        assert_eq!(ShiftedMean::default().mean(), 0.0);
    }
}
