//! Full-history multilevel Picard (MLP) approximations for semilinear heat
//! equations
//!
//! ```text
//! ∂ₜu + ½Δu + f(t, x, u) = 0,   u(T, ·) = g,
//! ```
//!
//! with nonlinearities that are Lipschitz in `u` and independent of `∇u`.
//!
//! * [`problem`]: problem instances and analytic test families.
//! * [`rng`]: counter-based random streams addressed by multi-indices.
//! * [`mlp`]: the recursive estimator with exact draw accounting.
//! * [`cost`]: the draw-count recursion, its closed-form bound and the
//!   cost-versus-accuracy constant.
//! * [`oracle`]: quadrature-based Picard solver and fixed-point residuals for
//!   `d ≤ 2`.
//! * [`harness`]: RMSE, bound and complexity studies; semi-norm estimates.
//! * [`cli`]: the `mlp` command-line front end.
//!
//! ```
//! use picard_mlp::mlp::{evaluate, MlpConfig};
//! use picard_mlp::problem::{make_family, FamilyParams, FamilyTag};
//! use picard_mlp::rng::MultiIndex;
//!
//! let fam = make_family(FamilyTag::ConstantTerminal, 5, 1.0, &FamilyParams::new()).unwrap();
//! let est = evaluate(&fam.problem, &MlpConfig::new(3, 3, 7), &MultiIndex::root(), 0.0, &[0.0; 5]).unwrap();
//! assert_eq!(est.value, 1.0);
//! ```

pub mod cli;
pub mod cost;
pub mod harness;
pub mod mlp;
pub mod oracle;
pub mod problem;
pub mod rng;

pub use mlp::{evaluate, evaluate_replicated, Estimate, MlpConfig, RvLedger, Variant};
pub use problem::{make_family, AnalyticFamily, FamilyTag, Problem};
pub use rng::MultiIndex;
