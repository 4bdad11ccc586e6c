//! Deterministic reference solvers for low dimension (`d ≤ 2`).
//!
//! The fixed-point equation
//!
//! ```text
//! u(t,x) = E[g(x + W_{T−t})] + ∫_t^T E[f(s, x + W_{s−t}, u(s, x + W_{s−t}))] ds
//! ```
//!
//! is discretized with tensor Gauss–Hermite rules for the Gaussian
//! expectations and Gauss–Legendre rules for the time integral. Picard iterates
//! live on a Chebyshev–Lobatto grid in `(t, x)` and are evaluated off-grid by
//! barycentric interpolation (global in time, local stencils in space). Points
//! outside the spatial box are clamped to it.

use std::fs;
use std::io::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use gauss_quad::{GaussHermite, GaussLegendre};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::problem::Problem;

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// Tensor rules with more nodes than this are refused.
const MAX_TENSOR_NODES: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle supports d ≤ {max}, got d = {got}")]
    Dimension { max: usize, got: usize },
    #[error("tensor rule with {0} nodes is too large")]
    TooManyNodes(usize),
    #[error("Picard iteration did not converge after {iterations} sweeps (last change {final_delta:e})")]
    NotConverged { iterations: usize, final_delta: f64 },
    #[error("non-finite value at t={t}, x={x:?}")]
    NonFinite { t: f64, x: Vec<f64> },
    #[error("invalid oracle option: {0}")]
    BadOption(String),
    #[error("cache: {0}")]
    Cache(String),
}

/// One-dimensional Gaussian and time rules; spatial nodes are tensorized on
/// demand.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    /// Probabilists' Gauss–Hermite: `E[h(Z)] ≈ Σ w h(z)`, `Z ~ N(0,1)`.
    gauss: Vec<(f64, f64)>,
    /// Gauss–Legendre on `[0, 1]`.
    time: Vec<(f64, f64)>,
    pub space_order: usize,
    pub time_order: usize,
}

impl QuadratureGrid {
    /// # Panics
    /// If either order is zero.
    pub fn new(space_order: usize, time_order: usize) -> Self {
        let so = NonZeroUsize::new(space_order).expect("space order must be positive");
        let to = NonZeroUsize::new(time_order).expect("time order must be positive");
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let gauss = GaussHermite::new(so)
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / sqrt_pi))
            .collect();
        let time = GaussLegendre::new(to)
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        Self {
            gauss,
            time,
            space_order,
            time_order,
        }
    }

    pub fn gauss_nodes(&self) -> &[(f64, f64)] {
        &self.gauss
    }

    /// `(s, w)` with `∫_a^b h ≈ Σ w h(s)`.
    pub fn time_nodes(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.time.iter().map(move |&(u, w)| (a + (b - a) * u, (b - a) * w))
    }

    /// Tensor Gauss–Hermite nodes `(z, w)` for `N(0, I_dim)`.
    pub fn space_nodes(&self, dim: usize) -> Result<Vec<(Vec<f64>, f64)>, OracleError> {
        let count = self
            .gauss
            .len()
            .checked_pow(dim as u32)
            .filter(|c| *c <= MAX_TENSOR_NODES)
            .ok_or(OracleError::TooManyNodes(self.gauss.len().saturating_pow(dim as u32)))?;
        let mut out = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let z = idx.iter().map(|&i| self.gauss[i].0).collect();
            let w = idx.iter().map(|&i| self.gauss[i].1).product();
            out.push((z, w));
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < self.gauss.len() {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(out)
    }

    /// `E[h(x + σZ)]`.
    pub fn gaussian_expectation(
        &self,
        x: &[f64],
        sigma: f64,
        mut h: impl FnMut(&[f64]) -> f64,
    ) -> Result<f64, OracleError> {
        let nodes = self.space_nodes(x.len())?;
        let mut y = vec![0.0; x.len()];
        let mut acc = 0.0;
        for (z, w) in &nodes {
            for ((yk, xk), zk) in y.iter_mut().zip(x).zip(z) {
                *yk = xk + sigma * zk;
            }
            acc += w * h(&y);
        }
        Ok(acc)
    }
}

/// Chebyshev–Lobatto nodes on `[lo, hi]` with barycentric interpolation,
/// either global or through the `stencil` nodes nearest the query point.
///
/// Local stencils keep interpolation errors local: values near a truncated
/// box edge can be badly off for fast-growing solutions, and a global
/// interpolant would spread that error over the whole axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChebAxis {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    stencil: usize,
    /// `weights[s]` holds the barycentric weights of the window starting at `s`.
    weights: Vec<Vec<f64>>,
}

impl ChebAxis {
    /// Global interpolation through all `count` nodes.
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self::local(lo, hi, count, count)
    }

    /// Interpolation through the `stencil` nearest nodes (all nodes if
    /// `stencil >= count`).
    pub fn local(lo: f64, hi: f64, count: usize, stencil: usize) -> Self {
        assert!(count >= 2 && hi > lo && stencil >= 2);
        let k = count - 1;
        let nodes: Vec<f64> = (0..count)
            .map(|j| {
                let c = (std::f64::consts::PI * j as f64 / k as f64).cos();
                0.5 * (lo + hi) - 0.5 * (hi - lo) * c
            })
            .collect();
        let stencil = stencil.min(count);
        let weights = if stencil == count {
            let w = (0..count)
                .map(|j| {
                    let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                    if j == 0 || j == k {
                        0.5 * s
                    } else {
                        s
                    }
                })
                .collect();
            vec![w]
        } else {
            (0..=count - stencil)
                .map(|s| {
                    let win = &nodes[s..s + stencil];
                    (0..stencil)
                        .map(|i| {
                            let p: f64 = (0..stencil).filter(|&j| j != i).map(|j| win[i] - win[j]).product();
                            1.0 / p
                        })
                        .collect()
                })
                .collect()
        };
        Self {
            lo,
            hi,
            nodes,
            stencil,
            weights,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stencil(&self) -> usize {
        self.stencil
    }

    /// Lagrange basis values at `y` (clamped into the axis range); entries
    /// outside the stencil are zero.
    pub fn basis(&self, y: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut win = vec![0.0; self.stencil];
        let start = self.window(y, &mut win);
        out[start..start + self.stencil].copy_from_slice(&win);
    }

    /// Nonzero part of [`ChebAxis::basis`]: fills `out` (length `stencil`)
    /// and returns the index of the first node it refers to.
    pub fn window(&self, y: f64, out: &mut [f64]) -> usize {
        let y = y.clamp(self.lo, self.hi);
        let start = if self.weights.len() == 1 {
            0
        } else {
            let nearest = self.nodes.partition_point(|&n| n < y);
            nearest.saturating_sub(self.stencil / 2).min(self.len() - self.stencil)
        };
        let nodes = &self.nodes[start..start + self.stencil];
        if let Some(hit) = nodes.iter().position(|&n| n == y) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[hit] = 1.0;
            return start;
        }
        let mut denom = 0.0;
        for ((o, &n), &w) in out.iter_mut().zip(nodes).zip(&self.weights[start]) {
            *o = w / (y - n);
            denom += *o;
        }
        out.iter_mut().for_each(|v| *v /= denom);
        start
    }
}

/// Default local stencil width for spatial interpolation.
pub const STENCIL: usize = 12;

/// Settings for [`picard_solve`] beyond the quadrature orders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardOptions {
    /// Half-width of the spatial box around `center`.
    pub box_radius: f64,
    pub center: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Interpolation nodes per spatial axis.
    pub space_points: usize,
    /// Interpolation nodes in time.
    pub time_points: usize,
    /// Nodes per local spatial interpolation stencil.
    pub stencil: usize,
}

impl PicardOptions {
    /// Box of radius `8√T` around `ξ`, `tol = 1e-8`, 128 × 16 interpolation
    /// nodes in 1D (40 × 10 in 2D), local stencils of [`STENCIL`] nodes.
    pub fn for_problem(problem: &Problem) -> Self {
        let (sp, tp) = if problem.dim() == 1 { (128, 16) } else { (40, 10) };
        Self {
            box_radius: 8.0 * problem.horizon().sqrt(),
            center: problem.xi().to_vec(),
            tol: 1e-8,
            max_iter: 200,
            space_points: sp,
            time_points: tp,
            stencil: STENCIL,
        }
    }

    pub fn with_stencil(mut self, stencil: usize) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_points(mut self, space_points: usize, time_points: usize) -> Self {
        self.space_points = space_points;
        self.time_points = time_points;
        self
    }

    fn validate(&self, dim: usize) -> Result<(), OracleError> {
        if !(self.box_radius > 0.0) {
            return Err(OracleError::BadOption("box_radius must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(OracleError::BadOption("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(OracleError::BadOption("max_iter must be positive".into()));
        }
        if self.stencil < 2 {
            return Err(OracleError::BadOption("stencil needs at least 2 nodes".into()));
        }
        if self.space_points < 2 || self.time_points < 2 {
            return Err(OracleError::BadOption("need at least 2 interpolation nodes per axis".into()));
        }
        if self.center.len() != dim {
            return Err(OracleError::BadOption("center has wrong dimension".into()));
        }
        Ok(())
    }
}

/// Converged Picard iterate on the `(t, x)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution {
    time_axis: ChebAxis,
    space_axes: Vec<ChebAxis>,
    /// `values[j * K^d + flat(k)]`, first spatial axis fastest.
    values: Vec<f64>,
    /// Refinement sweeps after the first (zero-seeded) sweep.
    pub iterations: usize,
    pub final_delta: f64,
    /// Sup-norm change of each refinement sweep.
    pub deltas: Vec<f64>,
}

impl PicardSolution {
    pub fn dim(&self) -> usize {
        self.space_axes.len()
    }

    fn space_len(&self) -> usize {
        self.space_axes.iter().map(ChebAxis::len).product()
    }

    /// Interpolated value; `t` and `x` are clamped into the grid.
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let mut tb = vec![0.0; self.time_axis.len()];
        self.time_axis.basis(t, &mut tb);
        let bases: Vec<Vec<f64>> = self
            .space_axes
            .iter()
            .zip(x)
            .map(|(ax, &xi)| {
                let mut b = vec![0.0; ax.len()];
                ax.basis(xi, &mut b);
                b
            })
            .collect();
        let sl = self.space_len();
        let mut acc = 0.0;
        for (j, wt) in tb.iter().enumerate() {
            if *wt == 0.0 {
                continue;
            }
            let slice = &self.values[j * sl..(j + 1) * sl];
            acc += wt * contract(slice, &bases);
        }
        acc
    }

    /// Grid values as `(t, x, u)` rows.
    pub fn rows(&self) -> Vec<(f64, Vec<f64>, f64)> {
        let sl = self.space_len();
        let mut out = Vec::with_capacity(self.values.len());
        for (j, &t) in self.time_axis.nodes().iter().enumerate() {
            for k in 0..sl {
                out.push((t, self.space_point(k), self.values[j * sl + k]));
            }
        }
        out
    }

    fn space_point(&self, flat: usize) -> Vec<f64> {
        space_point(&self.space_axes, flat)
    }
}

fn space_point(axes: &[ChebAxis], mut flat: usize) -> Vec<f64> {
    axes.iter()
        .map(|ax| {
            let i = flat % ax.len();
            flat /= ax.len();
            ax.nodes()[i]
        })
        .collect()
}

/// `Σ_k Π_a basis[a][k_a] · values[k]`, first axis fastest.
fn contract(values: &[f64], bases: &[Vec<f64>]) -> f64 {
    match bases.len() {
        1 => values.iter().zip(&bases[0]).map(|(v, b)| v * b).sum(),
        2 => {
            let k0 = bases[0].len();
            bases[1]
                .iter()
                .enumerate()
                .map(|(k1, b1)| {
                    let row = &values[k1 * k0..(k1 + 1) * k0];
                    b1 * row.iter().zip(&bases[0]).map(|(v, b)| v * b).sum::<f64>()
                })
                .sum()
        }
        _ => unreachable!("oracle grids are at most two-dimensional"),
    }
}

/// Fixed-point iteration `u⁰ = 0`, `u^{k+1} = Φ(u^k)` with Jacobi sweeps over
/// the grid; stops when the sup-norm change drops below `opts.tol`.
pub fn picard_solve(
    problem: &Problem,
    grid: &QuadratureGrid,
    opts: &PicardOptions,
) -> Result<PicardSolution, OracleError> {
    let d = problem.dim();
    if d > 2 {
        return Err(OracleError::Dimension { max: 2, got: d });
    }
    opts.validate(d)?;
    let big_t = problem.horizon();
    let time_axis = ChebAxis::new(0.0, big_t, opts.time_points);
    let space_axes: Vec<ChebAxis> = opts
        .center
        .iter()
        .map(|&c| ChebAxis::local(c - opts.box_radius, c + opts.box_radius, opts.space_points, opts.stencil))
        .collect();
    let sl: usize = space_axes.iter().map(ChebAxis::len).product();
    let nt = time_axis.len();
    let z_nodes = grid.space_nodes(d)?;

    let points: Vec<Vec<f64>> = (0..sl).map(|k| space_point(&space_axes, k)).collect();

    // E[g(x_k + W_{T−t_j})]
    let g_term: Vec<f64> = (0..nt * sl)
        .into_par_iter()
        .map(|idx| {
            let (j, k) = (idx / sl, idx % sl);
            let sigma = (big_t - time_axis.nodes()[j]).max(0.0).sqrt();
            let mut y = vec![0.0; d];
            let mut acc = 0.0;
            for (z, w) in &z_nodes {
                for ((yk, xk), zk) in y.iter_mut().zip(&points[k]).zip(z) {
                    *yk = xk + sigma * zk;
                }
                acc += w * problem.terminal(&y);
            }
            acc
        })
        .collect();
    if let Some(bad) = g_term.iter().position(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite {
            t: time_axis.nodes()[bad / sl],
            x: points[bad % sl].clone(),
        });
    }

    let gq = grid.gauss_nodes();
    let sweep = |prev: &[f64]| -> Result<Vec<f64>, OracleError> {
        let per_time: Vec<Vec<f64>> = (0..nt)
            .into_par_iter()
            .map(|j| {
                let tj = time_axis.nodes()[j];
                let mut integral = vec![0.0; sl];
                if tj >= big_t {
                    return integral;
                }
                let mut tb = vec![0.0; nt];
                for (s, ws) in grid.time_nodes(tj, big_t) {
                    // u(s, ·) on the spatial nodes
                    time_axis.basis(s, &mut tb);
                    let mut slice = vec![0.0; sl];
                    for (jj, b) in tb.iter().enumerate() {
                        if *b != 0.0 {
                            for (o, v) in slice.iter_mut().zip(&prev[jj * sl..(jj + 1) * sl]) {
                                *o += b * v;
                            }
                        }
                    }
                    let sigma = (s - tj).sqrt();
                    let e = expect_f(problem, s, sigma, &slice, &space_axes, &points, gq);
                    for (acc, v) in integral.iter_mut().zip(e) {
                        *acc += ws * v;
                    }
                }
                integral
            })
            .collect();
        let next: Vec<f64> = per_time
            .into_iter()
            .flatten()
            .zip(&g_term)
            .map(|(i, g)| g + i)
            .collect();
        if let Some(bad) = next.iter().position(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite {
                t: time_axis.nodes()[bad / sl],
                x: points[bad % sl].clone(),
            });
        }
        Ok(next)
    };

    let mut current = sweep(&vec![0.0; nt * sl])?;
    let mut deltas = Vec::new();
    loop {
        let next = sweep(&current)?;
        let delta = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        deltas.push(delta);
        current = next;
        if delta < opts.tol {
            break;
        }
        if deltas.len() >= opts.max_iter {
            return Err(OracleError::NotConverged {
                iterations: deltas.len(),
                final_delta: delta,
            });
        }
    }
    Ok(PicardSolution {
        time_axis,
        space_axes,
        values: current,
        iterations: deltas.len(),
        final_delta: *deltas.last().unwrap(),
        deltas,
    })
}

/// Sparse interpolation weights at `x_k + σ z_q` for every node `k` and
/// Gauss–Hermite node `q` of one axis.
struct Windows {
    stencil: usize,
    nq: usize,
    starts: Vec<usize>,
    weights: Vec<f64>,
}

impl Windows {
    fn new(ax: &ChebAxis, sigma: f64, gq: &[(f64, f64)]) -> Self {
        let st = ax.stencil();
        let n = ax.len() * gq.len();
        let mut starts = Vec::with_capacity(n);
        let mut weights = vec![0.0; n * st];
        for (k, &xk) in ax.nodes().iter().enumerate() {
            for (q, &(z, _)) in gq.iter().enumerate() {
                let i = k * gq.len() + q;
                starts.push(ax.window(xk + sigma * z, &mut weights[i * st..(i + 1) * st]));
            }
        }
        Self {
            stencil: st,
            nq: gq.len(),
            starts,
            weights,
        }
    }

    /// `Σ_i w_i · values[start + i]` for node `k`, GH node `q`.
    #[inline]
    fn apply(&self, k: usize, q: usize, values: &[f64]) -> f64 {
        let i = k * self.nq + q;
        let start = self.starts[i];
        self.weights[i * self.stencil..(i + 1) * self.stencil]
            .iter()
            .zip(&values[start..start + self.stencil])
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// `E[f(s, x_k + σZ, ũ(s, x_k + σZ))]` for every spatial grid point `x_k`,
/// where `ũ` interpolates `slice`. Uses the tensor structure of the rule so
/// that the interpolation cost stays separable.
fn expect_f(
    problem: &Problem,
    s: f64,
    sigma: f64,
    slice: &[f64],
    axes: &[ChebAxis],
    points: &[Vec<f64>],
    gq: &[(f64, f64)],
) -> Vec<f64> {
    let nq = gq.len();
    let win: Vec<Windows> = axes.iter().map(|ax| Windows::new(ax, sigma, gq)).collect();
    match axes.len() {
        1 => {
            let ax = &axes[0];
            (0..ax.len())
                .map(|k| {
                    let xk = ax.nodes()[k];
                    gq.iter()
                        .enumerate()
                        .map(|(q, &(z, w))| w * problem.nonlinearity(s, &[xk + sigma * z], win[0].apply(k, q, slice)))
                        .sum()
                })
                .collect()
        }
        2 => {
            let (k0n, k1n) = (axes[0].len(), axes[1].len());
            // partial[(k0·nq + q0)·k1n + b] = ũ along axis 0 at row b
            let mut partial = vec![0.0; k0n * nq * k1n];
            for k0 in 0..k0n {
                for q0 in 0..nq {
                    let base = (k0 * nq + q0) * k1n;
                    for b in 0..k1n {
                        partial[base + b] = win[0].apply(k0, q0, &slice[b * k0n..(b + 1) * k0n]);
                    }
                }
            }
            points
                .iter()
                .enumerate()
                .map(|(flat, x)| {
                    let (k0, k1) = (flat % k0n, flat / k0n);
                    let mut acc = 0.0;
                    let mut y = [0.0; 2];
                    for (q0, &(z0, w0)) in gq.iter().enumerate() {
                        y[0] = x[0] + sigma * z0;
                        let base = (k0 * nq + q0) * k1n;
                        let p = &partial[base..base + k1n];
                        for (q1, &(z1, w1)) in gq.iter().enumerate() {
                            y[1] = x[1] + sigma * z1;
                            acc += w0 * w1 * problem.nonlinearity(s, &y, win[1].apply(k1, q1, p));
                        }
                    }
                    acc
                })
                .collect()
        }
        _ => unreachable!(),
    }
}

/// Right-hand side of the fixed-point equation applied to `candidate` at `(t, x)`.
pub fn fixed_point_rhs(
    problem: &Problem,
    candidate: &dyn Fn(f64, &[f64]) -> f64,
    grid: &QuadratureGrid,
    t: f64,
    x: &[f64],
) -> Result<f64, OracleError> {
    let big_t = problem.horizon();
    let nodes = grid.space_nodes(problem.dim())?;
    let mut y = vec![0.0; x.len()];
    let mut bad = None;
    let mut expect = |sigma: f64, h: &mut dyn FnMut(&[f64]) -> f64| {
        let mut acc = 0.0;
        for (z, w) in &nodes {
            for ((yk, xk), zk) in y.iter_mut().zip(x).zip(z) {
                *yk = xk + sigma * zk;
            }
            acc += w * h(&y);
        }
        acc
    };
    let mut rhs = expect((big_t - t).max(0.0).sqrt(), &mut |y| problem.terminal(y));
    for (s, ws) in grid.time_nodes(t, big_t) {
        rhs += ws
            * expect((s - t).sqrt(), &mut |y| {
                let c = candidate(s, y);
                if !c.is_finite() {
                    bad.get_or_insert((s, y.to_vec()));
                }
                problem.nonlinearity(s, y, c)
            });
    }
    if let Some((t, x)) = bad {
        return Err(OracleError::NonFinite { t, x });
    }
    Ok(rhs)
}

/// `max_points |candidate − Φ(candidate)|`.
pub fn fixed_point_residual(
    problem: &Problem,
    candidate: &dyn Fn(f64, &[f64]) -> f64,
    grid: &QuadratureGrid,
    points: &[(f64, Vec<f64>)],
) -> Result<f64, OracleError> {
    if problem.dim() > 3 {
        return Err(OracleError::Dimension { max: 3, got: problem.dim() });
    }
    let mut worst: f64 = 0.0;
    for (t, x) in points {
        let c = candidate(*t, x);
        if !c.is_finite() {
            return Err(OracleError::NonFinite { t: *t, x: x.clone() });
        }
        let rhs = fixed_point_rhs(problem, candidate, grid, *t, x)?;
        worst = worst.max((c - rhs).abs());
    }
    Ok(worst)
}

/// `e^{LT}·(g_l2 + f0_norm)`, an upper bound for
/// `sup_t (E|u(t, ξ+W_t)|²)^{1/2}`.
pub fn apriori_bound(problem: &Problem, g_l2: f64, f0_norm: f64) -> f64 {
    (problem.lip() * problem.horizon()).exp() * (g_l2 + f0_norm)
}

/// `(E|u(t, ξ+W_t)|²)^{1/2}` by Gauss–Hermite.
pub fn flow_l2(
    problem: &Problem,
    u: &dyn Fn(f64, &[f64]) -> f64,
    grid: &QuadratureGrid,
    t: f64,
) -> Result<f64, OracleError> {
    grid.gaussian_expectation(problem.xi(), t.sqrt(), |y| u(t, y).powi(2))
        .map(f64::sqrt)
}

/// Picard solve through a content-addressed on-disk cache.
///
/// The file name is the SHA-256 of a key covering the cache format version,
/// `label` (which must identify `f` and `g`), the problem scalars and every
/// grid/option setting.
pub fn picard_solve_cached(
    dir: &Path,
    label: &str,
    problem: &Problem,
    grid: &QuadratureGrid,
    opts: &PicardOptions,
) -> Result<PicardSolution, OracleError> {
    let key = cache_key(label, problem, grid, opts);
    let path = cache_path(dir, &key);
    if path.exists() {
        if let Ok(sol) = load_cached(&path, &key, problem, opts) {
            return Ok(sol);
        }
    }
    let sol = picard_solve(problem, grid, opts)?;
    store_cached(&path, &key, &sol).map_err(|e| OracleError::Cache(e.to_string()))?;
    Ok(sol)
}

fn cache_key(label: &str, problem: &Problem, grid: &QuadratureGrid, opts: &PicardOptions) -> String {
    format!(
        "v{CACHE_FORMAT_VERSION}|{label}|d={}|T={:?}|L={:?}|xi={:?}|so={}|to={}|R={:?}|c={:?}|tol={:?}|it={}|sp={}|tp={}|st={}",
        problem.dim(),
        problem.horizon(),
        problem.lip(),
        problem.xi(),
        grid.space_order,
        grid.time_order,
        opts.box_radius,
        opts.center,
        opts.tol,
        opts.max_iter,
        opts.space_points,
        opts.time_points,
        opts.stencil
    )
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    let digest = Sha256::digest(key.as_bytes());
    dir.join(format!("picard-{}.csv", hex::encode(digest)))
}

fn store_cached(path: &Path, key: &str, sol: &PicardSolution) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        writeln!(f, "# picard-oracle-cache v{CACHE_FORMAT_VERSION}")?;
        writeln!(f, "# key={key}")?;
        writeln!(f, "# iterations={} final_delta={:?}", sol.iterations, sol.final_delta)?;
        let xcols: Vec<String> = (0..sol.dim()).map(|i| format!("x{i}")).collect();
        writeln!(f, "t,{},u", xcols.join(","))?;
        for (t, x, u) in sol.rows() {
            let xs: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "{t:?},{},{u:?}", xs.join(","))?;
        }
    }
    fs::rename(tmp, path)
}

fn load_cached(
    path: &Path,
    key: &str,
    problem: &Problem,
    opts: &PicardOptions,
) -> Result<PicardSolution, OracleError> {
    let bad = |m: &str| OracleError::Cache(format!("{}: {m}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(&e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(format!("# picard-oracle-cache v{CACHE_FORMAT_VERSION}").as_str()) {
        return Err(bad("version mismatch"));
    }
    if lines.next() != Some(format!("# key={key}").as_str()) {
        return Err(bad("key mismatch"));
    }
    let meta = lines.next().ok_or_else(|| bad("missing metadata"))?;
    let mut iterations = None;
    let mut final_delta = None;
    for part in meta.trim_start_matches("# ").split_whitespace() {
        match part.split_once('=') {
            Some(("iterations", v)) => iterations = v.parse().ok(),
            Some(("final_delta", v)) => final_delta = v.parse().ok(),
            _ => {}
        }
    }
    let _header = lines.next();
    let values: Vec<f64> = lines
        .map(|l| l.rsplit(',').next().and_then(|v| v.parse().ok()))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("malformed row"))?;
    let time_axis = ChebAxis::new(0.0, problem.horizon(), opts.time_points);
    let space_axes: Vec<ChebAxis> = opts
        .center
        .iter()
        .map(|&c| ChebAxis::local(c - opts.box_radius, c + opts.box_radius, opts.space_points, opts.stencil))
        .collect();
    let expected = time_axis.len() * space_axes.iter().map(ChebAxis::len).product::<usize>();
    if values.len() != expected {
        return Err(bad("row count mismatch"));
    }
    let final_delta = final_delta.ok_or_else(|| bad("missing final_delta"))?;
    Ok(PicardSolution {
        time_axis,
        space_axes,
        values,
        iterations: iterations.ok_or_else(|| bad("missing iterations"))?,
        final_delta,
        deltas: vec![final_delta],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_family, FamilyParams, FamilyTag};

    #[test]
    fn gauss_hermite_moments() {
        let g = QuadratureGrid::new(32, 8);
        let w: f64 = g.gauss_nodes().iter().map(|(_, w)| w).sum();
        assert!((w - 1.0).abs() < 1e-13);
        assert!(g.gauss_nodes().iter().all(|(_, w)| *w > 0.0));
        let m2 = g.gaussian_expectation(&[0.0], 1.0, |y| y[0] * y[0]).unwrap();
        let m4 = g.gaussian_expectation(&[0.0], 1.0, |y| y[0].powi(4)).unwrap();
        assert!((m2 - 1.0).abs() < 1e-13 && (m4 - 3.0).abs() < 1e-12);
        let tsum: f64 = g.time_nodes(0.25, 1.0).map(|(_, w)| w).sum();
        assert!((tsum - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cheb_interpolation_is_spectral() {
        let ax = ChebAxis::new(-8.0, 8.0, 48);
        let vals: Vec<f64> = ax.nodes().iter().map(|x| x.exp()).collect();
        let mut b = vec![0.0; ax.len()];
        for &y in &[-7.3, -0.1, 0.0, 2.2, 7.9] {
            ax.basis(y, &mut b);
            let p: f64 = b.iter().zip(&vals).map(|(x, v)| x * v).sum();
            assert!((p - f64::exp(y)).abs() < 1e-9 * f64::exp(y).max(1.0), "{y}");
        }
        // clamping
        ax.basis(20.0, &mut b);
        assert_eq!(*b.last().unwrap(), 1.0);
    }

    #[test]
    fn local_stencil_is_exact_for_low_degree() {
        let ax = ChebAxis::local(-8.0, 8.0, 64, 6);
        let cubic = |x: f64| 2.0 - x + 0.5 * x * x * x;
        let vals: Vec<f64> = ax.nodes().iter().map(|&x| cubic(x)).collect();
        let mut b = vec![0.0; ax.len()];
        for &y in &[-8.0, -7.99, -3.3, 0.01, 5.0, 8.0] {
            ax.basis(y, &mut b);
            assert!(b.iter().filter(|v| **v != 0.0).count() <= 6);
            let p: f64 = b.iter().zip(&vals).map(|(x, v)| x * v).sum();
            assert!((p - cubic(y)).abs() < 1e-9 * cubic(y).abs().max(1.0), "{y}: {p}");
        }
    }

    #[test]
    fn trivial_picard() {
        let fam = make_family(FamilyTag::ConstantTerminal, 1, 1.0, &FamilyParams::new()).unwrap();
        let opts = PicardOptions::for_problem(&fam.problem).with_points(8, 4);
        let sol = picard_solve(&fam.problem, &QuadratureGrid::new(8, 4), &opts).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.final_delta < 1e-14);
        assert!((sol.value(0.3, &[0.7]) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn residual_of_zero_candidate() {
        let fam = make_family(FamilyTag::ConstantTerminal, 1, 1.0, &FamilyParams::new()).unwrap();
        let r = fixed_point_residual(&fam.problem, &|_, _| 0.0, &QuadratureGrid::new(8, 4), &[(0.0, vec![0.0])])
            .unwrap();
        assert!((r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_high_dimension() {
        let fam = make_family(FamilyTag::QuadraticLinear, 3, 1.0, &FamilyParams::new()).unwrap();
        let opts = PicardOptions::for_problem(&fam.problem);
        assert!(matches!(
            picard_solve(&fam.problem, &QuadratureGrid::new(8, 4), &opts),
            Err(OracleError::Dimension { .. })
        ));
    }

    #[test]
    fn non_convergence_is_reported() {
        let fam = make_family(FamilyTag::SineNonlinear, 1, 1.0, &FamilyParams::new()).unwrap();
        let mut opts = PicardOptions::for_problem(&fam.problem).with_points(8, 4);
        opts.max_iter = 2;
        assert!(matches!(
            picard_solve(&fam.problem, &QuadratureGrid::new(8, 4), &opts),
            Err(OracleError::NotConverged { iterations: 2, .. })
        ));
    }

    #[test]
    fn apriori_bound_formula() {
        let fam = make_family(FamilyTag::ConstantTerminal, 1, 1.0, &FamilyParams::new()).unwrap();
        assert_eq!(apriori_bound(&fam.problem, 1.0, 0.0), 1.0);
    }
}
