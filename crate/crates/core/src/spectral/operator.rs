//! Nearest-node discretization of the transfer operators
//! `T_s f(x) = E[f((xC)~) |xC|^s]` and their dominant eigen-elements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::SphereGrid;
use crate::error::{Error, Result};
use crate::linalg::{dot, row_action};
use crate::models::SamplePool;

/// Kernel targets are cached when `G * B * N` is at most this many entries.
pub const CACHE_ENTRIES: usize = 1 << 24;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Schema version of serialized [`SpectralSolution`] records.
pub const SOLUTION_VERSION: u32 = 1;

/// `(T f)(x_g) = sum_j raw[g][j] f_j / count[g]`, where `raw[g][j]` sums
/// `|x_g C|^s` over the pool draws `C = C_{b,i}` whose direction lands on
/// node `j`, and `count[g]` is the number of nonvanishing `x_g C`.
///
/// Every branch of every pool sample is used, which averages over the uniform
/// branch index `I` exactly.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    pub s: f64,
    pub size: usize,
    raw: Vec<f64>,
    count: Vec<f64>,
    pub meta: OperatorMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMeta {
    pub grid_d: usize,
    pub grid_size: usize,
    pub grid_seed: u64,
    pub pool_seed: u64,
    pub pool_size: usize,
    pub spec_hash: String,
}

impl TransferOperator {
    /// `out = T f`.
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        let g = self.size;
        out.par_iter_mut().enumerate().for_each(|(row, o)| {
            let c = self.count[row];
            *o = if c > 0.0 { dot(&self.raw[row * g..(row + 1) * g], f) / c } else { 0.0 };
        });
    }

    /// `out = T^T nu`, the action on measures.
    pub fn adjoint(&self, nu: &[f64], out: &mut [f64]) {
        let g = self.size;
        out.fill(0.0);
        for row in 0..g {
            let c = self.count[row];
            if c == 0.0 || nu[row] == 0.0 {
                continue;
            }
            let w = nu[row] / c;
            for (o, r) in out.iter_mut().zip(&self.raw[row * g..(row + 1) * g]) {
                *o += w * r;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        self.apply(&vec![1.0; self.size], &mut out);
        out
    }

    /// Matrix entry `(g, j)` of the normalized operator.
    pub fn entry(&self, g: usize, j: usize) -> f64 {
        self.raw[g * self.size + j] / self.count[g]
    }
}

/// Builds [`TransferOperator`]s for many `s` on a fixed pool and grid.
///
/// Node targets and log-norms `log |x_g C_{b,i}|` do not depend on `s`; they
/// are computed once and kept when they fit in [`CACHE_ENTRIES`].
pub struct OperatorBuilder<'a> {
    pub grid: &'a SphereGrid,
    pub pool: &'a SamplePool,
    cache: Option<Vec<Vec<(u32, f64)>>>,
    meta: OperatorMeta,
}

impl<'a> OperatorBuilder<'a> {
    pub fn new(grid: &'a SphereGrid, pool: &'a SamplePool) -> Self {
        Self::with_cache_limit(grid, pool, CACHE_ENTRIES)
    }

    pub fn with_cache_limit(grid: &'a SphereGrid, pool: &'a SamplePool, limit: usize) -> Self {
        assert!(!pool.is_empty(), "empty pool");
        assert_eq!(grid.d, pool.dim(), "grid and pool dimensions differ");
        let meta = OperatorMeta {
            grid_d: grid.d,
            grid_size: grid.len(),
            grid_seed: grid.seed,
            pool_seed: pool.seed,
            pool_size: pool.len(),
            spec_hash: pool.spec_hash.clone(),
        };
        let mut b = Self { grid, pool, cache: None, meta };
        if grid.len() * pool.len() * pool.branches() <= limit {
            let cache = (0..grid.len())
                .into_par_iter()
                .map(|g| {
                    let mut row = Vec::with_capacity(pool.len() * pool.branches());
                    b.targets(g, 0, pool.len(), |col, ln| row.push((col as u32, ln)));
                    row
                })
                .collect();
            b.cache = Some(cache);
        }
        b
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    /// Calls `f(node, log |x_g C|)` for every draw in `lo..hi`; vanishing
    /// `x_g C` report `log = -inf` and node 0.
    fn targets<F: FnMut(usize, f64)>(&self, g: usize, lo: usize, hi: usize, mut f: F) {
        let d = self.grid.d;
        let x = self.grid.node(g);
        let mut v = vec![0.0; d];
        for w in &self.pool.samples[lo..hi] {
            for c in &w.c {
                row_action(x, c, &mut v);
                let n = dot(&v, &v).sqrt();
                if n > 0.0 && n.is_finite() {
                    v.iter_mut().for_each(|t| *t /= n);
                    f(self.grid.nearest(&v), n.ln());
                } else {
                    f(0, f64::NEG_INFINITY);
                }
            }
        }
    }

    pub fn build(&self, s: f64) -> TransferOperator {
        self.build_range(s, 0, self.pool.len())
    }

    /// Operator estimated from pool samples `lo..hi` only.
    pub fn build_range(&self, s: f64, lo: usize, hi: usize) -> TransferOperator {
        let size = self.grid.len();
        let n = self.pool.branches();
        let rows: Vec<(Vec<f64>, f64)> = (0..size)
            .into_par_iter()
            .map(|g| {
                let mut raw = vec![0.0; size];
                let mut count = 0u64;
                let mut add = |col: usize, ln: f64| {
                    if ln > f64::NEG_INFINITY {
                        raw[col] += if s == 0.0 { 1.0 } else { (s * ln).exp() };
                        count += 1;
                    }
                };
                match &self.cache {
                    Some(cache) => {
                        for &(col, ln) in &cache[g][lo * n..hi * n] {
                            add(col as usize, ln);
                        }
                    }
                    None => self.targets(g, lo, hi, add),
                }
                (raw, count as f64)
            })
            .collect();
        let mut raw = Vec::with_capacity(size * size);
        let mut count = Vec::with_capacity(size);
        for (r, c) in rows {
            raw.extend(r);
            count.push(c);
        }
        TransferOperator { s, size, raw, count, meta: self.meta.clone() }
    }
}

/// Dominant eigen-elements of a discretized `T_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub version: u32,
    pub s: f64,
    pub kappa: f64,
    /// Eigenfunction on the grid nodes, normalized so that `sum e nu = 1`.
    pub e: Vec<f64>,
    /// Eigenmeasure weights, total mass 1.
    pub nu: Vec<f64>,
    /// `||T e - kappa e||_inf / ||e||_inf`.
    pub residual: f64,
    pub iterations: usize,
    pub adjoint_residual: f64,
    pub adjoint_iterations: usize,
    pub meta: OperatorMeta,
}

impl SpectralSolution {
    /// `m(s) = N kappa(s)`.
    pub fn m(&self, branches: usize) -> f64 {
        branches as f64 * self.kappa
    }
}

/// Power iteration from `f = 1` for `e_s` and from the uniform measure for
/// `nu_s`. `kappa` is the Rayleigh quotient of the final forward iterate.
pub fn power_iterate(op: &TransferOperator, tol: f64, max_iter: usize) -> Result<SpectralSolution> {
    let g = op.size;
    let mut e = vec![1.0; g];
    let mut te = vec![0.0; g];
    let mut kappa = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        op.apply(&e, &mut te);
        if te.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Estimation(format!(
                "transfer operator at s = {} lost positivity at iteration {iterations}",
                op.s
            )));
        }
        kappa = dot(&e, &te) / dot(&e, &e);
        let emax = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        residual = e.iter().zip(&te).fold(0.0f64, |m, (a, b)| m.max((b - kappa * a).abs())) / emax;
        if residual <= tol {
            break;
        }
        let tmax = te.iter().fold(0.0f64, |m, v| m.max(*v));
        for (a, b) in e.iter_mut().zip(&te) {
            *a = b / tmax;
        }
    }
    if residual > tol {
        return Err(Error::NonConvergence { iterations, residual });
    }

    let mut nu = vec![1.0 / g as f64; g];
    let mut tnu = vec![0.0; g];
    let mut adjoint_residual = f64::INFINITY;
    let mut adjoint_iterations = 0;
    while adjoint_iterations < max_iter {
        adjoint_iterations += 1;
        op.adjoint(&nu, &mut tnu);
        let mass: f64 = tnu.iter().sum();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Estimation(format!("adjoint iteration at s = {} lost all mass", op.s)));
        }
        let k = mass / nu.iter().sum::<f64>();
        let nmax = nu.iter().fold(0.0f64, |m, v| m.max(*v));
        adjoint_residual = nu.iter().zip(&tnu).fold(0.0f64, |m, (a, b)| m.max((b - k * a).abs())) / nmax;
        for (a, b) in nu.iter_mut().zip(&tnu) {
            *a = b / mass;
        }
        if adjoint_residual <= tol {
            break;
        }
    }
    if adjoint_residual > tol {
        return Err(Error::NonConvergence { iterations: adjoint_iterations, residual: adjoint_residual });
    }
    let mass: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|v| *v /= mass);
    let pairing: f64 = e.iter().zip(&nu).map(|(a, b)| a * b).sum();
    e.iter_mut().for_each(|v| *v /= pairing);

    Ok(SpectralSolution {
        version: SOLUTION_VERSION,
        s: op.s,
        kappa,
        e,
        nu,
        residual,
        iterations,
        adjoint_residual,
        adjoint_iterations,
        meta: op.meta.clone(),
    })
}
