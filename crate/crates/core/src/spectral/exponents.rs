//! The structure function `m(s)`, its roots `alpha <= beta`, and the renewal
//! normalizers `l_beta` and `m_beta`.

use serde::{Deserialize, Serialize};

use super::grid::SphereGrid;
use super::operator::{power_iterate, OperatorBuilder, SpectralSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::linalg::{dot, op_norm, row_action};
use crate::models::{Family, ModelSpec, SamplePool};
use crate::stats::{mean_se, NeumaierSum};
use crate::wbp::PathPool;

/// Step for the derivative `m'(beta)`; the reported value is the Richardson
/// combination of central differences with steps `h` and `h / 2`.
pub const DERIVATIVE_STEP: f64 = 1e-2;

/// Root tolerance in `s`.
pub const ROOT_TOL: f64 = 1e-3;

/// Disjoint pool batches used for the standard error of spectral estimates.
pub const SE_BATCHES: usize = 8;

/// `m_hat(s) = N (B^-1 sum_b ||Pi_n^(b)||^s)^(1/n)` with a delta-method SE,
/// evaluated in the log domain.
pub fn estimate_m_direct(paths: &PathPool, branches: usize, s: f64, n: usize) -> Result<(f64, f64)> {
    if n == 0 || n > paths.max_len() {
        return Err(Error::Usage(format!("path length {n} not in 1..={}", paths.max_len())));
    }
    if paths.count() < 100 {
        return Err(Error::Usage("direct estimate needs at least 100 paths".into()));
    }
    let nf = branches as f64;
    if s == 0.0 {
        return Ok((nf, 0.0));
    }
    let (log_mean, rel_se) = log_moment(paths.at(n), s)?;
    let m = nf * (log_mean / n as f64).exp();
    Ok((m, m * rel_se / n as f64))
}

/// Ratio form `(E||Pi_n||^s / E||Pi_n0||^s)^(1/(n - n0))` with `n0 = n / 2`.
/// The ratio cancels the leading constant in `E||Pi_n||^s ~ c kappa^n`, which
/// the direct form only removes at rate `1/n`.
pub fn estimate_m_ratio(paths: &PathPool, branches: usize, s: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 || n > paths.max_len() {
        return Err(Error::Usage(format!("path length {n} not in 2..={}", paths.max_len())));
    }
    let nf = branches as f64;
    if s == 0.0 {
        return Ok((nf, 0.0));
    }
    let n0 = n / 2;
    let (a, b) = (paths.at(n), paths.at(n0));
    let shift_a = a.iter().fold(f64::NEG_INFINITY, |m, v| m.max(s * v));
    let shift_b = b.iter().fold(f64::NEG_INFINITY, |m, v| m.max(s * v));
    if !(shift_a.is_finite() && shift_b.is_finite()) {
        return Err(Error::Estimation("all path products vanish".into()));
    }
    let xa: Vec<f64> = a.iter().map(|v| (s * v - shift_a).exp()).collect();
    let xb: Vec<f64> = b.iter().map(|v| (s * v - shift_b).exp()).collect();
    let k = xa.len() as f64;
    let ma = xa.iter().copied().collect::<NeumaierSum>().value() / k;
    let mb = xb.iter().copied().collect::<NeumaierSum>().value() / k;
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for (x, y) in xa.iter().zip(&xb) {
        va += (x / ma - 1.0).powi(2);
        vb += (y / mb - 1.0).powi(2);
        cab += (x / ma - 1.0) * (y / mb - 1.0);
    }
    let var_log = (va + vb - 2.0 * cab).max(0.0) / (k - 1.0) / k;
    let steps = (n - n0) as f64;
    let log_ratio = ma.ln() + shift_a - mb.ln() - shift_b;
    let m = nf * (log_ratio / steps).exp();
    Ok((m, m * var_log.sqrt() / steps))
}

/// `log E[exp(s L)]` and the relative SE of the mean.
fn log_moment(logs: &[f64], s: f64) -> Result<(f64, f64)> {
    let shift = logs.iter().fold(f64::NEG_INFINITY, |m, v| m.max(s * v));
    if !shift.is_finite() {
        return Err(Error::Estimation("all path products vanish or overflow".into()));
    }
    let x: Vec<f64> = logs.iter().map(|v| (s * v - shift).exp()).collect();
    let (mean, se) = mean_se(&x);
    Ok((mean.ln() + shift, se / mean))
}

/// How `m(s)` is evaluated.
pub enum MRoute<'a> {
    /// `N kappa(s)` from power iteration on the pool operator; SEs from
    /// [`SE_BATCHES`] disjoint pool batches.
    Spectral { builder: &'a OperatorBuilder<'a>, tol: f64, max_iter: usize },
    /// Path products of length `n`.
    Direct { paths: &'a PathPool, n: usize },
    /// Ratio estimator on path products of length `n`.
    Ratio { paths: &'a PathPool, n: usize },
}

impl<'a> MRoute<'a> {
    pub fn spectral(builder: &'a OperatorBuilder<'a>) -> Self {
        MRoute::Spectral { builder, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MRoute::Spectral { .. } => "spectral",
            MRoute::Direct { .. } => "direct",
            MRoute::Ratio { .. } => "ratio",
        }
    }

    fn eval(&self, branches: usize, s: f64) -> Result<MPoint> {
        match self {
            MRoute::Spectral { builder, tol, max_iter } => {
                let sol = power_iterate(&builder.build(s), *tol, *max_iter)?;
                Ok(MPoint {
                    s,
                    m_hat: sol.m(branches),
                    se: None,
                    kappa: sol.kappa,
                    residual: sol.residual,
                    iterations: sol.iterations,
                })
            }
            MRoute::Direct { paths, n } => {
                let (m, se) = estimate_m_direct(paths, branches, s, *n)?;
                Ok(MPoint { s, m_hat: m, se: Some(se), kappa: m / branches as f64, residual: 0.0, iterations: 0 })
            }
            MRoute::Ratio { paths, n } => {
                let (m, se) = estimate_m_ratio(paths, branches, s, *n)?;
                Ok(MPoint { s, m_hat: m, se: Some(se), kappa: m / branches as f64, residual: 0.0, iterations: 0 })
            }
        }
    }

    /// Point estimate with a standard error.
    pub fn eval_with_se(&self, branches: usize, s: f64) -> Result<MPoint> {
        let mut p = self.eval(branches, s)?;
        if let MRoute::Spectral { builder, tol, max_iter } = self {
            let b = builder.pool.len();
            let reps = (0..SE_BATCHES)
                .map(|k| {
                    let op = builder.build_range(s, k * b / SE_BATCHES, (k + 1) * b / SE_BATCHES);
                    power_iterate(&op, *tol, *max_iter).map(|sol| sol.m(branches))
                })
                .collect::<Result<Vec<f64>>>()?;
            p.se = Some(mean_se(&reps).1);
        }
        Ok(p)
    }
}

/// One row of the m-curve table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MPoint {
    pub s: f64,
    pub m_hat: f64,
    /// `None` when the scan skipped standard errors.
    pub se: Option<f64>,
    pub kappa: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Declared moment abscissa of `||C||`; `None` means unbounded within the
    /// scan.
    pub s_infinity: Option<f64>,
    pub m_curve: Vec<MPoint>,
    pub m_prime_beta: Option<f64>,
    pub route: String,
    pub notes: Vec<String>,
    pub spec_hash: String,
}

impl ExponentReport {
    /// A report with no scan points and no exponents.
    pub fn empty(spec: &ModelSpec) -> Self {
        Self {
            alpha: None,
            beta: None,
            s_infinity: spec.s_max_hint,
            m_curve: Vec::new(),
            m_prime_beta: None,
            route: String::new(),
            notes: Vec::new(),
            spec_hash: spec.hash(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub s_lo: f64,
    pub s_hi: f64,
    pub step: f64,
    /// Compute standard errors at every scan point.
    pub with_se: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { s_lo: 0.1, s_hi: 6.0, step: 0.1, with_se: true }
    }
}

/// Scans `m_hat` on `[s_lo, s_hi]`, then bisects each sign change of
/// `m_hat - 1` to [`ROOT_TOL`]. Convexity of `m` means at most one downward
/// and one upward crossing; `alpha` is the first `s` with `m <= 1`, `beta`
/// the upward crossing.
pub fn find_exponents(spec: &ModelSpec, route: &MRoute<'_>, opts: ScanOptions) -> Result<ExponentReport> {
    if !(opts.s_lo > 0.0 && opts.s_hi > opts.s_lo && opts.step > 0.0) {
        return Err(Error::Usage(format!("invalid scan range [{}, {}] step {}", opts.s_lo, opts.s_hi, opts.step)));
    }
    if let Some(hint) = spec.s_max_hint {
        if opts.s_hi >= hint {
            return Err(Error::Usage(format!("scan end {} must stay below s.max = {hint}", opts.s_hi)));
        }
    }
    let n = spec.branches;
    let steps = ((opts.s_hi - opts.s_lo) / opts.step + 1e-9).floor() as usize;
    let mut curve = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let s = opts.s_lo + k as f64 * opts.step;
        let p = if opts.with_se { route.eval_with_se(n, s)? } else { route.eval(n, s)? };
        if !p.m_hat.is_finite() {
            return Err(Error::Estimation(format!("m_hat is not finite at s = {s}")));
        }
        curve.push(p);
    }
    let mut notes = Vec::new();
    let f = |s: f64| route.eval(n, s).map(|p| p.m_hat - 1.0);

    let mut alpha = None;
    let mut beta = None;
    let first_below = curve.iter().position(|p| p.m_hat <= 1.0);
    match first_below {
        None => notes.push("m_hat > 1 on the whole scan: no exponents in range".into()),
        Some(0) => notes.push(format!("m_hat <= 1 already at s = {}: alpha lies below the scan", opts.s_lo)),
        Some(k) => alpha = Some(bisect(&f, curve[k - 1].s, curve[k].s)?),
    }
    if let Some(k) = first_below {
        match curve[k..].iter().position(|p| p.m_hat > 1.0) {
            Some(j) => {
                let hi = k + j;
                beta = Some(bisect(&f, curve[hi].s, curve[hi - 1].s)?);
            }
            None => notes.push("m_hat stays <= 1 up to the end of the scan: beta absent".into()),
        }
    }
    let m_prime_beta = match beta {
        Some(b) => {
            let h = DERIVATIVE_STEP;
            let central = |h: f64| -> Result<f64> { Ok((f(b + h)? - f(b - h)?) / (2.0 * h)) };
            let d = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
            if d <= 0.0 {
                notes.push(format!("m'(beta) = {d} is not positive"));
            }
            Some(d)
        }
        None => None,
    };
    Ok(ExponentReport {
        alpha,
        beta,
        s_infinity: spec.s_max_hint,
        m_curve: curve,
        m_prime_beta,
        route: route.name().into(),
        notes,
        spec_hash: spec.hash(),
    })
}

/// Root of `f` between `above` (`f > 0`) and `below` (`f <= 0`).
fn bisect<F: Fn(f64) -> Result<f64>>(f: &F, mut above: f64, mut below: f64) -> Result<f64> {
    while (above - below).abs() > ROOT_TOL / 4.0 {
        let mid = 0.5 * (above + below);
        if f(mid)? > 0.0 {
            above = mid;
        } else {
            below = mid;
        }
    }
    Ok(0.5 * (above + below))
}

/// `l_beta = int E[e((yC)~) |yC|^beta log|yC|] nu(dy)` by quadrature over
/// the grid nodes weighted by `nu`, with the pool average inside.
pub fn compute_l_beta(grid: &SphereGrid, solution: &SpectralSolution, pool: &SamplePool) -> Result<(f64, f64)> {
    check_solution(grid, solution, pool)?;
    let beta = solution.s;
    let d = grid.d;
    let nf = pool.branches() as f64;
    let mut v = vec![0.0; d];
    let per_sample: Vec<f64> = pool
        .samples
        .iter()
        .map(|w| {
            let mut acc = NeumaierSum::new();
            for (g, &nu) in solution.nu.iter().enumerate() {
                if nu == 0.0 {
                    continue;
                }
                let x = grid.node(g);
                for c in &w.c {
                    row_action(x, c, &mut v);
                    let r = dot(&v, &v).sqrt();
                    if r > 0.0 {
                        v.iter_mut().for_each(|t| *t /= r);
                        acc.add(nu * solution.e[grid.nearest(&v)] * r.powf(beta) * r.ln() / nf);
                    }
                }
            }
            acc.value()
        })
        .collect();
    let (l, se) = mean_se(&per_sample);
    if l + 3.0 * se <= 0.0 {
        return Err(Error::Consistency(format!(
            "l_beta = {l:.6e} (se {se:.2e}) is not positive at beta = {beta}; beta or the spectral solution is wrong"
        )));
    }
    Ok((l, se))
}

fn check_solution(grid: &SphereGrid, solution: &SpectralSolution, pool: &SamplePool) -> Result<()> {
    if solution.e.len() != grid.len() || solution.meta.grid_size != grid.len() || solution.meta.grid_d != grid.d {
        return Err(Error::Provenance("spectral solution was computed on a different grid".into()));
    }
    if solution.meta.spec_hash != pool.spec_hash {
        return Err(Error::Provenance("spectral solution was computed for a different model".into()));
    }
    Ok(())
}

/// `N E[||C||^s log ||C||]` with its SE, without a sign check.
pub fn m_beta_functional(pool: &SamplePool, s: f64) -> (f64, f64) {
    let values: Vec<f64> = pool
        .samples
        .iter()
        .map(|w| {
            w.c.iter()
                .map(|c| {
                    let t = op_norm(c);
                    if t > 0.0 {
                        t.powf(s) * t.ln()
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    mean_se(&values)
}

/// `m_beta = N E[||C||^beta log ||C||]` for similarity models.
pub fn compute_m_beta_similarity(spec: &ModelSpec, beta: f64, pool: &SamplePool) -> Result<(f64, f64)> {
    if !matches!(spec.family, Family::Similarity { .. }) {
        return Err(Error::Usage(format!("m_beta needs a similarity model, got {}", spec.family.name())));
    }
    let (m, se) = m_beta_functional(pool, beta);
    if m + 3.0 * se <= 0.0 {
        return Err(Error::Consistency(format!("m_beta = {m:.6e} (se {se:.2e}) is not positive at beta = {beta}")));
    }
    Ok((m, se))
}
