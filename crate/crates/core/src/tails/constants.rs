//! Limiting constants of the tail asymptotics and the Goldie identity.
//!
//! The renewal normalizer in the denominators is `N l_beta`: the mean drift
//! of the tilted Markov random walk picks up one factor `N` from the branch
//! count, the same factor that turns `E[||C||^beta log ||C||]` into `m_beta`
//! for similarities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::estimators::{hill_estimate, MomentVerdict, ProbeResult};
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec_acc};
use crate::models::{ModelSpec, SamplePool, WeightSample};
use crate::spectral::{SphereGrid, SpectralSolution};
use crate::stats::{mean_se, median_of_means, quantile_sorted, MOM_BLOCKS};
use crate::wbp::Population;

/// Trapezoid nodes of the Goldie integral.
pub const GOLDIE_GRID_POINTS: usize = 200;
/// Percentiles bounding the trapezoid range.
pub const GOLDIE_RANGE: (f64, f64) = (0.01, 0.9999);
/// Tolerance on `beta_hat - 2` for the `beta = 2` formula.
pub const BETA2_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantMethod {
    ImplicitRenewalK,
    SigmaS,
    Beta2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub value: f64,
    pub se: f64,
    pub method: ConstantMethod,
    /// Unit direction `x`; `None` for the radial constant and `sigma(S)`.
    pub direction: Option<Vec<f64>>,
    pub inputs_hash: String,
    pub flags: Vec<String>,
}

fn inputs_hash(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn population_tag(pop: &Population) -> String {
    format!("pop:{}:{}:{}:{}", pop.spec_hash, pop.seed, pop.generation, pop.len())
}

fn pool_tag(pool: &SamplePool) -> String {
    format!("pool:{}:{}:{}", pool.spec_hash, pool.seed, pool.len())
}

fn solution_tag(sol: &SpectralSolution) -> String {
    format!(
        "sol:{}:{}:{}:{}:{}:{}",
        sol.s, sol.kappa, sol.meta.grid_d, sol.meta.grid_size, sol.meta.grid_seed, sol.meta.pool_seed
    )
}

fn check_inputs(spec: &ModelSpec, pop: &Population, pool: &SamplePool) -> Result<()> {
    let h = spec.hash();
    if pop.spec_hash != h {
        return Err(Error::Provenance("R samples were simulated for a different model".into()));
    }
    if pool.spec_hash != h {
        return Err(Error::Provenance("weight pool belongs to a different model".into()));
    }
    if pop.len() < spec.branches * MOM_BLOCKS {
        return Err(Error::Usage(format!("need at least {} R samples", spec.branches * MOM_BLOCKS)));
    }
    Ok(())
}

fn check_solution(spec: &ModelSpec, grid: &SphereGrid, sol: &SpectralSolution) -> Result<()> {
    if sol.meta.spec_hash != spec.hash() {
        return Err(Error::Provenance("spectral solution belongs to a different model".into()));
    }
    if sol.e.len() != grid.len() || sol.meta.grid_d != grid.d {
        return Err(Error::Provenance("spectral solution was computed on a different grid".into()));
    }
    Ok(())
}

/// Evaluates `f` on the paired draws `(C_1..C_N, Q; R_{jN+1}..R_{jN+N})`.
/// Draw `j` uses pool sample `j mod B` and its own block of `N` R samples,
/// and `f` receives `v_i = C_i R_i` and `Q`.
fn paired<F>(pop: &Population, pool: &SamplePool, f: F) -> Vec<f64>
where
    F: Fn(&[Vec<f64>], &[f64]) -> f64 + Sync,
{
    let n = pool.branches();
    let d = pop.d;
    let draws = pop.len() / n;
    (0..draws)
        .into_par_iter()
        .map_init(
            || vec![vec![0.0; d]; n],
            |v, j| {
                let w: &WeightSample = &pool.samples[j % pool.len()];
                for (i, vi) in v.iter_mut().enumerate() {
                    vi.fill(0.0);
                    mat_vec_acc(&w.c[i], pop.sample(j * n + i), vi);
                }
                f(v, w.q.as_slice())
            },
        )
        .collect()
}

/// Sums `|y (sum v_i + q)|^s - sum |y v_i|^s` over the nodes with weights.
fn projected_bracket(nodes: &[(Vec<f64>, f64)], v: &[Vec<f64>], q: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for (y, w) in nodes {
        let mut total = dot(y, q);
        let mut parts = 0.0;
        for vi in v {
            let p = dot(y, vi);
            total += p;
            parts += p.abs().powf(s);
        }
        acc += w * (total.abs().powf(s) - parts);
    }
    acc
}

fn radial_bracket(v: &[Vec<f64>], q: &[f64], s: f64) -> f64 {
    let mut total = q.to_vec();
    let mut parts = 0.0;
    for vi in v {
        for (t, x) in total.iter_mut().zip(vi) {
            *t += x;
        }
        parts += dot(vi, vi).sqrt().powf(s);
    }
    dot(&total, &total).sqrt().powf(s) - parts
}

fn mom(values: &[f64], what: &str) -> Result<(f64, f64)> {
    let (m, se) = median_of_means(values, MOM_BLOCKS);
    if !(m.is_finite() && se.is_finite()) {
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        return Err(Error::Estimation(format!("{what}: non-finite block means ({bad} non-finite draws)")));
    }
    Ok((m, se))
}

fn ratio_se(num: (f64, f64), den: (f64, f64), scale: f64) -> (f64, f64) {
    let value = scale * num.0 / den.0;
    let se = if num.0 == 0.0 {
        (scale * num.1 / den.0).abs()
    } else {
        value.abs() * ((num.1 / num.0).powi(2) + (den.1 / den.0).powi(2)).sqrt()
    };
    (value, se)
}

fn unit(x: &[f64]) -> Result<Vec<f64>> {
    let n = dot(x, x).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Usage("direction must be a nonzero finite vector".into()));
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// `lim t^beta P(xR > t) = e(x) / (2 beta N l_beta) int E[|y(sum C_i R_i + Q)|^beta - sum |y C_i R_i|^beta] nu(dy)`,
/// with the expectation by median-of-means over paired draws and the
/// integral by quadrature over the `nu`-weighted grid nodes.
pub fn constant_k(
    spec: &ModelSpec,
    grid: &SphereGrid,
    solution: &SpectralSolution,
    l_beta: (f64, f64),
    pop: &Population,
    pool: &SamplePool,
    directions: &[Vec<f64>],
) -> Result<Vec<ConstantEstimate>> {
    check_inputs(spec, pop, pool)?;
    check_solution(spec, grid, solution)?;
    if l_beta.0 <= 0.0 {
        return Err(Error::Usage(format!("l_beta must be positive, got {}", l_beta.0)));
    }
    let beta = solution.s;
    let nodes: Vec<(Vec<f64>, f64)> = solution
        .nu
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(g, w)| (grid.node(g).to_vec(), *w))
        .collect();
    let values = paired(pop, pool, |v, q| projected_bracket(&nodes, v, q, beta));
    let bracket = mom(&values, "renewal constant")?;
    let hash = inputs_hash(&[
        "implicit-renewal-k".into(),
        format!("{beta}"),
        format!("{}", l_beta.0),
        solution_tag(solution),
        population_tag(pop),
        pool_tag(pool),
    ]);
    let nf = spec.branches as f64;
    directions
        .iter()
        .map(|x| {
            let x = unit(x)?;
            if x.len() != grid.d {
                return Err(Error::Usage("direction has the wrong dimension".into()));
            }
            let e = solution.e[grid.nearest(&x)];
            let (value, se) = ratio_se(bracket, l_beta, e / (2.0 * beta * nf));
            Ok(ConstantEstimate {
                value,
                se,
                method: ConstantMethod::ImplicitRenewalK,
                direction: Some(x),
                inputs_hash: hash.clone(),
                flags: Vec::new(),
            })
        })
        .collect()
}

fn require_similarity(spec: &ModelSpec, what: &str) -> Result<()> {
    if !spec.is_similarity() {
        return Err(Error::Usage(format!("{what} needs a similarity model, got {}", spec.family.name())));
    }
    Ok(())
}

/// `E[|sum C_i R_i + Q|^beta - sum |C_i R_i|^beta]` by median-of-means.
pub fn radial_bracket_mean(spec: &ModelSpec, beta: f64, pop: &Population, pool: &SamplePool) -> Result<(f64, f64)> {
    check_inputs(spec, pop, pool)?;
    mom(&paired(pop, pool, |v, q| radial_bracket(v, q, beta)), "radial bracket")
}

/// Radial constant `lim t^beta P(|R| > t)` for similarities, where the
/// eigenfunction is constant: the radial bracket over `beta N l_beta`.
pub fn constant_k_radial(
    spec: &ModelSpec,
    beta: f64,
    l_beta: (f64, f64),
    pop: &Population,
    pool: &SamplePool,
) -> Result<ConstantEstimate> {
    require_similarity(spec, "the radial constant")?;
    if l_beta.0 <= 0.0 {
        return Err(Error::Usage(format!("l_beta must be positive, got {}", l_beta.0)));
    }
    let bracket = radial_bracket_mean(spec, beta, pop, pool)?;
    let (value, se) = ratio_se(bracket, l_beta, 1.0 / (beta * spec.branches as f64));
    Ok(ConstantEstimate {
        value,
        se,
        method: ConstantMethod::ImplicitRenewalK,
        direction: None,
        inputs_hash: inputs_hash(&[
            "radial-k".into(),
            format!("{beta}"),
            format!("{}", l_beta.0),
            population_tag(pop),
            pool_tag(pool),
        ]),
        flags: Vec::new(),
    })
}

/// Total mass of the angular part of the limit measure for similarities:
/// the radial bracket over `m_beta`.
pub fn sigma_s(
    spec: &ModelSpec,
    beta: f64,
    m_beta: (f64, f64),
    pop: &Population,
    pool: &SamplePool,
) -> Result<ConstantEstimate> {
    require_similarity(spec, "sigma(S)")?;
    if m_beta.0 <= 0.0 {
        return Err(Error::Usage(format!("m_beta must be positive, got {}", m_beta.0)));
    }
    let bracket = radial_bracket_mean(spec, beta, pop, pool)?;
    let (value, se) = ratio_se(bracket, m_beta, 1.0);
    Ok(ConstantEstimate {
        value,
        se,
        method: ConstantMethod::SigmaS,
        direction: None,
        inputs_hash: inputs_hash(&[
            "sigma-s".into(),
            format!("{beta}"),
            format!("{}", m_beta.0),
            population_tag(pop),
            pool_tag(pool),
        ]),
        flags: Vec::new(),
    })
}

/// Constant for `beta = 2` and a centred solution:
/// `e(x) / (4 N l_2) int E(yQ)^2 nu(dy)`.
///
/// A vanishing `Q` returns zeros flagged as degenerate.
pub fn beta2_constant(
    spec: &ModelSpec,
    grid: &SphereGrid,
    solution: &SpectralSolution,
    l2: (f64, f64),
    beta_hat: f64,
    pool: &SamplePool,
    directions: &[Vec<f64>],
) -> Result<Vec<ConstantEstimate>> {
    check_solution(spec, grid, solution)?;
    if (beta_hat - 2.0).abs() > BETA2_TOL {
        return Err(Error::Usage(format!("beta = {beta_hat} is not 2 within {BETA2_TOL}")));
    }
    if (solution.s - 2.0).abs() > 1e-12 {
        return Err(Error::Usage(format!("spectral solution is at s = {}, not 2", solution.s)));
    }
    let d = grid.d;
    for k in 0..d {
        let q: Vec<f64> = pool.samples.iter().map(|w| w.q[k]).collect();
        let (m, se) = mean_se(&q);
        if m.abs() > 3.0 * se && m != 0.0 {
            return Err(Error::Usage(format!("E Q is not zero (component {k}: {m} with se {se})")));
        }
    }
    let hash = inputs_hash(&["beta2".into(), format!("{}", l2.0), solution_tag(solution), pool_tag(pool)]);
    let degenerate = spec.q.is_zero() || pool.samples.iter().all(|w| w.q.iter().all(|v| *v == 0.0));
    let quad: Vec<f64> = pool
        .samples
        .iter()
        .map(|w| {
            solution
                .nu
                .iter()
                .enumerate()
                .map(|(g, nu)| nu * dot(grid.node(g), w.q.as_slice()).powi(2))
                .sum()
        })
        .collect();
    let integral = mean_se(&quad);
    directions
        .iter()
        .map(|x| {
            let x = unit(x)?;
            let mut est = ConstantEstimate {
                value: 0.0,
                se: 0.0,
                method: ConstantMethod::Beta2,
                direction: Some(x.clone()),
                inputs_hash: hash.clone(),
                flags: Vec::new(),
            };
            if degenerate {
                est.flags.push("degenerate: Q vanishes, so Var Q > 0 fails".into());
                return Ok(est);
            }
            if l2.0 <= 0.0 {
                return Err(Error::Usage(format!("l_2 must be positive, got {}", l2.0)));
            }
            let e = solution.e[grid.nearest(&x)];
            (est.value, est.se) = ratio_se(integral, l2, e / (4.0 * spec.branches as f64));
            Ok(est)
        })
        .collect()
}

/// Flags a conflict between a significantly positive constant and a probe
/// that reads the `beta`-th moment as finite.
pub fn positivity_gate(k: &ConstantEstimate, probe: &ProbeResult) -> Option<String> {
    if k.value > 3.0 * k.se && probe.verdict == MomentVerdict::Convergent {
        Some(format!(
            "constant {:.4e} is positive at 3 SE but the moment probe at s = {} reads convergent",
            k.value, probe.s
        ))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldieValues {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub combined_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldieReport {
    pub s: f64,
    pub directions: usize,
    pub values: Option<GoldieValues>,
    /// Reason the check was not run.
    pub skipped: Option<String>,
    pub flags: Vec<String>,
}

/// Directions `e_1, ..., e_d` and the normalized diagonal.
pub fn goldie_directions(d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let mut v = vec![0.0; d];
            v[k] = 1.0;
            v
        })
        .collect();
    if d > 1 {
        out.push(vec![1.0 / (d as f64).sqrt(); d]);
    }
    out
}

/// `s int_0^inf t^(s-1) P(X > t) dt` from a sorted sample, split into the
/// exact empirical part below `grid[0]`, a trapezoid in `log t` over `grid`
/// and a Pareto extrapolation above the last node. Returns the value and
/// the SE of the extrapolated part.
fn tail_integral(asc: &[f64], s: f64, grid: &[f64], flags: &mut Vec<String>) -> (f64, f64) {
    let n = asc.len() as f64;
    let lo = grid[0];
    let mut total = asc.iter().map(|x| x.min(lo).powf(s)).sum::<f64>() / n;
    let surv = |t: f64| (asc.len() - asc.partition_point(|x| *x <= t)) as f64 / n;
    let f = |t: f64| s * t.powf(s) * surv(t);
    let mut prev = f(grid[0]);
    for w in grid.windows(2) {
        let next = f(w[1]);
        total += 0.5 * (prev + next) * (w[1] / w[0]).ln();
        prev = next;
    }
    let top = *grid.last().unwrap();
    let exceed: Vec<f64> = asc.iter().copied().filter(|x| *x > top).collect();
    if exceed.is_empty() {
        return (total, 0.0);
    }
    let mut with_top = exceed.clone();
    with_top.push(top);
    match hill_estimate(&with_top, exceed.len()) {
        Ok(h) if h.index > s => {
            let p = exceed.len() as f64 / n;
            let c = p * top.powf(s) * s / (h.index - s);
            (total + c, c * h.se / (h.index - s))
        }
        Ok(h) => {
            flags.push(format!("tail index {:.3} above the grid does not exceed s; extrapolation skipped", h.index));
            (total, 0.0)
        }
        Err(_) => {
            flags.push("too few exceedances above the grid for a tail extrapolation".into());
            (total, 0.0)
        }
    }
}

/// Compares both sides of
/// `E[|sum yC_iR_i + yQ|^s - sum |yC_iR_i|^s] = s int t^(s-1) (P(|yR| > t) - N P(|yCR| > t)) dt`,
/// averaged over [`goldie_directions`]. The left side is a median-of-means
/// over paired draws; the right side integrates the empirical survival
/// functions of `|yR|` (all samples) and `|y C_i R_i|` (paired draws), with
/// block SEs over [`MOM_BLOCKS`] contiguous blocks.
///
/// Orders outside `(alpha, beta)` are skipped.
pub fn goldie_identity_residual(
    spec: &ModelSpec,
    s: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    pop: &Population,
    pool: &SamplePool,
) -> Result<GoldieReport> {
    let dirs = goldie_directions(spec.d);
    let mut report = GoldieReport { s, directions: dirs.len(), values: None, skipped: None, flags: Vec::new() };
    if alpha.is_some_and(|a| s <= a) || beta.is_some_and(|b| s >= b) {
        report.skipped = Some(format!(
            "s = {s} is outside (alpha, beta) = ({}, {}); both sides need not be finite",
            alpha.map_or("-".into(), |a| format!("{a:.4}")),
            beta.map_or("-".into(), |b| format!("{b:.4}")),
        ));
        return Ok(report);
    }
    check_inputs(spec, pop, pool)?;
    let nd = dirs.len() as f64;
    let unit_dirs: Vec<(Vec<f64>, f64)> = dirs.iter().map(|y| (y.clone(), 1.0 / nd)).collect();
    let lhs_values = paired(pop, pool, |v, q| projected_bracket(&unit_dirs, v, q, s));
    let (lhs, lhs_se) = mom(&lhs_values, "Goldie left side")?;

    let n = spec.branches;
    let draws = pop.len() / n;
    let used = draws * n;
    let mut rhs_total = 0.0;
    let mut block_totals = vec![0.0; MOM_BLOCKS];
    let mut tail_var = 0.0;
    for y in &dirs {
        let x_abs: Vec<f64> = pop.rows().take(used).map(|r| dot(r, y).abs()).collect();
        let cr_abs: Vec<f64> = (0..draws)
            .into_par_iter()
            .flat_map_iter(|j| {
                let w = &pool.samples[j % pool.len()];
                (0..n).map(move |i| {
                    let mut vi = vec![0.0; pop.d];
                    mat_vec_acc(&w.c[i], pop.sample(j * n + i), &mut vi);
                    dot(&vi, y).abs()
                })
            })
            .collect();
        let mut sx = x_abs.clone();
        sx.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&sx, GOLDIE_RANGE.0).max(f64::MIN_POSITIVE);
        let hi = quantile_sorted(&sx, GOLDIE_RANGE.1);
        if !(hi > lo) {
            return Err(Error::Estimation(format!("t-grid [{lo}, {hi}] does not cover the empirical support")));
        }
        let grid: Vec<f64> = (0..GOLDIE_GRID_POINTS)
            .map(|i| lo * (hi / lo).powf(i as f64 / (GOLDIE_GRID_POINTS - 1) as f64))
            .collect();
        let side = |xs: &[f64], flags: &mut Vec<String>| -> (f64, f64) {
            let mut a = xs.to_vec();
            a.sort_by(f64::total_cmp);
            tail_integral(&a, s, &grid, flags)
        };
        let (ix, vx) = side(&x_abs, &mut report.flags);
        let (iy, vy) = side(&cr_abs, &mut report.flags);
        rhs_total += (ix - n as f64 * iy) / nd;
        tail_var += (vx * vx + (n as f64 * vy).powi(2)) / (nd * nd);
        for (b, total) in block_totals.iter_mut().enumerate() {
            let (lo_d, hi_d) = (b * draws / MOM_BLOCKS, (b + 1) * draws / MOM_BLOCKS);
            let mut scratch = Vec::new();
            let (bx, _) = side(&x_abs[lo_d * n..hi_d * n], &mut scratch);
            let (by, _) = side(&cr_abs[lo_d * n..hi_d * n], &mut scratch);
            *total += (bx - n as f64 * by) / nd;
        }
    }
    report.flags.sort();
    report.flags.dedup();
    let (_, block_se) = mean_se(&block_totals);
    let rhs_se = (block_se * block_se + tail_var).sqrt();
    report.values = Some(GoldieValues {
        lhs,
        lhs_se,
        rhs: rhs_total,
        rhs_se,
        combined_se: (lhs_se * lhs_se + rhs_se * rhs_se).sqrt(),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{compute_l_beta, power_iterate, OperatorBuilder, DEFAULT_TOL};

    fn spec(text: &str) -> ModelSpec {
        ModelSpec::parse(text).unwrap()
    }

    const HALF: &str = "family=similarity\nd=1\nt.dist=const\nt.c=0.5\nrotation=identity\nq.dist=const\nq.mean=1\n";

    #[test]
    fn radial_constants_on_constant_draws() {
        // every draw is (0.5, 0.5, Q = 1) against R = 2, so the bracket is 3^2 - 2
        let s = spec(HALF);
        let pool = SamplePool::generate(&s, 0, 10);
        let pop = Population::constant(&s, 256, &[2.0], 0);
        let k = constant_k_radial(&s, 2.0, (0.5, 0.0), &pop, &pool).unwrap();
        assert!((k.value - 7.0 / (2.0 * 2.0 * 0.5)).abs() < 1e-12, "{k:?}");
        let sig = sigma_s(&s, 2.0, (2.0, 0.0), &pop, &pool).unwrap();
        assert!((sig.value - 3.5).abs() < 1e-12);
        assert_eq!(sig.method, ConstantMethod::SigmaS);
        assert_ne!(k.inputs_hash, sig.inputs_hash);
    }

    #[test]
    fn foreign_population_is_rejected() {
        let s = spec(HALF);
        let other = spec("family=similarity\nd=1\nt.dist=const\nt.c=0.4\nrotation=identity\n");
        let pool = SamplePool::generate(&s, 0, 10);
        let pop = Population::constant(&other, 256, &[2.0], 0);
        assert!(matches!(constant_k_radial(&s, 2.0, (0.5, 0.0), &pop, &pool), Err(Error::Provenance(_))));
    }

    #[test]
    fn exponential_moment_by_tail_integral() {
        let n = 100_000;
        let asc: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        for (s, exact) in [(1.0, 1.0), (2.0, 2.0), (0.5, 0.886_226_925)] {
            let lo = quantile_sorted(&asc, GOLDIE_RANGE.0);
            let hi = quantile_sorted(&asc, GOLDIE_RANGE.1);
            let grid: Vec<f64> =
                (0..GOLDIE_GRID_POINTS).map(|i| lo * (hi / lo).powf(i as f64 / (GOLDIE_GRID_POINTS - 1) as f64)).collect();
            let (v, _) = tail_integral(&asc, s, &grid, &mut Vec::new());
            assert!((v - exact).abs() < 2e-3 * exact, "s={s}: {v}");
        }
    }

    #[test]
    fn goldie_skips_outside_the_window() {
        let s = spec(HALF);
        let pool = SamplePool::generate(&s, 0, 10);
        let pop = Population::constant(&s, 256, &[2.0], 0);
        let r = goldie_identity_residual(&s, 3.0, Some(1.0), Some(2.5), &pop, &pool).unwrap();
        assert!(r.values.is_none() && r.skipped.is_some());
    }

    #[test]
    fn goldie_right_side_matches_sample_moments() {
        let s = spec("family=similarity\nd=1\nt.dist=const\nt.c=0.25\nrotation=identity\nq.dist=const\nq.mean=1\n");
        let pool = SamplePool::generate(&s, 0, 10);
        let pop = Population::gaussian(&s, 1 << 16, 5);
        let order = 1.5;
        let r = goldie_identity_residual(&s, order, None, None, &pop, &pool).unwrap();
        let v = r.values.unwrap();
        let m: f64 = pop.rows().map(|x| x[0].abs().powf(order)).sum::<f64>() / pop.len() as f64;
        let exact_rhs = m - 2.0 * 0.25f64.powf(order) * m;
        assert!((v.rhs - exact_rhs).abs() < 1e-3 * exact_rhs, "{v:?} vs {exact_rhs}");
        let lhs: f64 = (0..pop.len() / 2)
            .map(|j| {
                let (a, b) = (pop.sample(2 * j)[0] / 4.0, pop.sample(2 * j + 1)[0] / 4.0);
                (a + b + 1.0).abs().powf(order) - a.abs().powf(order) - b.abs().powf(order)
            })
            .sum::<f64>()
            / (pop.len() / 2) as f64;
        assert!((v.lhs - lhs).abs() < 3.0 * v.lhs_se, "{v:?} vs {lhs}");
    }

    #[test]
    fn goldie_rejects_point_masses() {
        let s = spec(HALF);
        let pool = SamplePool::generate(&s, 0, 10);
        let pop = Population::constant(&s, 256, &[2.0], 0);
        assert!(matches!(goldie_identity_residual(&s, 1.5, None, None, &pop, &pool), Err(Error::Estimation(_))));
    }

    #[test]
    fn beta2_matches_isotropic_closed_form() {
        // isotropic similarities: e = 1, nu uniform, E(yQ)^2 = scale^2 for all y
        let s = spec("family=similarity\nd=2\nt.mu=-0.52\nt.sigma=0.83\nq.dist=gaussian\nq.mean=0,0\nq.scale=1.5\n");
        let grid = SphereGrid::new(2, 32, 0).unwrap();
        let pool = SamplePool::generate(&s, 3, 40_000);
        let sol = power_iterate(&OperatorBuilder::new(&grid, &pool).build(2.0), DEFAULT_TOL, 1000).unwrap();
        let l2 = compute_l_beta(&grid, &sol, &pool).unwrap();
        let est = beta2_constant(&s, &grid, &sol, l2, 2.01, &pool, &[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        for k in &est {
            let oracle = 1.5 * 1.5 / (4.0 * 2.0 * l2.0);
            assert!((k.value - oracle).abs() < 0.05 * oracle, "{k:?} vs {oracle}");
        }
        assert!(beta2_constant(&s, &grid, &sol, l2, 2.2, &pool, &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn beta2_without_q_is_flagged_degenerate() {
        let s = spec("family=similarity\nd=2\nt.mu=-0.52\nt.sigma=0.83\n");
        let grid = SphereGrid::new(2, 16, 0).unwrap();
        let pool = SamplePool::generate(&s, 3, 2_000);
        let sol = power_iterate(&OperatorBuilder::new(&grid, &pool).build(2.0), DEFAULT_TOL, 1000).unwrap();
        let est = beta2_constant(&s, &grid, &sol, (0.3, 0.01), 2.0, &pool, &[vec![1.0, 1.0]]).unwrap();
        assert_eq!(est[0].value, 0.0);
        assert!(est[0].flags[0].starts_with("degenerate"));
    }
}
