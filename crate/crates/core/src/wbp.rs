//! Weighted branching process samplers for the fixed point `R`.
//!
//! Two routes are provided: population dynamics, which iterates the
//! smoothing transform on an empirical particle approximation, and the
//! truncated backward recursion over the N-ary tree with leaves pinned at a
//! constant vector.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec_acc, op_norm};
use crate::models::{ModelSpec, WeightSample};
use crate::rng::{chunk_count, substream, tag_with, CHUNK, TAG_INIT, TAG_PATH, TAG_PERMUTE, TAG_SWEEP, TAG_TREE};
use crate::stats::{ks_critical, ks_two_sample, NeumaierSum};

/// Components above this magnitude are counted as overflow-prone but kept.
pub const HUGE: f64 = 1e100;

/// Sweeps run before any tail statistic is read off.
pub const DEFAULT_BURN_IN: u64 = 50;

/// Node budget per sample for the truncated recursion.
pub const DEFAULT_TREE_BUDGET: u64 = 1 << 20;

/// Particle approximation of the law of `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// Row-major `M x d`.
    pub data: Vec<f64>,
    pub d: usize,
    pub generation: u64,
    pub seed: u64,
    pub spec_hash: String,
    /// Samples with a component above [`HUGE`] in magnitude.
    pub flagged: usize,
}

impl Population {
    pub fn from_data(spec: &ModelSpec, data: Vec<f64>, seed: u64) -> Self {
        assert_eq!(data.len() % spec.d, 0);
        Self { data, d: spec.d, generation: 0, seed, spec_hash: spec.hash(), flagged: 0 }
    }

    /// `m` copies of `value`.
    pub fn constant(spec: &ModelSpec, m: usize, value: &[f64], seed: u64) -> Self {
        assert_eq!(value.len(), spec.d);
        let data = value.iter().copied().cycle().take(m * spec.d).collect();
        Self::from_data(spec, data, seed)
    }

    /// `m` i.i.d. standard Gaussian vectors.
    pub fn gaussian(spec: &ModelSpec, m: usize, seed: u64) -> Self {
        let d = spec.d;
        let chunks: Vec<Vec<f64>> = (0..chunk_count(m))
            .into_par_iter()
            .map(|ci| {
                let mut rng = substream(seed, TAG_INIT, ci as u64);
                let n = (CHUNK).min(m - ci * CHUNK);
                (0..n * d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
            })
            .collect();
        Self::from_data(spec, chunks.concat(), seed)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Samples `range` as a population with the same provenance.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Population {
        Population {
            data: self.data[range.start * self.d..range.end * self.d].to_vec(),
            flagged: 0,
            spec_hash: self.spec_hash.clone(),
            ..*self
        }
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    /// Projections `x R` for every sample.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, x)).collect()
    }

    /// Euclidean norms `|R|`.
    pub fn radial(&self) -> Vec<f64> {
        self.rows().map(|r| dot(r, r).sqrt()).collect()
    }

    pub fn moments(&self) -> PopulationMoments {
        PopulationMoments::of(&self.data, self.d)
    }
}

/// Mean and covariance of a population with standard errors, accumulated
/// with compensated sums.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub mean: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Standard error of every covariance entry.
    pub cov_se: DMatrix<f64>,
}

impl PopulationMoments {
    pub fn of(data: &[f64], d: usize) -> Self {
        let m = data.len() / d;
        let mf = m as f64;
        let mut s1 = vec![NeumaierSum::new(); d];
        for row in data.chunks_exact(d) {
            for (acc, v) in s1.iter_mut().zip(row) {
                acc.add(*v);
            }
        }
        let mean: Vec<f64> = s1.iter().map(|s| s.value() / mf).collect();
        let mut s2 = vec![NeumaierSum::new(); d * d];
        let mut s4 = vec![NeumaierSum::new(); d * d];
        let mut sc = vec![NeumaierSum::new(); d];
        for row in data.chunks_exact(d) {
            for i in 0..d {
                let ci = row[i] - mean[i];
                sc[i].add(ci * ci);
                for j in 0..d {
                    let p = ci * (row[j] - mean[j]);
                    s2[i * d + j].add(p);
                    s4[i * d + j].add(p * p);
                }
            }
        }
        let cov = DMatrix::from_fn(d, d, |i, j| s2[i * d + j].value() / mf);
        let cov_se = DMatrix::from_fn(d, d, |i, j| {
            let c = cov[(i, j)];
            ((s4[i * d + j].value() / mf - c * c).max(0.0) / mf).sqrt()
        });
        let mean_se = DVector::from_fn(d, |i, _| (sc[i].value() / mf / mf).sqrt());
        Self { mean: DVector::from_vec(mean), mean_se, cov, cov_se }
    }

    /// Frobenius distance of the covariance to `sigma` and its standard error.
    pub fn covariance_residual(&self, sigma: &DMatrix<f64>) -> (f64, f64) {
        let r = (&self.cov - sigma).norm();
        let se = self.cov_se.iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, se)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Apply a fresh uniform permutation to the branch order of every weight
    /// draw. Uses its own substream, so every other draw is unchanged.
    pub permute_branches: bool,
}

/// One sweep of the smoothing transform on the empirical law:
/// every sample becomes `sum_i C_i X_{j_i} + Q` with fresh weights and
/// indices `j_i` drawn uniformly with replacement.
pub fn population_iterate(pop: &Population, spec: &ModelSpec) -> Result<Population> {
    population_iterate_with(pop, spec, SweepOptions::default())
}

pub fn population_iterate_with(pop: &Population, spec: &ModelSpec, opts: SweepOptions) -> Result<Population> {
    assert!(!pop.is_empty(), "empty population");
    assert_eq!(pop.d, spec.d, "dimension mismatch");
    let d = pop.d;
    let m = pop.len();
    let n = spec.branches;
    let tag = tag_with(TAG_SWEEP, pop.generation);
    let ptag = tag_with(TAG_PERMUTE, pop.generation);
    let mut out = vec![0.0; m * d];
    let stats: Vec<(usize, usize)> = out
        .par_chunks_mut(CHUNK * d)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut rng = substream(pop.seed, tag, ci as u64);
            let mut prng = substream(pop.seed, ptag, ci as u64);
            let mut w = WeightSample::zeros(d, n);
            let mut order: Vec<usize> = (0..n).collect();
            let (mut flagged, mut bad) = (0, 0);
            for row in chunk.chunks_exact_mut(d) {
                spec.sample_into(&mut rng, &mut w);
                if opts.permute_branches {
                    order.shuffle(&mut prng);
                }
                row.copy_from_slice(w.q.as_slice());
                for &i in &order {
                    let j = rng.random_range(0..m);
                    mat_vec_acc(&w.c[i], pop.sample(j), row);
                }
                if row.iter().any(|v| !v.is_finite()) {
                    bad += 1;
                } else if row.iter().any(|v| v.abs() > HUGE) {
                    flagged += 1;
                }
            }
            (flagged, bad)
        })
        .collect();
    let flagged = stats.iter().map(|s| s.0).sum();
    let bad: usize = stats.iter().map(|s| s.1).sum();
    let generation = pop.generation + 1;
    if bad > 0 {
        return Err(Error::NonFinite { generation, count: bad });
    }
    Ok(Population { data: out, d, generation, seed: pop.seed, spec_hash: pop.spec_hash.clone(), flagged })
}

/// Runs `sweeps` sweeps, calling `observe` after each.
pub fn run_population<F>(spec: &ModelSpec, mut pop: Population, sweeps: u64, mut observe: F) -> Result<Population>
where
    F: FnMut(&Population),
{
    for _ in 0..sweeps {
        pop = population_iterate(spec_check(spec, &pop)?, spec)?;
        observe(&pop);
    }
    Ok(pop)
}

fn spec_check<'a>(spec: &ModelSpec, pop: &'a Population) -> Result<&'a Population> {
    if pop.spec_hash != spec.hash() {
        return Err(Error::Provenance("population was built for a different model".into()));
    }
    Ok(pop)
}

/// Exact evaluation of the weighted branching process truncated at `depth`:
/// `sum_{|v| < n} L(v) Q(v) + sum_{|v| = n} L(v) leaf`.
///
/// Returns `count` samples as a row-major `count x d` array.
pub fn sample_r_recursive(
    spec: &ModelSpec,
    depth: u32,
    count: usize,
    seed: u64,
    leaf: &[f64],
    budget: u64,
) -> Result<Vec<f64>> {
    let d = spec.d;
    assert_eq!(leaf.len(), d);
    let leaves = (spec.branches as u64).checked_pow(depth);
    match leaves {
        Some(l) if l <= budget => {}
        _ => {
            return Err(Error::Config(format!(
                "depth {depth} with N = {} exceeds the budget of {budget} nodes per sample",
                spec.branches
            )))
        }
    }
    let chunks: Vec<Vec<f64>> = (0..chunk_count(count))
        .into_par_iter()
        .map(|ci| {
            let mut rng = substream(seed, TAG_TREE, ci as u64);
            let rows = CHUNK.min(count - ci * CHUNK);
            let mut weights: Vec<WeightSample> =
                (0..depth).map(|_| WeightSample::zeros(d, spec.branches)).collect();
            let mut bufs: Vec<Vec<f64>> = (0..depth).map(|_| vec![0.0; d]).collect();
            let mut out = vec![0.0; rows * d];
            for row in out.chunks_exact_mut(d) {
                eval_tree(spec, &mut rng, leaf, &mut weights, &mut bufs, row);
            }
            out
        })
        .collect();
    Ok(chunks.concat())
}

fn eval_tree<R: Rng>(
    spec: &ModelSpec,
    rng: &mut R,
    leaf: &[f64],
    weights: &mut [WeightSample],
    bufs: &mut [Vec<f64>],
    out: &mut [f64],
) {
    let Some((w, rest_w)) = weights.split_last_mut() else {
        out.copy_from_slice(leaf);
        return;
    };
    let (buf, rest_b) = bufs.split_last_mut().expect("one buffer per level");
    spec.sample_into(rng, w);
    out.copy_from_slice(w.q.as_slice());
    for i in 0..spec.branches {
        eval_tree(spec, rng, leaf, rest_w, rest_b, buf);
        mat_vec_acc(&w.c[i], buf, out);
    }
}

/// `Pi_n = C^(1) ... C^(n)` for i.i.d. copies of `C = C_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathProduct {
    pub n: usize,
    pub matrix: DMatrix<f64>,
    /// `log ||Pi_n||`, accumulated with renormalization so that it stays
    /// finite even when `matrix` over- or underflows.
    pub log_norm: f64,
}

pub fn sample_path_product<R: Rng + ?Sized>(spec: &ModelSpec, n: usize, rng: &mut R) -> PathProduct {
    let d = spec.d;
    let mut w = WeightSample::zeros(d, spec.branches);
    let mut scaled = DMatrix::<f64>::identity(d, d);
    let mut log_scale = 0.0;
    for _ in 0..n {
        spec.sample_into(rng, &mut w);
        let i = rng.random_range(0..spec.branches);
        scaled = &scaled * &w.c[i];
        let s = op_norm(&scaled);
        if s == 0.0 {
            return PathProduct { n, matrix: DMatrix::zeros(d, d), log_norm: f64::NEG_INFINITY };
        }
        scaled /= s;
        log_scale += s.ln();
    }
    PathProduct { n, matrix: scaled * log_scale.exp(), log_norm: log_scale }
}

/// Log-norms `log ||Pi_k||` of `count` independent paths for every length
/// `k = 1..=n`, stored as `log_norms[k - 1][path]`.
#[derive(Debug, Clone)]
pub struct PathPool {
    pub seed: u64,
    pub log_norms: Vec<Vec<f64>>,
}

impl PathPool {
    pub fn generate(spec: &ModelSpec, n: usize, count: usize, seed: u64) -> Self {
        let d = spec.d;
        let chunks: Vec<Vec<Vec<f64>>> = (0..chunk_count(count))
            .into_par_iter()
            .map(|ci| {
                let mut rng = substream(seed, TAG_PATH, ci as u64);
                let rows = CHUNK.min(count - ci * CHUNK);
                let mut w = WeightSample::zeros(d, spec.branches);
                let mut per_len = vec![Vec::with_capacity(rows); n];
                for _ in 0..rows {
                    let mut scaled = DMatrix::<f64>::identity(d, d);
                    let mut log_scale = 0.0;
                    for lens in per_len.iter_mut() {
                        spec.sample_into(&mut rng, &mut w);
                        let i = rng.random_range(0..spec.branches);
                        scaled = &scaled * &w.c[i];
                        let s = op_norm(&scaled);
                        if s == 0.0 {
                            log_scale = f64::NEG_INFINITY;
                        } else {
                            scaled /= s;
                            log_scale += s.ln();
                        }
                        lens.push(log_scale);
                    }
                }
                per_len
            })
            .collect();
        let mut log_norms = vec![Vec::with_capacity(count); n];
        for chunk in chunks {
            for (k, v) in chunk.into_iter().enumerate() {
                log_norms[k].extend(v);
            }
        }
        Self { seed, log_norms }
    }

    pub fn max_len(&self) -> usize {
        self.log_norms.len()
    }

    pub fn count(&self) -> usize {
        self.log_norms.first().map_or(0, |v| v.len())
    }

    /// `log ||Pi_n||` over all paths.
    pub fn at(&self, n: usize) -> &[f64] {
        &self.log_norms[n - 1]
    }
}

/// Result of the permutation-invariance check.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationReport {
    pub distance: f64,
    /// 99% quantile of the two-sample KS statistic under the null.
    pub threshold: f64,
    pub pass: bool,
}

/// Runs population dynamics twice from the same start and seeds, once with
/// the weight order permuted uniformly at random per draw, and compares the
/// laws of the projection `x R` with a two-sample KS test.
pub fn permutation_check(spec: &ModelSpec, m: usize, sweeps: u64, seed: u64, x: &[f64]) -> Result<PermutationReport> {
    if m < 1000 {
        return Err(Error::Usage("permutation check needs at least 1000 samples".into()));
    }
    let start = Population::gaussian(spec, m, seed);
    let mut plain = start.clone();
    let mut permuted = start;
    for _ in 0..sweeps {
        plain = population_iterate(&plain, spec)?;
        permuted = population_iterate_with(&permuted, spec, SweepOptions { permute_branches: true })?;
    }
    let distance = ks_two_sample(&plain.project(x), &permuted.project(x));
    let threshold = ks_critical(0.01, m, m);
    Ok(PermutationReport { distance, threshold, pass: distance <= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{solve_eigenvector, SamplePool};

    fn spec(text: &str) -> ModelSpec {
        ModelSpec::parse(text).unwrap()
    }

    #[test]
    fn deterministic_fixed_point_is_preserved() {
        // sum_i C_i = diag(1, 0.6) fixes r = (1, 0)
        let s = spec("family=diagonal\nd=2\nN=2\ndiag=0.5,0.3\n");
        let pop = Population::constant(&s, 64, &[1.0, 0.0], 9);
        let next = population_iterate(&pop, &s).unwrap();
        assert_eq!(next.data, pop.data);
        assert_eq!(next.generation, 1);
    }

    #[test]
    fn diagonal_iteration_matches_closed_form() {
        let s = spec("family=diagonal\nd=2\nN=2\n");
        let mut pop = Population::constant(&s, 10, &[1.0, 1.0], 1);
        // oracle: the deterministic linear map x -> 2 diag(2^-1/3, 2^-1/2) x
        let (a, b) = (2.0 * 2f64.powf(-1.0 / 3.0), 2.0 * 2f64.powf(-0.5));
        let mut expected = [1.0f64, 1.0];
        for _ in 0..12 {
            pop = population_iterate(&pop, &s).unwrap();
            expected = [expected[0] * a, expected[1] * b];
            for row in pop.rows() {
                assert!((row[0] / expected[0] - 1.0).abs() < 1e-13);
                assert!((row[1] / expected[1] - 1.0).abs() < 1e-13);
            }
        }
        assert!((expected[0] - 2f64.powf(8.0)).abs() < 1e-9);
        assert!((expected[1] - 2f64.powf(6.0)).abs() < 1e-9);
    }

    #[test]
    fn sweeps_are_reproducible() {
        let s = spec("family=maxwell\nd=3\n");
        let pop = Population::gaussian(&s, CHUNK + 100, 5);
        let a = population_iterate(&pop, &s).unwrap();
        let b = population_iterate(&pop, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn maxwell_population_keeps_identity_covariance() {
        let s = spec("family=maxwell\nd=3\nu.sigma=0.5\n");
        let mut pop = Population::gaussian(&s, 40_000, 17);
        let id = DMatrix::identity(3, 3);
        // the trace direction of the covariance map is neutral, so the
        // per-sweep sampling noise accumulates as a random walk
        let mut var_acc = 0.0;
        for _ in 0..20 {
            pop = population_iterate(&pop, &s).unwrap();
            let (r, se) = pop.moments().covariance_residual(&id);
            var_acc += se * se;
            assert!(r <= 3.0 * var_acc.sqrt(), "generation {}: {r} vs se {}", pop.generation, var_acc.sqrt());
        }
    }

    #[test]
    fn mean_is_preserved_at_eigenvalue_solution() {
        let s = spec("family=general\nd=2\nc.scale=0.3\nc.diag=0.2\nq.dist=gaussian\nq.mean=1,-0.5\nq.scale=0.5\n");
        let pool = SamplePool::generate(&s, 1, 200_000);
        let r = solve_eigenvector(&pool).vector().unwrap().clone();
        // exact solution: (Id - 0.4 Id) r = E Q
        assert!((r[0] - 1.0 / 0.6).abs() < 0.02 && (r[1] + 0.5 / 0.6).abs() < 0.02, "{r}");
        let exact = [1.0 / 0.6, -0.5 / 0.6];
        let mut pop = Population::constant(&s, 20_000, &exact, 3);
        let mut var_acc = [0.0; 2];
        for _ in 0..50 {
            pop = population_iterate(&pop, &s).unwrap();
            let mom = pop.moments();
            for k in 0..2 {
                var_acc[k] += mom.mean_se[k] * mom.mean_se[k];
                let drift = (mom.mean[k] - exact[k]).abs();
                assert!(drift <= 3.0 * var_acc[k].sqrt(), "gen {} comp {k}: {drift}", pop.generation);
            }
        }
    }

    #[test]
    fn non_finite_values_abort() {
        let s = spec("family=diagonal\nd=1\nN=2\ndiag=1e200\n");
        let pop = Population::constant(&s, 8, &[1e200], 0);
        assert!(matches!(population_iterate(&pop, &s), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn huge_values_are_flagged_not_dropped() {
        let s = spec("family=diagonal\nd=1\nN=2\ndiag=1e60\n");
        let pop = Population::constant(&s, 8, &[1e60], 0);
        let next = population_iterate(&pop, &s).unwrap();
        assert_eq!(next.flagged, 8);
    }

    #[test]
    fn empty_tree_returns_leaf() {
        let s = spec("family=similarity\nd=2\nq.dist=gaussian\n");
        let out = sample_r_recursive(&s, 0, 5, 1, &[0.5, -1.0], DEFAULT_TREE_BUDGET).unwrap();
        for row in out.chunks_exact(2) {
            assert_eq!(row, [0.5, -1.0]);
        }
    }

    #[test]
    fn homogeneous_zero_tree_is_zero() {
        let s = spec("family=general\nd=3\n");
        for depth in [1, 4, 7] {
            let out = sample_r_recursive(&s, depth, 50, 2, &[0.0; 3], DEFAULT_TREE_BUDGET).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tree_budget_is_enforced() {
        let s = spec("family=general\nd=2\nN=3\n");
        assert!(matches!(sample_r_recursive(&s, 13, 1, 0, &[0.0; 2], DEFAULT_TREE_BUDGET), Err(Error::Config(_))));
    }

    #[test]
    fn one_level_tree_matches_hand_evaluation() {
        let s = spec("family=diagonal\nd=2\nN=3\ndiag=0.5,2\nq.dist=const\nq.mean=1,1\n");
        let out = sample_r_recursive(&s, 2, 3, 0, &[1.0, 1.0], DEFAULT_TREE_BUDGET).unwrap();
        // level 1: Q + 3 C leaf = (2.5, 7); level 2: Q + 3 C (2.5, 7) = (4.75, 43)
        assert_eq!(&out[..2], &[4.75, 43.0]);
    }

    #[test]
    fn empty_path_is_identity() {
        let s = spec("family=general\nd=3\n");
        let p = sample_path_product(&s, 0, &mut substream(0, 0, 0));
        assert_eq!(p.matrix, DMatrix::identity(3, 3));
        assert_eq!(p.log_norm, 0.0);
    }

    #[test]
    fn diagonal_path_norm() {
        let s = spec("family=diagonal\nd=2\nN=2\n");
        for n in [1, 5, 40] {
            let p = sample_path_product(&s, n, &mut substream(0, 0, n as u64));
            let nf = n as f64;
            assert!((p.log_norm + nf / 3.0 * 2f64.ln()).abs() < 1e-12);
            assert!((p.matrix[(0, 0)] / 2f64.powf(-nf / 3.0) - 1.0).abs() < 1e-12);
            assert!((p.matrix[(1, 1)] / 2f64.powf(-nf / 2.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_path_norm_is_sum_of_log_scales() {
        // with deterministic rotation, log ||Pi_n|| is the sum of the log scales;
        // replay the stream to recover them
        let s = spec("family=similarity\nd=2\nt.mu=-0.2\nt.sigma=0.7\nrotation=fixed\nrotation.turns=0.125\n");
        let p = sample_path_product(&s, 6, &mut substream(3, 1, 4));
        let mut rng = substream(3, 1, 4);
        let mut w = WeightSample::zeros(2, 2);
        let mut expected = 0.0;
        for _ in 0..6 {
            s.sample_into(&mut rng, &mut w);
            let i = rng.random_range(0..2);
            expected += op_norm(&w.c[i]).ln();
        }
        assert!((p.log_norm - expected).abs() < 1e-12);
        assert!((op_norm(&p.matrix).ln() - p.log_norm).abs() < 1e-10);
    }

    #[test]
    fn path_pool_matches_single_paths_in_law() {
        let s = spec("family=diagonal\nd=2\nN=2\n");
        let pool = PathPool::generate(&s, 5, 10, 0);
        for k in 1..=5 {
            for &v in pool.at(k) {
                assert!((v + k as f64 / 3.0 * 2f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_invariance_exchangeable() {
        let s = spec("family=similarity\nd=2\nt.mu=-0.8\nt.sigma=0.5\nq.dist=gaussian\n");
        let rep = permutation_check(&s, 5000, 10, 4, &[1.0, 0.0]).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn permutation_invariance_asymmetric() {
        let s = spec("family=general\nd=2\nc.scale=0.2,0.5\nq.dist=gaussian\nq.mean=1,0\n");
        let rep = permutation_check(&s, 5000, 10, 4, &[0.6, 0.8]).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn permutation_check_needs_enough_samples() {
        let s = spec("family=maxwell\nd=3\n");
        assert!(permutation_check(&s, 10, 1, 0, &[1.0, 0.0, 0.0]).is_err());
    }
}
