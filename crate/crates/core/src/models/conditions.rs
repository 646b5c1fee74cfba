//! Algebraic side conditions evaluated on a sample pool.

use nalgebra::{DMatrix, DVector};

use super::SamplePool;
use crate::linalg::op_norm;
use crate::stats::NeumaierSum;

/// Smallest over largest singular value below which `Id - N E[C]` is singular.
pub const SINGULAR_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum EigenvectorSolution {
    Unique(DVector<f64>),
    /// The system is singular but consistent; the minimum-norm solution.
    NonUnique(DVector<f64>),
    /// Singular and `E[Q]` lies outside the range of `Id - N E[C]`.
    NoSolution { residual: f64 },
}

impl EigenvectorSolution {
    pub fn vector(&self) -> Option<&DVector<f64>> {
        match self {
            EigenvectorSolution::Unique(v) | EigenvectorSolution::NonUnique(v) => Some(v),
            EigenvectorSolution::NoSolution { .. } => None,
        }
    }
}

fn pool_means(pool: &SamplePool) -> (DMatrix<f64>, DVector<f64>) {
    let d = pool.dim();
    let b = pool.len() as f64;
    let mut sum_c = vec![NeumaierSum::new(); d * d];
    let mut sum_q = vec![NeumaierSum::new(); d];
    for w in &pool.samples {
        for c in &w.c {
            for (acc, v) in sum_c.iter_mut().zip(c.iter()) {
                acc.add(*v);
            }
        }
        for (acc, v) in sum_q.iter_mut().zip(w.q.iter()) {
            acc.add(*v);
        }
    }
    (
        DMatrix::from_iterator(d, d, sum_c.iter().map(|s| s.value() / b)),
        DVector::from_iterator(d, sum_q.iter().map(|s| s.value() / b)),
    )
}

/// Solves `r = N E[C] r + E[Q]` with pool averages. `N E[C]` is the pool
/// mean of `C_1 + ... + C_N`.
pub fn solve_eigenvector(pool: &SamplePool) -> EigenvectorSolution {
    assert!(!pool.is_empty(), "empty pool");
    let d = pool.dim();
    let (sum_c, mean_q) = pool_means(pool);
    let a = DMatrix::<f64>::identity(d, d) - sum_c;
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    // The floor of 1 is the scale of the identity part; without it a
    // vanishing system matrix would compare round-off against round-off.
    let threshold = SINGULAR_RTOL * smax.max(1.0);
    if smin > threshold {
        let x = svd.solve(&mean_q, 0.0).expect("svd carries both factors");
        return EigenvectorSolution::Unique(x);
    }
    let x = svd.solve(&mean_q, threshold).expect("svd carries both factors");
    let residual = (&a * &x - &mean_q).norm();
    if mean_q.norm() == 0.0 || residual <= 1e-8 * mean_q.norm() {
        EigenvectorSolution::NonUnique(x)
    } else {
        EigenvectorSolution::NoSolution { residual }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceResidual {
    /// Frobenius norm of `Sigma - N E[C Sigma C^T]`.
    pub residual: f64,
    /// Standard error of the pool average, in the same norm.
    pub se: f64,
}

/// Residual of the covariance identity `Sigma = N E[C Sigma C^T]`.
pub fn covariance_residual(pool: &SamplePool, sigma: &DMatrix<f64>) -> CovarianceResidual {
    assert!(!pool.is_empty(), "empty pool");
    let d = pool.dim();
    let b = pool.len();
    let mut sum = vec![NeumaierSum::new(); d * d];
    let mut sumsq = vec![NeumaierSum::new(); d * d];
    let mut m = DMatrix::<f64>::zeros(d, d);
    for w in &pool.samples {
        m.fill(0.0);
        for c in &w.c {
            m += c * sigma * c.transpose();
        }
        for (k, v) in m.iter().enumerate() {
            sum[k].add(*v);
            sumsq[k].add(v * v);
        }
    }
    let bf = b as f64;
    let mut resid2 = 0.0;
    let mut var = 0.0;
    for k in 0..d * d {
        let mean = sum[k].value() / bf;
        let diff = sigma.as_slice()[k] - mean;
        resid2 += diff * diff;
        if b > 1 {
            let v = (sumsq[k].value() / bf - mean * mean).max(0.0) * bf / (bf - 1.0);
            var += v / bf;
        }
    }
    CovarianceResidual { residual: resid2.sqrt(), se: var.sqrt() }
}

/// The three classical contraction quantities for the second-order theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionFactors {
    /// `E sum_k ||C_k||^2`
    pub z1: f64,
    /// `sum_k E ||C_k^T C_k||`
    pub z2: f64,
    /// `|| sum_k E C_k^T C_k ||`
    pub z3: f64,
}

pub fn contraction_conditions(pool: &SamplePool) -> ContractionFactors {
    assert!(!pool.is_empty(), "empty pool");
    let d = pool.dim();
    let n = pool.branches();
    let b = pool.len() as f64;
    let mut z1 = NeumaierSum::new();
    let mut z2 = vec![NeumaierSum::new(); n];
    let mut gram = vec![NeumaierSum::new(); d * d];
    for w in &pool.samples {
        for (k, c) in w.c.iter().enumerate() {
            let norm = op_norm(c);
            z1.add(norm * norm);
            let g = c.transpose() * c;
            z2[k].add(op_norm(&g));
            for (acc, v) in gram.iter_mut().zip(g.iter()) {
                acc.add(*v);
            }
        }
    }
    let gram = DMatrix::from_iterator(d, d, gram.iter().map(|s| s.value() / b));
    ContractionFactors {
        z1: z1.value() / b,
        z2: z2.iter().map(|s| s.value() / b).sum(),
        z3: op_norm(&gram),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelSpec, SamplePool};

    fn pool(text: &str, size: usize) -> SamplePool {
        SamplePool::generate(&ModelSpec::parse(text).unwrap(), 2024, size)
    }

    #[test]
    fn homogeneous_general_model_has_zero_mean() {
        let p = pool("family=general\nd=3\nc.scale=0.4\n", 5000);
        match solve_eigenvector(&p) {
            EigenvectorSolution::Unique(r) => assert_eq!(r.norm(), 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn half_identity_doubles_mean_immigration() {
        let p = pool("family=diagonal\nd=3\nN=2\ndiag=0.25,0.25,0.25\nq.dist=const\nq.mean=1,0,0\n", 10);
        let r = solve_eigenvector(&p);
        let v = r.vector().unwrap();
        assert!(matches!(r, EigenvectorSolution::Unique(_)));
        assert!((v[0] - 2.0).abs() < 1e-14 && v[1] == 0.0 && v[2] == 0.0);
    }

    #[test]
    fn maxwell_eigenvalue_identity_is_singular() {
        let p = pool("family=maxwell\nd=3\nu.sigma=0.5\n", 100_000);
        let (sum_c, _) = pool_means(&p);
        let a = DMatrix::<f64>::identity(3, 3) - sum_c;
        let sv = a.singular_values();
        // C_1 + C_2 = Id sample by sample, so only round-off survives
        assert!(sv.max() < 1e-12, "{sv}");
        match solve_eigenvector(&p) {
            EigenvectorSolution::NonUnique(r) => assert_eq!(r.norm(), 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_singular_system_has_no_solution() {
        // N E[C] = Id and E[Q] != 0: r = r + E[Q] is impossible
        let p = pool("family=diagonal\nd=2\nN=2\ndiag=0.5,0.5\nq.dist=const\nq.mean=1,0\n", 4);
        assert!(matches!(solve_eigenvector(&p), EigenvectorSolution::NoSolution { .. }));
    }

    #[test]
    fn maxwell_identity_covariance() {
        let p = pool("family=maxwell\nd=3\nu.sigma=0.6\n", 50_000);
        let r = covariance_residual(&p, &DMatrix::identity(3, 3));
        assert!(r.residual <= 3.0 * r.se, "{r:?}");
    }

    #[test]
    fn similarity_identity_covariance() {
        // N E t^2 = 2 exp(2 mu + 2 sigma^2) = 1
        let sigma: f64 = 0.4;
        let mu = -0.5 * 2f64.ln() - sigma * sigma;
        let p = pool(&format!("family=similarity\nd=3\nt.mu={mu}\nt.sigma={sigma}\n"), 50_000);
        let r = covariance_residual(&p, &DMatrix::identity(3, 3));
        assert!(r.residual <= 3.0 * r.se, "{r:?}");
    }

    #[test]
    fn diagonal_subspace_covariance_is_exact() {
        let p = pool("family=diagonal\nd=2\nN=2\n", 3);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let r = covariance_residual(&p, &sigma);
        assert!(r.residual <= 4.0 * f64::EPSILON, "{r:?}");
    }

    #[test]
    fn scalar_similarities_make_conditions_coincide() {
        let p = pool("family=similarity\nd=2\nN=3\nt.dist=const\nt.c=0.5\n", 100);
        let z = contraction_conditions(&p);
        for v in [z.z1, z.z2, z.z3] {
            assert!((v - 0.75).abs() < 1e-12, "{z:?}");
        }
    }

    #[test]
    fn maxwell_weakest_condition_is_critical() {
        let p = pool("family=maxwell\nd=3\nu.sigma=0.5\n", 100_000);
        let z = contraction_conditions(&p);
        // sum_k E C_k^T C_k = Id + 2 E[U^2 - U] E[Y^T Y] = Id
        assert!((z.z3 - 1.0).abs() < 0.01, "{z:?}");
        assert!(z.z1 > 1.0 && z.z3 <= z.z2 && z.z2 <= z.z1 + 1e-12, "{z:?}");
    }

    #[test]
    fn gaussian_model_orders_conditions() {
        let p = pool("family=general\nd=2\nc.scale=0.4\n", 200_000);
        let z = contraction_conditions(&p);
        // ||C^T C|| = ||C||^2 for the operator norm, so z1 and z2 agree
        assert!((z.z1 - z.z2).abs() <= 1e-12 * z.z1, "{z:?}");
        assert!(z.z3 < z.z2, "{z:?}");
        // isotropic Gaussian: E C^T C = 2 * 0.16 * Id per branch
        assert!((z.z3 - 2.0 * 2.0 * 0.16).abs() < 0.01, "{z:?}");
    }
}
