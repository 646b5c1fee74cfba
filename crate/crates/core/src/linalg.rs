//! Dense helpers for the small d x d matrices used throughout.
//!
//! Direction vectors act on matrices from the left (`x C` is a row vector),
//! which is the action used by the transfer operators and by projections
//! `x R = <x, R>`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Operator norm induced by the Euclidean norm.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    match a.nrows() {
        1 => a[(0, 0)].abs(),
        2 => {
            let (p, q, r, t) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            0.5 * ((p + t).hypot(r - q) + (p - t).hypot(r + q))
        }
        _ => a.singular_values().max(),
    }
}

/// Largest over smallest singular value; infinite for singular matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `out = x C` (row vector times matrix).
#[inline]
pub fn row_action(x: &[f64], c: &DMatrix<f64>, out: &mut [f64]) {
    let d = x.len();
    for (j, o) in out.iter_mut().enumerate().take(d) {
        let col = c.column(j);
        let mut acc = 0.0;
        for i in 0..d {
            acc += x[i] * col[i];
        }
        *o = acc;
    }
}

/// `out += C x`.
#[inline]
pub fn mat_vec_acc(c: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = c.column(j);
        for i in 0..d {
            out[i] += col[i] * xj;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Uniform point on the unit sphere in dimension `d` (normalized Gaussian).
pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Haar-distributed rotation in SO(d).
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    if d == 1 {
        return DMatrix::identity(1, 1);
    }
    if d == 2 {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        return rotation_2d(theta);
    }
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

pub fn rotation_2d(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Max entrywise deviation of `k k^T` from the identity.
pub fn orthogonality_defect(k: &DMatrix<f64>) -> f64 {
    let p = k * k.transpose();
    let d = k.nrows();
    (p - DMatrix::<f64>::identity(d, d)).amax()
}
