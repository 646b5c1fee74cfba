//! Tail-index estimators, empirical survival curves and the moment
//! divergence probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::median;

/// Exceedances required above the upper end of the plateau window.
pub const PLATEAU_MIN_EXCEEDANCES: usize = 100;

/// Points per survival or plateau curve.
pub const CURVE_POINTS: usize = 200;

/// Slope above which the max/sum ratio is read as not decaying.
pub const DIVERGENCE_SLOPE: f64 = -0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexEstimate {
    pub index: f64,
    pub se: f64,
    pub k: usize,
}

/// `max(100, n / 100)`.
pub fn default_k(n: usize) -> usize {
    (n / 100).max(100)
}

fn positive_descending(samples: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Hill estimator: the reciprocal mean log-excess of the `k` largest values
/// over the `(k+1)`-th. Nonpositive samples are ignored.
pub fn hill_estimate(samples: &[f64], k: usize) -> Result<IndexEstimate> {
    let v = positive_descending(samples);
    if k < 10 || v.len() <= k {
        return Err(Error::Estimation(format!(
            "Hill estimator needs at least 10 exceedances and k < n (k = {k}, n = {})",
            v.len()
        )));
    }
    let threshold = v[k].ln();
    let mean_excess = v[..k].iter().map(|x| x.ln() - threshold).sum::<f64>() / k as f64;
    if mean_excess <= 0.0 {
        return Err(Error::Estimation("Hill estimator: no log-excess over the threshold".into()));
    }
    let index = 1.0 / mean_excess;
    Ok(IndexEstimate { index, se: index / (k as f64).sqrt(), k })
}

/// Least-squares slope of `log(i / n)` against `log X_(i)` over the top `k`
/// order statistics, reported as a positive index.
pub fn rank_regression(samples: &[f64], k: usize) -> Result<IndexEstimate> {
    let n = samples.len() as f64;
    let v = positive_descending(samples);
    if k < 10 || v.len() < k {
        return Err(Error::Estimation(format!("rank regression needs k >= 10 positive samples (k = {k})")));
    }
    let xs: Vec<f64> = v[..k].iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = (1..=k).map(|i| (i as f64 / n).ln()).collect();
    let kf = k as f64;
    let mx = xs.iter().sum::<f64>() / kf;
    let my = ys.iter().sum::<f64>() / kf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Estimation("rank regression: top order statistics are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let index = -sxy / sxx;
    Ok(IndexEstimate { index, se: index.abs() * (2.0 / kf).sqrt(), k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub value: f64,
    pub se: f64,
}

/// Empirical `P(X > t)` on a geometric grid of `points` thresholds between the
/// smallest positive sample and the largest sample. The probability uses the
/// full sample size, nonpositive values included.
pub fn survival_curve(samples: &[f64], points: usize) -> Vec<CurvePoint> {
    let n = samples.len() as f64;
    let mut asc: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    asc.sort_by(f64::total_cmp);
    let Some(lo) = asc.iter().copied().find(|x| *x > 0.0) else {
        return Vec::new();
    };
    let hi = *asc.last().unwrap();
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let t = if hi > lo { lo * (hi / lo).powf(i as f64 / (points - 1) as f64) } else { lo };
            let p = survival_at(&asc, t, n);
            CurvePoint { t, value: p, se: (p * (1.0 - p) / n).sqrt() }
        })
        .collect()
}

fn survival_at(asc: &[f64], t: f64, n: f64) -> f64 {
    (asc.len() - asc.partition_point(|x| *x <= t)) as f64 / n
}

/// `t^beta P(X > t)` on the survival grid.
pub fn plateau_curve(samples: &[f64], beta: f64, points: usize) -> Vec<CurvePoint> {
    survival_curve(samples, points)
        .into_iter()
        .map(|c| {
            let f = c.t.powf(beta);
            CurvePoint { t: c.t, value: f * c.value, se: f * c.se }
        })
        .collect()
}

/// Plateau height over the decade `[t_hi / 10, t_hi]`, where `t_hi` still
/// has [`PLATEAU_MIN_EXCEEDANCES`] samples above it: the average of
/// `t^beta P(X > t)` at 21 geometric points, with the average pointwise
/// binomial SE (the points are strongly correlated).
pub fn plateau_level(samples: &[f64], beta: f64) -> Result<(f64, f64)> {
    let n = samples.len() as f64;
    let mut asc: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    asc.sort_by(f64::total_cmp);
    if asc.len() <= PLATEAU_MIN_EXCEEDANCES {
        return Err(Error::Estimation("too few samples for a plateau read-off".into()));
    }
    let t_hi = asc[asc.len() - 1 - PLATEAU_MIN_EXCEEDANCES];
    if t_hi <= 0.0 {
        return Err(Error::Estimation("upper tail is not positive".into()));
    }
    let (mut sum, mut se) = (0.0, 0.0);
    for i in 0..=20 {
        let t = t_hi * 10f64.powf(-1.0 + i as f64 / 20.0);
        let p = survival_at(&asc, t, n);
        let f = t.powf(beta);
        sum += f * p;
        se += f * (p * (1.0 - p) / n).sqrt();
    }
    Ok((sum / 21.0, se / 21.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentVerdict {
    DivergenceConsistent,
    Convergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub s: f64,
    /// Nested subsample sizes `n, n/2, n/4, ...` in increasing order.
    pub sizes: Vec<usize>,
    /// Running `E|X|^s` on the first `size` samples.
    pub running_moment: Vec<f64>,
    /// Median over disjoint blocks of `max |X|^s / sum |X|^s`.
    pub max_sum_ratio: Vec<f64>,
    /// Log-log slope of the ratio against the size.
    pub slope: f64,
    pub verdict: MomentVerdict,
}

/// Heuristic check for `E|X|^s = infinity`.
///
/// For a finite moment `max/sum` of `|X|^s` decays like a negative power of
/// the sample size; for an infinite one it decays at most logarithmically.
/// The verdict compares the fitted log-log slope with [`DIVERGENCE_SLOPE`].
pub fn moment_divergence_probe(samples: &[f64], s_grid: &[f64]) -> Result<Vec<ProbeResult>> {
    let abs: Vec<f64> = samples.iter().map(|x| x.abs()).filter(|x| x.is_finite()).collect();
    if abs.len() < 1024 {
        return Err(Error::Usage("moment probe needs at least 1024 samples".into()));
    }
    let mut sizes = Vec::new();
    let mut m = abs.len();
    while m >= 64 && sizes.len() < 12 {
        sizes.push(m);
        m /= 2;
    }
    sizes.reverse();
    s_grid
        .iter()
        .map(|&s| {
            if s <= 0.0 {
                return Err(Error::Usage(format!("moment order must be positive, got {s}")));
            }
            let pw: Vec<f64> = abs.iter().map(|x| x.powf(s)).collect();
            let running_moment = sizes.iter().map(|&k| pw[..k].iter().sum::<f64>() / k as f64).collect();
            let max_sum_ratio: Vec<f64> = sizes
                .iter()
                .map(|&k| {
                    let blocks = (pw.len() / k).min(64);
                    let mut r: Vec<f64> = (0..blocks)
                        .map(|b| {
                            let chunk = &pw[b * k..(b + 1) * k];
                            let total: f64 = chunk.iter().sum();
                            if total > 0.0 {
                                chunk.iter().fold(0.0f64, |a, v| a.max(*v)) / total
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    median(&mut r)
                })
                .collect();
            let xs: Vec<f64> = sizes.iter().map(|&k| (k as f64).ln()).collect();
            let ys: Vec<f64> = max_sum_ratio.iter().map(|r| r.max(f64::MIN_POSITIVE).ln()).collect();
            let slope = ls_slope(&xs, &ys);
            let verdict =
                if slope > DIVERGENCE_SLOPE { MomentVerdict::DivergenceConsistent } else { MomentVerdict::Convergent };
            Ok(ProbeResult { s, sizes: sizes.clone(), running_moment, max_sum_ratio, slope, verdict })
        })
        .collect()
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
