//! Tail estimators, limiting constants and the Goldie identity check.

mod constants;
mod estimators;

pub use constants::{
    beta2_constant, constant_k, constant_k_radial, goldie_directions, goldie_identity_residual, positivity_gate,
    radial_bracket_mean, sigma_s, ConstantEstimate, ConstantMethod, GoldieReport, GoldieValues, BETA2_TOL,
    GOLDIE_GRID_POINTS, GOLDIE_RANGE,
};
pub use estimators::{
    default_k, hill_estimate, moment_divergence_probe, plateau_curve, plateau_level, rank_regression, survival_curve,
    CurvePoint, IndexEstimate, MomentVerdict, ProbeResult, CURVE_POINTS, DIVERGENCE_SLOPE, PLATEAU_MIN_EXCEEDANCES,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Tail summary of one scalar sample (a projection `xR` or `|R|`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// `None` for the radial part `|R|`.
    pub direction: Option<Vec<f64>>,
    pub n: usize,
    pub hill: IndexEstimate,
    pub rank: IndexEstimate,
    pub survival: Vec<CurvePoint>,
    pub plateau: Option<Vec<CurvePoint>>,
    pub plateau_level: Option<(f64, f64)>,
}

/// Hill and rank-regression indices, the survival curve and, when `beta`
/// is given, the plateau `t^beta P(X > t)`.
pub fn tail_report(values: &[f64], direction: Option<Vec<f64>>, beta: Option<f64>, k: Option<usize>) -> Result<TailReport> {
    let k = k.unwrap_or_else(|| default_k(values.len()));
    let hill = hill_estimate(values, k)?;
    let rank = rank_regression(values, k)?;
    let survival = survival_curve(values, CURVE_POINTS);
    let (plateau, plateau_level) = match beta {
        Some(b) => (Some(plateau_curve(values, b, CURVE_POINTS)), Some(plateau_level(values, b)?)),
        None => (None, None),
    };
    Ok(TailReport { direction, n: values.len(), hill, rank, survival, plateau, plateau_level })
}
