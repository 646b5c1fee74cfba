//! `m(s)`, the exponents `alpha` and `beta`, and the eigen-elements
//! `(kappa(s), e_s, nu_s)` of the transfer operators on the sphere.

mod exponents;
mod grid;
mod operator;

pub use exponents::{
    compute_l_beta, compute_m_beta_similarity, estimate_m_direct, estimate_m_ratio, find_exponents,
    m_beta_functional, ExponentReport, MPoint, MRoute, ScanOptions, DERIVATIVE_STEP, ROOT_TOL, SE_BATCHES,
};
pub use grid::SphereGrid;
pub use operator::{
    power_iterate, OperatorBuilder, OperatorMeta, SpectralSolution, TransferOperator, CACHE_ENTRIES,
    DEFAULT_MAX_ITER, DEFAULT_TOL, SOLUTION_VERSION,
};
