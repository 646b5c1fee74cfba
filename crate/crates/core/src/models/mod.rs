//! Weight-vector model families `(C_1, ..., C_N, Q)`.

mod conditions;
mod config;

pub use conditions::{
    contraction_conditions, covariance_residual, solve_eigenvector, ContractionFactors,
    CovarianceResidual, EigenvectorSolution, SINGULAR_RTOL,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, haar_rotation, orthogonality_defect, rotation_2d, uniform_sphere};
use crate::rng::{chunk_count, substream, CHUNK, TAG_POOL};
use config::{parse_lines, Keys};

/// Law of the scale `t = ||C_i||` of a similarity.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleLaw {
    Const(f64),
    LogNormal { mu: f64, sigma: f64 },
    /// `t = a` with probability `p`, else `t = b`.
    TwoPoint { a: f64, b: f64, p: f64 },
}

impl ScaleLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScaleLaw::Const(c) => c,
            ScaleLaw::LogNormal { mu, sigma } => (mu + sigma * rng.sample::<f64, _>(StandardNormal)).exp(),
            ScaleLaw::TwoPoint { a, b, p } => {
                if rng.random::<f64>() < p {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// `E t^s`.
    pub fn moment(&self, s: f64) -> f64 {
        match *self {
            ScaleLaw::Const(c) => c.powf(s),
            ScaleLaw::LogNormal { mu, sigma } => (mu * s + 0.5 * sigma * sigma * s * s).exp(),
            ScaleLaw::TwoPoint { a, b, p } => p * a.powf(s) + (1.0 - p) * b.powf(s),
        }
    }

    /// `E[t^s log t]`.
    pub fn log_moment(&self, s: f64) -> f64 {
        match *self {
            ScaleLaw::Const(c) => c.powf(s) * c.ln(),
            ScaleLaw::LogNormal { mu, sigma } => self.moment(s) * (mu + sigma * sigma * s),
            ScaleLaw::TwoPoint { a, b, p } => p * a.powf(s) * a.ln() + (1.0 - p) * b.powf(s) * b.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RotationLaw {
    Identity,
    Haar,
    Fixed(DMatrix<f64>),
}

/// Law of the inelasticity `U` of the Maxwell collision model.
///
/// Both laws are parameterized so that `E[U(1 - U)] = 0`:
/// the lognormal uses `log U ~ Normal(-3 sigma^2 / 2, sigma^2)`, the two-point
/// law puts mass `p = b(b-1) / (a(1-a) + b(b-1))` on `a < 1` and the rest on
/// `b > 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum InelasticityLaw {
    LogNormal { sigma: f64 },
    TwoPoint { a: f64, b: f64 },
}

impl InelasticityLaw {
    pub fn as_scale_law(&self) -> ScaleLaw {
        match *self {
            InelasticityLaw::LogNormal { sigma } => ScaleLaw::LogNormal { mu: -1.5 * sigma * sigma, sigma },
            InelasticityLaw::TwoPoint { a, b } => {
                let p = b * (b - 1.0) / (a * (1.0 - a) + b * (b - 1.0));
                ScaleLaw::TwoPoint { a, b, p }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QLaw {
    Zero,
    Gaussian { mean: Vec<f64>, scale: f64 },
    Const(Vec<f64>),
}

impl QLaw {
    pub fn is_zero(&self) -> bool {
        match self {
            QLaw::Zero => true,
            QLaw::Const(v) => v.iter().all(|&x| x == 0.0),
            QLaw::Gaussian { mean, scale } => *scale == 0.0 && mean.iter().all(|&x| x == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Entries i.i.d. `Normal(mean, scale_i^2)` plus `diag * Id`.
    General { mean: f64, diag: f64, scales: Vec<f64>, cond_cap: f64 },
    /// `C_i = t_i k_i` with i.i.d. scales and rotations.
    Similarity { scale: ScaleLaw, rotation: RotationLaw },
    /// `C_1 = U Y^T Y`, `C_2 = Id - U Y^T Y` with `Y` uniform on the sphere.
    Maxwell { u: InelasticityLaw },
    /// Deterministic `C_1 = ... = C_N = diag(...)`.
    Diagonal { diag: Vec<f64> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::General { .. } => "general",
            Family::Similarity { .. } => "similarity",
            Family::Maxwell { .. } => "maxwell",
            Family::Diagonal { .. } => "diagonal",
        }
    }
}

/// Declarative description of the law of `(C_1, ..., C_N, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub d: usize,
    pub branches: usize,
    pub q: QLaw,
    pub s_max_hint: Option<f64>,
    canonical: String,
}

impl ModelSpec {
    /// Parses a flat `key=value` configuration. Structural problems that the
    /// `validate` command should report (e.g. `N = 1`) are not errors here;
    /// see [`ModelSpec::issues`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut keys = Keys::new(parse_lines(text)?);
        let canonical = keys.canonical();
        let family_name = keys
            .str("family")
            .ok_or_else(|| Error::Config("missing key `family`".into()))?;
        let d = keys.usize("d")?.ok_or_else(|| Error::Config("missing key `d`".into()))?;
        let branches = keys.usize("N")?.unwrap_or(2);
        if d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        let family = match family_name.as_str() {
            "general" => {
                let mean = keys.f64_or("c.mean", 0.0)?;
                let diag = keys.f64_or("c.diag", 0.0)?;
                let scales = match keys.list("c.scale")? {
                    None => vec![0.5; branches],
                    Some(v) if v.len() == 1 => vec![v[0]; branches],
                    Some(v) if v.len() == branches => v,
                    Some(v) => {
                        return Err(Error::Config(format!(
                            "c.scale: expected 1 or {branches} values, got {}",
                            v.len()
                        )))
                    }
                };
                let cond_cap = keys.f64_or("c.cond_cap", 1e6)?;
                Family::General { mean, diag, scales, cond_cap }
            }
            "similarity" => {
                let dist = keys.str("t.dist").unwrap_or_else(|| "lognormal".into());
                let scale = match dist.as_str() {
                    "const" => ScaleLaw::Const(keys.f64_or("t.c", 0.5)?),
                    "lognormal" => ScaleLaw::LogNormal {
                        mu: keys.f64_or("t.mu", 0.0)?,
                        sigma: keys.f64_or("t.sigma", 1.0)?,
                    },
                    "twopoint" => ScaleLaw::TwoPoint {
                        a: required(&mut keys, "t.a")?,
                        b: required(&mut keys, "t.b")?,
                        p: keys.f64_or("t.p", 0.5)?,
                    },
                    other => return Err(Error::Config(format!("t.dist: unknown law {other:?}"))),
                };
                let rot = keys.str("rotation").unwrap_or_else(|| "haar".into());
                let rotation = match rot.as_str() {
                    "identity" => RotationLaw::Identity,
                    "haar" => RotationLaw::Haar,
                    "fixed" => {
                        let turns = keys.f64("rotation.turns")?;
                        let matrix = keys.list("rotation.matrix")?;
                        match (turns, matrix) {
                            (Some(t), None) => {
                                if d != 2 {
                                    return Err(Error::Config("rotation.turns requires d = 2".into()));
                                }
                                RotationLaw::Fixed(rotation_2d(t * std::f64::consts::TAU))
                            }
                            (None, Some(m)) => {
                                if m.len() != d * d {
                                    return Err(Error::Config(format!(
                                        "rotation.matrix: expected {} entries, got {}",
                                        d * d,
                                        m.len()
                                    )));
                                }
                                RotationLaw::Fixed(DMatrix::from_row_slice(d, d, &m))
                            }
                            _ => {
                                return Err(Error::Config(
                                    "rotation=fixed needs exactly one of rotation.turns, rotation.matrix".into(),
                                ))
                            }
                        }
                    }
                    other => return Err(Error::Config(format!("rotation: unknown law {other:?}"))),
                };
                Family::Similarity { scale, rotation }
            }
            "maxwell" => {
                let dist = keys.str("u.dist").unwrap_or_else(|| "lognormal".into());
                let u = match dist.as_str() {
                    "lognormal" => InelasticityLaw::LogNormal { sigma: keys.f64_or("u.sigma", 0.5)? },
                    "twopoint" => InelasticityLaw::TwoPoint {
                        a: required(&mut keys, "u.a")?,
                        b: required(&mut keys, "u.b")?,
                    },
                    other => return Err(Error::Config(format!("u.dist: unknown law {other:?}"))),
                };
                Family::Maxwell { u }
            }
            "diagonal" => {
                let diag = match keys.list("diag")? {
                    Some(v) => v,
                    None => {
                        let n = branches.max(1) as f64;
                        (0..d)
                            .map(|i| if i == 0 { n.powf(-1.0 / 3.0) } else { n.powf(-0.5) })
                            .collect()
                    }
                };
                if diag.len() != d {
                    return Err(Error::Config(format!("diag: expected {d} entries, got {}", diag.len())));
                }
                Family::Diagonal { diag }
            }
            other => return Err(Error::Config(format!("unknown family {other:?}"))),
        };
        let q = match keys.str("q.dist").as_deref().unwrap_or("zero") {
            "zero" => QLaw::Zero,
            "gaussian" => QLaw::Gaussian {
                mean: vector_key(&mut keys, "q.mean", d)?,
                scale: keys.f64_or("q.scale", 1.0)?,
            },
            "const" => QLaw::Const(vector_key(&mut keys, "q.mean", d)?),
            other => return Err(Error::Config(format!("q.dist: unknown law {other:?}"))),
        };
        let s_max_hint = keys.f64("s.max")?;
        keys.finish()?;
        Ok(Self { family, d, branches, q, s_max_hint, canonical })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical `key=value` text (sorted keys) the hash is computed from.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    /// SHA-256 of the canonical configuration, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical.as_bytes()))
    }

    pub fn is_similarity(&self) -> bool {
        matches!(self.family, Family::Similarity { .. })
    }

    /// Structural problems with the specification. Empty means valid.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.branches < 2 {
            out.push(format!("N = {} but the smoothing transform needs N > 1 branches", self.branches));
        }
        match &self.family {
            Family::General { scales, cond_cap, .. } => {
                if scales.iter().any(|&s| s < 0.0) {
                    out.push("c.scale must be nonnegative".into());
                }
                if *cond_cap < 1.0 {
                    out.push("c.cond_cap must be at least 1".into());
                }
            }
            Family::Similarity { scale, rotation } => {
                match *scale {
                    ScaleLaw::Const(c) if c <= 0.0 => out.push("t.c must be positive".into()),
                    ScaleLaw::LogNormal { sigma, .. } if sigma < 0.0 => out.push("t.sigma must be nonnegative".into()),
                    ScaleLaw::TwoPoint { a, b, p } => {
                        if a <= 0.0 || b <= 0.0 {
                            out.push("t.a and t.b must be positive".into());
                        }
                        if !(0.0..=1.0).contains(&p) {
                            out.push("t.p must lie in [0, 1]".into());
                        }
                    }
                    _ => {}
                }
                if let RotationLaw::Fixed(k) = rotation {
                    let defect = orthogonality_defect(k);
                    if defect > 1e-10 {
                        out.push(format!("rotation.matrix is not orthogonal (max |k k^T - Id| = {defect:.3e})"));
                    }
                }
            }
            Family::Maxwell { u } => match *u {
                InelasticityLaw::LogNormal { sigma } if sigma < 0.0 => out.push("u.sigma must be nonnegative".into()),
                InelasticityLaw::TwoPoint { a, b } if !(a > 0.0 && a < 1.0 && b > 1.0) => {
                    out.push("two-point inelasticity needs 0 < u.a < 1 < u.b".into())
                }
                _ => {}
            },
            Family::Diagonal { .. } => {}
        }
        if let QLaw::Gaussian { scale, .. } = self.q {
            if scale < 0.0 {
                out.push("q.scale must be nonnegative".into());
            }
        }
        if let Some(h) = self.s_max_hint {
            if h <= 0.0 {
                out.push("s.max must be positive".into());
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues.join("; ")))
        }
    }

    /// Draws one realization into `out`, returning the number of draws that
    /// were rejected by the condition-number cap (general family only).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut WeightSample) -> u32 {
        let d = self.d;
        let mut rejected = 0;
        match &self.family {
            Family::General { mean, diag, scales, cond_cap } => {
                for (c, &scale) in out.c.iter_mut().zip(scales) {
                    loop {
                        for j in 0..d {
                            for i in 0..d {
                                let mut v = mean + scale * rng.sample::<f64, _>(StandardNormal);
                                if i == j {
                                    v += diag;
                                }
                                c[(i, j)] = v;
                            }
                        }
                        if d == 1 || condition_number(c) <= *cond_cap {
                            break;
                        }
                        rejected += 1;
                    }
                }
            }
            Family::Similarity { scale, rotation } => {
                for c in out.c.iter_mut() {
                    let t = scale.sample(rng);
                    match rotation {
                        RotationLaw::Identity => {
                            c.fill(0.0);
                            c.fill_diagonal(t);
                        }
                        RotationLaw::Haar => {
                            let k = haar_rotation(rng, d);
                            c.copy_from(&k);
                            *c *= t;
                        }
                        RotationLaw::Fixed(k) => {
                            c.copy_from(k);
                            *c *= t;
                        }
                    }
                }
            }
            Family::Maxwell { u } => {
                let y = uniform_sphere(rng, d);
                let law = u.as_scale_law();
                let uval = law.sample(rng);
                fill_maxwell(out, uval, y.as_slice());
            }
            Family::Diagonal { diag } => {
                for c in out.c.iter_mut() {
                    c.fill(0.0);
                    for (i, &v) in diag.iter().enumerate() {
                        c[(i, i)] = v;
                    }
                }
            }
        }
        match &self.q {
            QLaw::Zero => out.q.fill(0.0),
            QLaw::Const(v) => out.q.copy_from_slice(v),
            QLaw::Gaussian { mean, scale } => {
                for (q, &m) in out.q.iter_mut().zip(mean) {
                    *q = m + scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        rejected
    }

    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightSample {
        let mut w = WeightSample::zeros(self.d, self.branches);
        self.sample_into(rng, &mut w);
        w
    }
}

fn required(keys: &mut Keys, key: &str) -> Result<f64> {
    keys.f64(key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

fn vector_key(keys: &mut Keys, key: &str, d: usize) -> Result<Vec<f64>> {
    match keys.list(key)? {
        None => Ok(vec![0.0; d]),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; d]),
        Some(v) if v.len() == d => Ok(v),
        Some(v) => Err(Error::Config(format!("{key}: expected 1 or {d} values, got {}", v.len()))),
    }
}

/// Writes the Maxwell pair `C_1 = u y^T y`, `C_2 = Id - C_1` into `out`.
pub fn fill_maxwell(out: &mut WeightSample, u: f64, y: &[f64]) {
    let d = y.len();
    for i in 0..d {
        for j in 0..d {
            let p = u * y[i] * y[j];
            out.c[0][(i, j)] = p;
            out.c[1][(i, j)] = if i == j { 1.0 - p } else { -p };
        }
    }
}

/// One realization `(C_1, ..., C_N, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub c: Vec<DMatrix<f64>>,
    pub q: DVector<f64>,
}

impl WeightSample {
    pub fn zeros(d: usize, branches: usize) -> Self {
        Self { c: vec![DMatrix::zeros(d, d); branches], q: DVector::zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Immutable seeded array of weight samples used as common random numbers.
#[derive(Debug, Clone)]
pub struct SamplePool {
    pub seed: u64,
    pub samples: Vec<WeightSample>,
    /// Draws rejected by the condition-number cap while building the pool.
    pub rejected: u64,
    pub spec_hash: String,
}

impl SamplePool {
    /// Builds `size` i.i.d. samples. Each block of [`CHUNK`] indices has its own
    /// substream, so the pool does not depend on the thread count.
    pub fn generate(spec: &ModelSpec, seed: u64, size: usize) -> Self {
        let chunks: Vec<(Vec<WeightSample>, u64)> = (0..chunk_count(size))
            .into_par_iter()
            .map(|ci| {
                let mut rng = substream(seed, TAG_POOL, ci as u64);
                let lo = ci * CHUNK;
                let hi = (lo + CHUNK).min(size);
                let mut rejected = 0u64;
                let samples = (lo..hi)
                    .map(|_| {
                        let mut w = WeightSample::zeros(spec.d, spec.branches);
                        rejected += spec.sample_into(&mut rng, &mut w) as u64;
                        w
                    })
                    .collect();
                (samples, rejected)
            })
            .collect();
        let rejected = chunks.iter().map(|c| c.1).sum();
        let samples = chunks.into_iter().flat_map(|c| c.0).collect();
        Self { seed, samples, rejected, spec_hash: spec.hash() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |w| w.dim())
    }

    pub fn branches(&self) -> usize {
        self.samples.first().map_or(0, |w| w.c.len())
    }
}

/// Serializable description of a spec for manifests and sidecars.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpecSummary {
    pub family: String,
    pub d: usize,
    pub branches: usize,
    pub hash: String,
}

impl From<&ModelSpec> for SpecSummary {
    fn from(s: &ModelSpec) -> Self {
        Self { family: s.family.name().into(), d: s.d, branches: s.branches, hash: s.hash() }
    }
}
