//! Batch front-end: `spectrum`, `simulate`, `tails`, `constants`, `validate`.
//!
//! Stages hand results to each other through files in the output directory;
//! every JSON output carries the hash of the manifest that produced it, and
//! model hashes are checked whenever a stage reads an earlier one.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, RunManifest, Staged, Stamped};
use crate::linalg::norm;
use crate::models::{covariance_residual, solve_eigenvector, Family, ModelSpec, SamplePool};
use crate::rng::{splitmix64, TAG_PAIR};
use crate::spectral::{
    compute_l_beta, compute_m_beta_similarity, find_exponents, power_iterate, ExponentReport, MRoute, OperatorBuilder,
    ScanOptions, SphereGrid, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::stats::median;
use crate::tails::{
    beta2_constant, constant_k, constant_k_radial, goldie_identity_residual, moment_divergence_probe,
    positivity_gate, sigma_s, tail_report, ConstantEstimate, GoldieReport, ProbeResult, TailReport, BETA2_TOL,
};
use crate::wbp::{permutation_check, run_population, Population, DEFAULT_BURN_IN};

/// Largest gap between `--beta` and a stored exponent report before a
/// warning is raised.
pub const BETA_MISMATCH_WARN: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "smoothlab", version, about = "Numerical laboratory for multivariate smoothing transforms")]
pub struct Cli {
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, global = true, env = "SMOOTHLAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan m(s), locate alpha and beta, and solve the operator at beta.
    Spectrum(SpectrumArgs),
    /// Run population dynamics and dump the final population.
    Simulate(SimulateArgs),
    /// Tail indices, survival curves and plateaus of simulated samples.
    Tails(TailsArgs),
    /// Limiting constants and Goldie identity checks.
    Constants(ConstantsArgs),
    /// Structural checks at reduced sizes; failures are reported, not raised.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model configuration (`key=value` lines).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Spectral,
    Direct,
    Ratio,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: Common,
    /// Weight pool size B.
    #[arg(long, default_value_t = 100_000)]
    pub pool: usize,
    /// Sphere grid size G (default depends on d).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub s_lo: f64,
    /// Scan end; defaults to 6 or just below `s.max`.
    #[arg(long)]
    pub s_hi: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// Estimator for m(s); diagonal models default to `direct`.
    #[arg(long, value_enum)]
    pub route: Option<RouteArg>,
    /// Path length n for the direct and ratio routes.
    #[arg(long, default_value_t = 30)]
    pub depth: usize,
    /// Skip standard errors on the scan.
    #[arg(long)]
    pub no_se: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Gaussian,
    Zero,
    /// The constant solution `r` of `r = N E[C] r + E[Q]`.
    Eigenvector,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Population size M.
    #[arg(long, default_value_t = 100_000)]
    pub population: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub sweeps: u64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub init: InitArg,
}

#[derive(Debug, Clone, Args)]
pub struct TailsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding a `simulate` dump.
    #[arg(long)]
    pub samples: PathBuf,
    /// `exponents.json` from `spectrum`.
    #[arg(long)]
    pub exponents: Option<PathBuf>,
    /// Tail index used for plateaus; overrides the exponent report.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Projection directions, e.g. `1,0;0,1;1,1` (default: coordinate axes).
    #[arg(long)]
    pub directions: Option<String>,
    /// Hill order-statistic count.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ConstantsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub exponents: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub pool: usize,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub directions: Option<String>,
    /// Orders s at which to check the Goldie identity, e.g. `1.5,2`.
    #[arg(long, value_delimiter = ',')]
    pub goldie: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// What a command tells its caller besides the files it wrote.
#[derive(Debug, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
    pub written: Vec<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tails(a) => cmd_tails(a),
        Command::Constants(a) => cmd_constants(a),
        Command::Validate(a) => cmd_validate(a),
    })
}

fn load_spec(path: &Path) -> Result<ModelSpec> {
    let spec = ModelSpec::from_file(path)?;
    spec.ensure_valid()?;
    Ok(spec)
}

fn manifest(command: &str, common: &Common, spec: &ModelSpec) -> RunManifest {
    let mut m = RunManifest::new(command, &common.config, spec, common.seed);
    m.out_dir = common.out.display().to_string();
    m
}

pub fn default_grid(d: usize) -> usize {
    match d {
        1 => 2,
        2 => 64,
        3 => 256,
        _ => 512,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueSe {
    pub value: f64,
    pub se: f64,
}

impl From<(f64, f64)> for ValueSe {
    fn from((value, se): (f64, f64)) -> Self {
        Self { value, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOutput {
    pub report: ExponentReport,
    pub seed: u64,
    pub pool_size: usize,
    pub grid_size: Option<usize>,
    pub kappa_beta: Option<f64>,
    pub l_beta: Option<ValueSe>,
    pub m_beta: Option<ValueSe>,
}

fn commit(staged: Staged, out: &Path, outcome: &mut Outcome) -> Result<()> {
    outcome.written = staged.commit(out)?;
    Ok(())
}

fn cmd_spectrum(a: &SpectrumArgs) -> Result<Outcome> {
    let spec = load_spec(&a.common.config)?;
    let seed = a.common.seed;
    let mut out = Outcome::default();
    let mut man = manifest("spectrum", &a.common, &spec);
    man.pool_size = Some(a.pool);
    let route = a.route.unwrap_or(match spec.family {
        Family::Diagonal { .. } => RouteArg::Direct,
        _ => RouteArg::Spectral,
    });
    let s_hi = a.s_hi.unwrap_or_else(|| match spec.s_max_hint {
        Some(h) if h <= 6.0 + a.step => h - a.step,
        _ => 6.0,
    });
    let opts = ScanOptions { s_lo: a.s_lo, s_hi, step: a.step, with_se: !a.no_se };
    man.extra = vec![
        format!("route={route:?}"),
        format!("s_lo={}", a.s_lo),
        format!("s_hi={s_hi}"),
        format!("step={}", a.step),
        format!("se={}", opts.with_se),
    ];
    let pool = SamplePool::generate(&spec, seed, a.pool);
    if pool.rejected > 0 {
        out.warnings.push(format!("{} weight draws were rejected by the condition-number cap", pool.rejected));
    }
    let mut output = SpectrumOutput {
        report: ExponentReport::empty(&spec),
        seed,
        pool_size: a.pool,
        grid_size: None,
        kappa_beta: None,
        l_beta: None,
        m_beta: None,
    };
    let mut staged = Staged::new();
    let hash;
    match route {
        RouteArg::Spectral => {
            let g = a.grid.unwrap_or_else(|| default_grid(spec.d));
            man.grid_size = Some(g);
            output.grid_size = Some(g);
            hash = man.hash();
            let grid = SphereGrid::new(spec.d, g, seed)?;
            let builder = OperatorBuilder::new(&grid, &pool);
            output.report = find_exponents(&spec, &MRoute::spectral(&builder), opts)?;
            if let Some(beta) = output.report.beta {
                let sol = power_iterate(&builder.build(beta), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                output.kappa_beta = Some(sol.kappa);
                match compute_l_beta(&grid, &sol, &pool) {
                    Ok(l) => output.l_beta = Some(l.into()),
                    Err(Error::Consistency(msg)) => out.warnings.push(msg),
                    Err(e) => return Err(e),
                }
                if spec.is_similarity() {
                    match compute_m_beta_similarity(&spec, beta, &pool) {
                        Ok(m) => output.m_beta = Some(m.into()),
                        Err(Error::Consistency(msg)) => out.warnings.push(msg),
                        Err(e) => return Err(e),
                    }
                }
                let mut cols: Vec<String> = (1..=spec.d).map(|k| format!("y{k}")).collect();
                cols.extend(["e".into(), "nu".into()]);
                let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
                let rows = (0..grid.len()).map(|i| {
                    let mut r = grid.node(i).to_vec();
                    r.extend([sol.e[i], sol.nu[i]]);
                    r
                });
                staged.add("eigen_beta.csv", io::csv(&cols, rows));
            }
        }
        RouteArg::Direct | RouteArg::Ratio => {
            man.depth = Some(a.depth);
            hash = man.hash();
            let paths = crate::wbp::PathPool::generate(&spec, a.depth, a.pool, seed);
            let r = if route == RouteArg::Direct {
                MRoute::Direct { paths: &paths, n: a.depth }
            } else {
                MRoute::Ratio { paths: &paths, n: a.depth }
            };
            output.report = find_exponents(&spec, &r, opts)?;
        }
    }
    let rep = &output.report;
    staged.add(
        "m_curve.csv",
        io::csv(
            &["s", "m_hat", "se", "kappa", "residual", "iterations"],
            rep.m_curve.iter().map(|p| vec![p.s, p.m_hat, p.se.unwrap_or(f64::NAN), p.kappa, p.residual, p.iterations as f64]),
        ),
    );
    out.lines.push(format!(
        "alpha = {}, beta = {} ({} route)",
        fmt_opt(rep.alpha),
        fmt_opt(rep.beta),
        rep.route
    ));
    out.lines.extend(rep.notes.iter().cloned());
    staged.add_json("exponents.json", &Stamped { manifest_hash: hash, payload: output })?;
    io::stage_manifest(&mut staged, &man)?;
    commit(staged, &a.common.out, &mut out)?;
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("absent".into(), |x| format!("{x:.4}"))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome> {
    let spec = load_spec(&a.common.config)?;
    let seed = a.common.seed;
    let mut out = Outcome::default();
    let mut man = manifest("simulate", &a.common, &spec);
    man.population = Some(a.population);
    man.sweeps = Some(a.sweeps);
    man.extra = vec![format!("init={:?}", a.init)];
    let hash = man.hash();
    if a.population == 0 {
        return Err(Error::Usage("population must be positive".into()));
    }
    let start = match a.init {
        InitArg::Gaussian => Population::gaussian(&spec, a.population, seed),
        InitArg::Zero => Population::constant(&spec, a.population, &vec![0.0; spec.d], seed),
        InitArg::Eigenvector => {
            let pool = SamplePool::generate(&spec, seed, 100_000);
            let r = solve_eigenvector(&pool);
            let v = r
                .vector()
                .ok_or_else(|| Error::Consistency("r = N E[C] r + E[Q] has no solution".into()))?;
            Population::constant(&spec, a.population, v.as_slice(), seed)
        }
    };
    let id = DMatrix::<f64>::identity(spec.d, spec.d);
    let mut rows = Vec::with_capacity(a.sweeps as usize);
    let pop = run_population(&spec, start, a.sweeps, |p| {
        let (res, se) = p.moments().covariance_residual(&id);
        let mut radial = p.radial();
        rows.push(vec![p.generation as f64, res, se, median(&mut radial), p.flagged as f64]);
    })?;
    if pop.flagged > 0 {
        out.warnings.push(format!("{} samples exceed {:e} in magnitude", pop.flagged, crate::wbp::HUGE));
    }
    out.lines.push(format!("generation {} with {} samples of dimension {}", pop.generation, pop.len(), pop.d));
    let mut staged = Staged::new();
    staged.add(
        "diagnostics.csv",
        io::csv(&["generation", "cov_residual_id", "cov_se", "radial_median", "flagged"], rows),
    );
    io::stage_samples(&mut staged, &pop, &hash)?;
    io::stage_manifest(&mut staged, &man)?;
    commit(staged, &a.common.out, &mut out)?;
    Ok(out)
}

/// `1,0;0,1` into unit-length-agnostic vectors of dimension `d`.
pub fn parse_directions(text: Option<&str>, d: usize) -> Result<Vec<Vec<f64>>> {
    let Some(text) = text else {
        return Ok((0..d)
            .map(|k| {
                let mut v = vec![0.0; d];
                v[k] = 1.0;
                v
            })
            .collect());
    };
    text.split(';')
        .map(|part| {
            let v = part
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Usage(format!("direction {part:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != d {
                return Err(Error::Usage(format!("direction {part:?} has {} entries, expected {d}", v.len())));
            }
            if !(norm(&v) > 0.0) {
                return Err(Error::Usage(format!("direction {part:?} is zero")));
            }
            Ok(v)
        })
        .collect()
}

fn read_exponents(path: &Path, spec: &ModelSpec) -> Result<Stamped<SpectrumOutput>> {
    let e: Stamped<SpectrumOutput> = io::read_json(path)?;
    if e.payload.report.spec_hash != spec.hash() {
        return Err(Error::Provenance(format!("{} was computed for a different model", path.display())));
    }
    Ok(e)
}

/// `--beta` wins over the report, with a warning when they disagree.
fn resolve_beta(flag: Option<f64>, stored: Option<&SpectrumOutput>, warnings: &mut Vec<String>) -> Option<f64> {
    let from_report = stored.and_then(|s| s.report.beta);
    if let (Some(b), Some(r)) = (flag, from_report) {
        if (b - r).abs() > BETA_MISMATCH_WARN {
            warnings.push(format!("--beta {b} differs from the exponent report's beta {r:.4} by more than {BETA_MISMATCH_WARN}"));
        }
    }
    flag.or(from_report)
}

fn direction_label(k: usize) -> String {
    format!("x{}", k + 1)
}

#[derive(Debug, Serialize)]
struct TailsOutput {
    beta: Option<f64>,
    generation: u64,
    warnings: Vec<String>,
    radial: TailReport,
    directions: Vec<TailReport>,
    probe: Option<Vec<ProbeResult>>,
}

fn cmd_tails(a: &TailsArgs) -> Result<Outcome> {
    let spec = load_spec(&a.common.config)?;
    let mut out = Outcome::default();
    let (pop, meta) = io::load_samples(&a.samples, &spec)?;
    let exps = a.exponents.as_deref().map(|p| read_exponents(p, &spec)).transpose()?;
    let mut man = manifest("tails", &a.common, &spec);
    man.inputs.push(format!("samples={}", meta.manifest_hash));
    if let Some(e) = &exps {
        man.inputs.push(format!("exponents={}", e.manifest_hash));
    }
    man.extra = vec![
        format!("beta={:?}", a.beta),
        format!("directions={:?}", a.directions),
        format!("k={:?}", a.k),
    ];
    let hash = man.hash();
    let beta = resolve_beta(a.beta, exps.as_ref().map(|e| &e.payload), &mut out.warnings);
    if pop.generation < DEFAULT_BURN_IN {
        out.warnings.push(format!("samples are at generation {} (burn-in is {DEFAULT_BURN_IN})", pop.generation));
    }
    let dirs = parse_directions(a.directions.as_deref(), spec.d)?;
    let mut staged = Staged::new();
    let radial = tail_report(&pop.radial(), None, beta, a.k)?;
    stage_curves(&mut staged, "radial", &radial);
    out.lines.push(format!("radial: hill {:.4} (se {:.4})", radial.hill.index, radial.hill.se));
    let mut reports = Vec::with_capacity(dirs.len());
    for (k, x) in dirs.iter().enumerate() {
        let unit: Vec<f64> = x.iter().map(|v| v / norm(x)).collect();
        let values: Vec<f64> = pop.project(&unit).iter().map(|v| v.abs()).collect();
        let r = tail_report(&values, Some(unit), beta, a.k)?;
        stage_curves(&mut staged, &direction_label(k), &r);
        out.lines.push(format!("{}: hill {:.4} (se {:.4})", direction_label(k), r.hill.index, r.hill.se));
        reports.push(r);
    }
    let probe = match beta {
        Some(b) if pop.len() >= 1024 => Some(moment_divergence_probe(&pop.radial(), &[b])?),
        _ => None,
    };
    let payload = TailsOutput {
        beta,
        generation: pop.generation,
        warnings: out.warnings.clone(),
        radial,
        directions: reports,
        probe,
    };
    staged.add_json("tails.json", &Stamped { manifest_hash: hash, payload })?;
    io::stage_manifest(&mut staged, &man)?;
    commit(staged, &a.common.out, &mut out)?;
    Ok(out)
}

fn curve_csv_name(kind: &str, label: &str) -> String {
    format!("{kind}_{label}.csv")
}

fn stage_curves(staged: &mut Staged, label: &str, r: &TailReport) {
    staged.add(curve_csv_name("survival", label), io::curve_csv(&r.survival));
    if let Some(p) = &r.plateau {
        staged.add(curve_csv_name("plateau", label), io::curve_csv(p));
    }
}

#[derive(Debug, Serialize)]
struct ConstantsOutput {
    beta: f64,
    alpha: Option<f64>,
    grid_size: usize,
    pool_size: usize,
    kappa_beta: f64,
    l_beta: ValueSe,
    m_beta: Option<ValueSe>,
    k: Vec<ConstantEstimate>,
    k_radial: Option<ConstantEstimate>,
    sigma_s: Option<ConstantEstimate>,
    beta2: Option<Vec<ConstantEstimate>>,
    goldie: Vec<GoldieReport>,
    probe: Option<Vec<ProbeResult>>,
    warnings: Vec<String>,
}

fn cmd_constants(a: &ConstantsArgs) -> Result<Outcome> {
    let spec = load_spec(&a.common.config)?;
    let seed = a.common.seed;
    let mut out = Outcome::default();
    let (pop, meta) = io::load_samples(&a.samples, &spec)?;
    let exps = a.exponents.as_deref().map(|p| read_exponents(p, &spec)).transpose()?;
    let g = a.grid.unwrap_or_else(|| default_grid(spec.d));
    let mut man = manifest("constants", &a.common, &spec);
    man.pool_size = Some(a.pool);
    man.grid_size = Some(g);
    man.inputs.push(format!("samples={}", meta.manifest_hash));
    if let Some(e) = &exps {
        man.inputs.push(format!("exponents={}", e.manifest_hash));
    }
    man.extra = vec![
        format!("beta={:?}", a.beta),
        format!("directions={:?}", a.directions),
        format!("goldie={:?}", a.goldie),
    ];
    let hash = man.hash();
    let beta = resolve_beta(a.beta, exps.as_ref().map(|e| &e.payload), &mut out.warnings)
        .ok_or_else(|| Error::Usage("no beta: pass --beta or an exponent report with beta".into()))?;
    let alpha = exps.as_ref().and_then(|e| e.payload.report.alpha);
    if pop.generation < DEFAULT_BURN_IN {
        out.warnings.push(format!("samples are at generation {} (burn-in is {DEFAULT_BURN_IN})", pop.generation));
    }
    let dirs = parse_directions(a.directions.as_deref(), spec.d)?;
    let grid = SphereGrid::new(spec.d, g, seed)?;
    let pool = SamplePool::generate(&spec, seed, a.pool);
    // paired draws get their own weights, independent of the operator's
    let pairs = SamplePool::generate(&spec, splitmix64(seed ^ TAG_PAIR), a.pool.min(pop.len() / spec.branches).max(1));
    let builder = OperatorBuilder::new(&grid, &pool);
    let sol = power_iterate(&builder.build(beta), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let l = compute_l_beta(&grid, &sol, &pool)?;
    let mut k = constant_k(&spec, &grid, &sol, l, &pop, &pairs, &dirs)?;
    let (mut k_radial, mut sig, mut m_beta) = (None, None, None);
    if spec.is_similarity() {
        let m = compute_m_beta_similarity(&spec, beta, &pool)?;
        m_beta = Some(m.into());
        k_radial = Some(constant_k_radial(&spec, beta, l, &pop, &pairs)?);
        sig = Some(sigma_s(&spec, beta, m, &pop, &pairs)?);
    }
    let beta2 = if (beta - 2.0).abs() <= BETA2_TOL {
        let sol2 = power_iterate(&builder.build(2.0), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let l2 = compute_l_beta(&grid, &sol2, &pool)?;
        match beta2_constant(&spec, &grid, &sol2, l2, beta, &pool, &dirs) {
            Ok(v) => Some(v),
            Err(Error::Usage(msg)) => {
                out.warnings.push(format!("beta = 2 formula not applied: {msg}"));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let goldie = a
        .goldie
        .iter()
        .map(|&s| goldie_identity_residual(&spec, s, alpha, Some(beta), &pop, &pairs))
        .collect::<Result<Vec<_>>>()?;
    for gr in &goldie {
        if let Some(why) = &gr.skipped {
            out.warnings.push(format!("Goldie check at s = {} skipped: {why}", gr.s));
        }
    }
    let probe = if pop.len() >= 1024 { Some(moment_divergence_probe(&pop.radial(), &[beta])?) } else { None };
    if let Some(p) = probe.as_ref().and_then(|p| p.first()) {
        for est in k.iter_mut().chain(k_radial.iter_mut()) {
            if let Some(flag) = positivity_gate(est, p) {
                est.flags.push(flag);
            }
        }
    }
    for (x, est) in k.iter().enumerate() {
        out.lines.push(format!("K({}) = {:.6e} (se {:.2e})", direction_label(x), est.value, est.se));
    }
    if let (Some(kr), Some(s)) = (&k_radial, &sig) {
        out.lines.push(format!("beta K_radial = {:.6e}, sigma(S) = {:.6e}", beta * kr.value, s.value));
    }
    for gr in &goldie {
        if let Some(v) = &gr.values {
            out.lines.push(format!("Goldie s = {}: lhs {:.6e} rhs {:.6e} (combined se {:.2e})", gr.s, v.lhs, v.rhs, v.combined_se));
        }
    }
    let payload = ConstantsOutput {
        beta,
        alpha,
        grid_size: g,
        pool_size: a.pool,
        kappa_beta: sol.kappa,
        l_beta: l.into(),
        m_beta,
        k,
        k_radial,
        sigma_s: sig,
        beta2,
        goldie,
        probe,
        warnings: out.warnings.clone(),
    };
    let mut staged = Staged::new();
    staged.add_json("constants.json", &Stamped { manifest_hash: hash, payload })?;
    io::stage_manifest(&mut staged, &man)?;
    commit(staged, &a.common.out, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: String,
    pub spec_hash: Option<String>,
    pub pass: bool,
    pub checks: Vec<Check>,
}

/// Pool, grid and population sizes of the quick checks.
const VALIDATE_POOL: usize = 2_000;
const VALIDATE_POPULATION: usize = 2_000;

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

fn failed(name: &str, e: &Error) -> Check {
    check(name, false, e.to_string())
}

/// Runs every structural check that applies to the model.
pub fn validate(config: &Path, seed: u64) -> ValidationReport {
    let mut checks = Vec::new();
    let spec = match ModelSpec::from_file(config) {
        Ok(s) => s,
        Err(e) => {
            checks.push(failed("config", &e));
            return ValidationReport { config: config.display().to_string(), spec_hash: None, pass: false, checks };
        }
    };
    let issues = spec.issues();
    checks.push(check("structure", issues.is_empty(), if issues.is_empty() { "ok".into() } else { issues.join("; ") }));
    if issues.is_empty() {
        validate_numerics(&spec, seed, &mut checks);
    }
    ValidationReport {
        config: config.display().to_string(),
        spec_hash: Some(spec.hash()),
        pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

fn validate_numerics(spec: &ModelSpec, seed: u64, checks: &mut Vec<Check>) {
    let d = spec.d;
    let pool = SamplePool::generate(spec, seed, VALIDATE_POOL);
    let finite = pool.samples.iter().all(|w| w.c.iter().all(|c| c.iter().all(|v| v.is_finite())));
    checks.push(check("pool finite", finite, format!("{} draws", pool.len())));
    if let Family::Maxwell { .. } = spec.family {
        let id = DMatrix::<f64>::identity(d, d);
        let defect = pool
            .samples
            .iter()
            .map(|w| (w.c.iter().fold(DMatrix::zeros(d, d), |acc, c| acc + c) - &id).amax())
            .fold(0.0, f64::max);
        checks.push(check("maxwell weights sum to identity", defect <= 1e-12, format!("max defect {defect:.3e}")));
        let cr = covariance_residual(&pool, &id);
        checks.push(check(
            "identity covariance solves the covariance equation",
            cr.residual <= 3.0 * cr.se + 1e-12,
            format!("residual {:.3e} (se {:.3e})", cr.residual, cr.se),
        ));
    }
    let grid = match SphereGrid::new(d, default_grid(d).min(256), seed) {
        Ok(g) => g,
        Err(e) => return checks.push(failed("grid", &e)),
    };
    let builder = OperatorBuilder::new(&grid, &pool);
    let t0 = builder.build(0.0);
    let worst = t0.row_sums().iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    checks.push(check("T_0 rows sum to one", worst == 0.0, format!("max |row sum - 1| = {worst:.3e}")));
    match power_iterate(&builder.build(1.0), DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(sol) => {
            let positive = sol.e.iter().all(|v| *v > 0.0);
            checks.push(check("eigenfunction positive at s = 1", positive, format!("min e = {:.3e}", min(&sol.e))));
            let tol = 5.0 * sol.residual.max(DEFAULT_TOL);
            let asym = (0..grid.len())
                .map(|i| (sol.e[i] - sol.e[grid.antipode(i)]).abs() / sol.e[i].abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            checks.push(check("eigenfunction centrally symmetric", asym <= tol, format!("max relative gap {asym:.3e}")));
            let mass: f64 = sol.nu.iter().sum();
            let pairing: f64 = sol.e.iter().zip(&sol.nu).map(|(e, n)| e * n).sum();
            checks.push(check("eigenmeasure mass one", (mass - 1.0).abs() <= 1e-8, format!("mass {mass:.12}")));
            checks.push(check("sum e nu = 1", (pairing - 1.0).abs() <= 1e-8, format!("sum {pairing:.12}")));
        }
        Err(e) => checks.push(failed("power iteration at s = 1", &e)),
    }
    checks.push(log_convexity(spec, &builder));
    match permutation_check(spec, VALIDATE_POPULATION, 5, seed, &{
        let mut x = vec![0.0; d];
        x[0] = 1.0;
        x
    }) {
        Ok(r) => checks.push(check(
            "branch permutation invariance",
            r.pass,
            format!("KS distance {:.4} vs 99% threshold {:.4}", r.distance, r.threshold),
        )),
        Err(e) => checks.push(failed("branch permutation invariance", &e)),
    }
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Midpoint test of `log m_hat` on 20 triples. Entries of the discretized
/// operator are sums of exponentials in `s`, so its spectral radius is
/// log-convex on any fixed pool.
fn log_convexity(spec: &ModelSpec, builder: &OperatorBuilder<'_>) -> Check {
    let hi = spec.s_max_hint.map_or(3.0, |h| (0.9 * h).min(3.0));
    let lm = |s: f64| power_iterate(&builder.build(s), 1e-12, DEFAULT_MAX_ITER).map(|sol| sol.kappa.ln());
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20 {
        let a = 0.1 + (hi - 0.1) * k as f64 / 40.0;
        let b = a + (hi - a) * 0.5 + 0.05;
        let b = b.min(hi);
        let gap = match (lm(a), lm(b), lm(0.5 * (a + b))) {
            (Ok(la), Ok(lb), Ok(lmid)) => lmid - 0.5 * (la + lb),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return failed("log-convexity of m_hat", &e),
        };
        worst = worst.max(gap);
    }
    check("log-convexity of m_hat", worst <= 1e-9, format!("max midpoint excess {worst:.3e}"))
}

fn cmd_validate(a: &ValidateArgs) -> Result<Outcome> {
    let report = validate(&a.config, a.seed);
    let mut out = Outcome::default();
    for c in &report.checks {
        out.lines.push(format!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    out.lines.push(if report.pass { "valid".into() } else { "invalid".into() });
    let mut staged = Staged::new();
    staged.add_json("validate.json", &report)?;
    commit(staged, &a.out, &mut out)?;
    Ok(out)
}

/// Runs the parsed command and maps the result to a process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for l in &outcome.lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
