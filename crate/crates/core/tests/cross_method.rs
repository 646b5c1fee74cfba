use smoothlab::models::{ModelSpec, SamplePool};
use smoothlab::spectral::{
    compute_m_beta_similarity, estimate_m_ratio, m_beta_functional, MRoute, OperatorBuilder, SphereGrid,
};
use smoothlab::stats::mean_se;
use smoothlab::tails::{constant_k_radial, hill_estimate, plateau_level, sigma_s};
use smoothlab::wbp::{run_population, sample_r_recursive, PathPool, Population, DEFAULT_TREE_BUDGET};

fn lognormal(extra: &str) -> ModelSpec {
    let s2 = 2.0 * 2f64.ln() / 3.0;
    ModelSpec::parse(&format!(
        "family=similarity\nd=2\nt.mu={}\nt.sigma={}\n{extra}",
        -2.0 * s2,
        s2.sqrt()
    ))
    .unwrap()
}

fn gamma(x: f64) -> f64 {
    // Lanczos, g = 7
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let a = C[1..].iter().enumerate().fold(C[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

#[test]
fn tree_recursion_matches_population_dynamics() {
    let spec = lognormal("q.dist=gaussian\nq.mean=0,0\nq.scale=1\n");
    let tree = sample_r_recursive(&spec, 12, 10_000, 3, &[0.0, 0.0], DEFAULT_TREE_BUDGET).unwrap();
    let tree_norms: Vec<f64> = tree.chunks_exact(2).map(|r| r[0].hypot(r[1])).collect();
    let pop = run_population(&spec, Population::gaussian(&spec, 100_000, 4), 50, |_| ()).unwrap();
    let (a, _) = mean_se(&tree_norms);
    let (b, _) = mean_se(&pop.radial());
    assert!((a - b).abs() < 0.1 * b, "tree {a} vs population {b}");
}

#[test]
fn spectral_route_matches_gaussian_closed_form() {
    // i.i.d. N(0, c^2) entries: |xC| / c is chi with d degrees of freedom
    // and the direction of xC is uniform, so m(s) = N E|xC|^s
    let (d, c) = (2.0f64, 0.5f64);
    let spec = ModelSpec::parse("family=general\nd=2\nc.scale=0.5\n").unwrap();
    let pool = SamplePool::generate(&spec, 1, 50_000);
    let grid = SphereGrid::new(2, 64, 0).unwrap();
    let builder = OperatorBuilder::new(&grid, &pool);
    let route = MRoute::spectral(&builder);
    let paths = PathPool::generate(&spec, 30, 50_000, 2);
    for s in [0.5, 1.0, 2.0, 3.0] {
        let exact = 2.0 * c.powf(s) * 2f64.powf(s / 2.0) * gamma((d + s) / 2.0) / gamma(d / 2.0);
        let p = route.eval_with_se(2, s).unwrap();
        assert!((p.m_hat - exact).abs() < 0.01 * exact, "s={s}: spectral {} vs {exact}", p.m_hat);
        if s <= 1.0 {
            let (m, se) = estimate_m_ratio(&paths, 2, s, 30).unwrap();
            assert!((m - exact).abs() < 3.0 * se + 0.01 * exact, "s={s}: ratio {m} ({se}) vs {exact}");
            assert!((m - p.m_hat).abs() < 0.02 * exact, "s={s}: ratio {m} vs spectral {}", p.m_hat);
        }
    }
}

#[test]
fn lognormal_m_beta_matches_gaussian_identity() {
    let spec = lognormal("");
    let s2 = 2.0 * 2f64.ln() / 3.0;
    let mu = -2.0 * s2;
    let exact = 2.0 * (3.0 * mu + 4.5 * s2).exp() * (mu + 3.0 * s2);
    let pool = SamplePool::generate(&spec, 5, 200_000);
    let (m, se) = compute_m_beta_similarity(&spec, 3.0, &pool).unwrap();
    assert!((m - exact).abs() < 3.0 * se, "{m} ({se}) vs {exact}");
    assert_eq!(m_beta_functional(&pool, 3.0).0, m);
}

#[test]
fn rotation_with_immigration_has_positive_sigma() {
    let spec = lognormal("rotation=fixed\nrotation.turns=0.125\nq.dist=gaussian\nq.mean=0,0\nq.scale=1\n");
    let pop = run_population(&spec, Population::gaussian(&spec, 1 << 18, 8), 50, |_| ()).unwrap();
    let pool = SamplePool::generate(&spec, 9, 1 << 17);
    let m = compute_m_beta_similarity(&spec, 3.0, &pool).unwrap();
    let sig = sigma_s(&spec, 3.0, m, &pop, &pool).unwrap();
    assert!(sig.value > 3.0 * sig.se, "{sig:?}");
    let hill = hill_estimate(&pop.radial(), 2_000).unwrap();
    assert!((hill.index - 3.0).abs() < 0.45, "{hill:?}");
}

#[test]
fn zero_solution_has_no_tail_constant() {
    // Q = 0 and R = 0: the bracket vanishes draw by draw
    let spec = lognormal("rotation=identity\n");
    let pool = SamplePool::generate(&spec, 1, 1000);
    let zero = Population::constant(&spec, 4096, &[0.0, 0.0], 0);
    let k = constant_k_radial(&spec, 3.0, (0.25, 0.01), &zero, &pool).unwrap();
    assert_eq!((k.value, k.se), (0.0, 0.0));
    let sig = sigma_s(&spec, 3.0, (0.5, 0.01), &zero, &pool).unwrap();
    assert!(sig.value.abs() <= 3.0 * sig.se + 1e-300);
}

#[test]
fn homogeneous_solution_plateau_matches_sigma() {
    // Q = 0 with scalar similarities and E R = (1, 0): the alpha = 1 case,
    // where the tail index of R is beta
    let spec = lognormal("rotation=identity\n");
    let start = Population::constant(&spec, 1 << 18, &[1.0, 0.0], 2);
    let pop = run_population(&spec, start, 50, |_| ()).unwrap();
    let pool = SamplePool::generate(&spec, 3, 1 << 17);
    let m = compute_m_beta_similarity(&spec, 3.0, &pool).unwrap();
    let sig = sigma_s(&spec, 3.0, m, &pop, &pool).unwrap();
    let (plateau, _) = plateau_level(&pop.radial(), 3.0).unwrap();
    let target = sig.value / 3.0;
    assert!((plateau - target).abs() < 0.25 * target, "plateau {plateau} vs sigma/beta {target} ({sig:?})");
}
