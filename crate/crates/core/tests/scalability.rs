mod common;

use common::table;
use decitree_core::builders::BuilderRegistry;
use decitree_core::problem::QuboMatrix;
use decitree_core::scalability::{
    analyze_qubo, assess, classify, disadvantage_check, disadvantage_check_log10, estimate_shots, fit_scaling,
    fit_threshold, format_log10, measure_kappa, recommended_config, write_outputs, Assessment, Feasibility,
    FitError, Hypothesis, KappaFit, Recommendation, ScalingDatabase, ScalingFit, ThresholdPoint,
    ASSESSMENT_FILE, RECOMMENDED_CONFIG_FILE,
};
use decitree_core::tree::RecommendedConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn logistic_curve(eps_star: f64, w: f64, lo: f64, hi: f64, k: usize) -> Vec<(f64, f64)> {
    (0..k)
        .map(|i| {
            let e = lo * (hi / lo).powf(i as f64 / (k - 1) as f64);
            (e, 1.0 / (1.0 + ((e / eps_star).ln() / w).exp()))
        })
        .collect()
}

#[test]
fn logistic_threshold_round_trip() {
    for &(eps, w) in &[(0.1, 0.3), (0.02, 0.5), (0.7, 0.2), (0.3, 1.0)] {
        let p = fit_threshold(5, &logistic_curve(eps, w, 0.005, 5.0, 10), 20).unwrap();
        assert!((p.epsilon_star - eps).abs() / eps < 0.02, "{eps} -> {}", p.epsilon_star);
    }
}

#[test]
fn threshold_errors() {
    let flat_high: Vec<(f64, f64)> = [0.01, 0.1, 1.0, 3.0].iter().map(|&e| (e, 0.9)).collect();
    assert_eq!(fit_threshold(4, &flat_high, 10).unwrap_err(), FitError::NoCrossing);
    let flat_low: Vec<(f64, f64)> = [0.01, 0.1, 1.0, 3.0].iter().map(|&e| (e, 0.2)).collect();
    assert_eq!(fit_threshold(4, &flat_low, 10).unwrap_err(), FitError::NeverSucceeds);
}

fn law(h: Hypothesis, a: f64, b: f64, n: f64) -> f64 {
    match h {
        Hypothesis::Exponential => a * (-b * n).exp(),
        Hypothesis::PowerLaw => a * n.powf(-b),
        Hypothesis::Logarithmic => a - b * n.ln(),
    }
}

const SIZES: std::ops::RangeInclusive<usize> = 3..=14;
const LAWS: [(Hypothesis, f64, f64); 3] = [
    (Hypothesis::Exponential, 0.8, 0.15),
    (Hypothesis::PowerLaw, 1.5, 0.9),
    (Hypothesis::Logarithmic, 1.0, 0.25),
];

fn points(h: Hypothesis, a: f64, b: f64, noise: Option<&mut ChaCha8Rng>) -> Vec<ThresholdPoint> {
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut rng = noise;
    SIZES
        .map(|n| {
            let e = law(h, a, b, n as f64);
            let (eps, se) = match rng.as_deref_mut() {
                Some(r) => (e * (1.0 + 0.05 * z.sample(r)), 0.05 * e),
                None => (e, 0.0),
            };
            ThresholdPoint { n, epsilon_star: eps, std_error: se, width: 0.3, trials: 20, success_curve: Vec::new() }
        })
        .collect()
}

#[test]
fn noiseless_scaling_laws_are_recovered() {
    for (h, a, b) in LAWS {
        let f = fit_scaling(&points(h, a, b, None), h).unwrap();
        assert!((f.a - a).abs() < 1e-6 && (f.b - b).abs() < 1e-6, "{h:?}: {} {}", f.a, f.b);
        assert!(f.valid);
        assert!(f.r_squared > 0.999_999);
    }
}

#[test]
fn noisy_scaling_laws_fall_within_two_standard_errors() {
    let runs = 200;
    for (h, a, b) in LAWS {
        let mut hits = 0;
        for seed in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = fit_scaling(&points(h, a, b, Some(&mut rng)), h).unwrap();
            let (sa, sb) = (f.covariance[0][0].sqrt(), f.covariance[1][1].sqrt());
            if (f.a - a).abs() <= 2.0 * sa && (f.b - b).abs() <= 2.0 * sb {
                hits += 1;
            }
        }
        // nominal joint coverage is about 0.9 with 10 degrees of freedom
        let rate = hits as f64 / runs as f64;
        assert!(rate >= 0.85, "{h:?}: {rate}");
    }
}

fn unit_kappa() -> KappaFit {
    KappaFit { a: 1.0, b: 0.0, covariance: [[0.0; 2]; 2], samples: Vec::new() }
}

fn exact_fit(h: Hypothesis, a: f64, b: f64) -> ScalingFit {
    ScalingFit { hypothesis: h, a, b, covariance: [[0.0; 2]; 2], r_squared: 1.0, valid: true, n_range: (3, 8) }
}

#[test]
fn analytic_shot_inversion() {
    let e = estimate_shots(&exact_fit(Hypothesis::Exponential, 0.5, 0.1), &unit_kappa(), 10);
    assert!((e.epsilon_star.unwrap() - 0.5 * (-1.0f64).exp()).abs() < 1e-12);
    assert_eq!(e.point, Some(30.0));
    assert_eq!(e.low, Some(30.0));
    assert_eq!(e.high, Some(30.0));
}

#[test]
fn logarithmic_domain_is_infinite_and_infeasible() {
    let f = exact_fit(Hypothesis::Logarithmic, 1.0, 0.5);
    let e = estimate_shots(&f, &unit_kappa(), 20);
    assert!(e.domain_exceeded && e.point.is_none());
    assert_eq!(classify(&[e], 0, 20, Some(10.0)), Feasibility::Infeasible);
}

#[test]
fn uncertainty_interval_brackets_the_point() {
    let mut f = exact_fit(Hypothesis::Exponential, 0.5, 0.1);
    f.covariance = [[1e-3, 0.0], [0.0, 1e-5]];
    let e = estimate_shots(&f, &unit_kappa(), 10);
    let (lo, p, hi) = (e.low.unwrap(), e.point.unwrap(), e.high.unwrap());
    assert!(lo < p && p < hi);
    // σ(ln shots) = 2·sqrt(var(ln A) + n² var(B)); var(ln A) = var(A)/A²
    let sigma = 2.0 * (1e-3 / 0.25 + 100.0 * 1e-5f64).sqrt();
    assert!(((hi / p).ln() - 1.96 * sigma).abs() < 1e-9);
}

proptest! {
    #[test]
    fn inversion_is_consistent(
        a in 0.05f64..2.0, b in 0.0f64..0.3, ka in 0.2f64..3.0, kb in 0.0f64..0.05,
        n in 3usize..100, hi in 0usize..3,
    ) {
        let h = Hypothesis::ALL[hi];
        let fit = exact_fit(h, a, if h == Hypothesis::Logarithmic { b * 0.2 } else { b });
        let kappa = KappaFit { a: ka, b: kb, covariance: [[0.0; 2]; 2], samples: Vec::new() };
        let e = estimate_shots(&fit, &kappa, n);
        if let (Some(p), Some(eps)) = (e.point, e.epsilon_star) {
            let k = kappa.kappa(n as f64);
            prop_assert!(k / p.sqrt() <= eps * (1.0 + 1e-12));
            if p > 1.0 && p < 1e15 {
                prop_assert!(k / (p - 1.0).sqrt() > eps * (1.0 - 1e-12));
            }
        }
    }
}

fn exact_feasible(n: u32, s: u64, c: u64) -> bool {
    (s as u128) * (c as u128) < (1u128 << n)
}

#[test]
fn disadvantage_boundary_matches_integer_arithmetic() {
    let mut checked = 0;
    for n in 1..=64u32 {
        let mut grid: Vec<u64> = vec![1, 2, 3, 5, 7, 10, 1000, 1024, 999_999, 1_900_000, 100_000];
        for k in 0..=n.min(63) {
            let p = 1u64 << k;
            grid.extend([p, p - 1, p + 1]);
        }
        for &s in &grid {
            for &c in &grid {
                if s == 0 || c == 0 {
                    continue;
                }
                assert_eq!(disadvantage_check(n, s, c), exact_feasible(n, s, c), "n={n} s={s} c={c}");
                let (ls, lc) = ((s as f64).log10(), (c as f64).log10());
                let gap = (ls + lc) / std::f64::consts::LOG10_2 - n as f64;
                if gap.abs() > 1e-6 {
                    assert_eq!(disadvantage_check_log10(n as usize, ls, lc), exact_feasible(n, s, c));
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 100_000);
    // product exactly 2^n is not strictly below the boundary
    assert!(!disadvantage_check(10, 1024, 1));
    assert!(!disadvantage_check(60, 1 << 30, 1 << 30));
    assert!(disadvantage_check(60, (1 << 30) - 1, 1 << 30));
    assert!(!disadvantage_check_log10(60, f64::INFINITY, 5.0));
}

#[test]
fn sixty_variable_worked_example() {
    // 1.9e6 shots · 1e5 calls = 1.9e11 against 2^60 ≈ 1.153e18
    assert!(disadvantage_check(60, 1_900_000, 100_000));
    assert_eq!(format_log10(60.0 * std::f64::consts::LOG10_2), "1.2x10^18");
    assert!((2f64.powi(60) - 1.152_921_504_606_847e18).abs() < 1e3);
}

#[test]
fn uniform_state_has_unit_kappa() {
    let q = QuboMatrix::from_rows(&[
        vec![1.0, -2.0, 0.5, 0.0],
        vec![0.0, -1.0, 1.5, -0.5],
        vec![0.0, 0.0, 2.0, 1.0],
        vec![0.0, 0.0, 0.0, -3.0],
    ])
    .unwrap();
    let uniform = vec![1.0 / 16.0; 16];
    let k = measure_kappa(&q, &uniform, 256, 400, 3).unwrap();
    assert!((k - 1.0).abs() < 0.1, "{k}");
    let mut basis = vec![0.0; 16];
    basis[5] = 1.0;
    assert_eq!(measure_kappa(&q, &basis, 256, 50, 3).unwrap(), 0.0);
}

fn table_assessment() -> Assessment {
    assess(&table::qubo(), Some("maxcut"), None, &table::database(), &BuilderRegistry::default(), None).unwrap()
}

#[test]
fn table_statuses_are_reproduced() {
    let a = table_assessment();
    assert_eq!(a.problem.n, 60);
    assert_eq!(a.problem.grid_density, table::DENSITY);
    assert_eq!(a.entries.len(), table::ROWS.len());
    for (vqa, opt, value, status) in table::ROWS {
        let e = a.entries.iter().find(|e| e.vqa == *vqa && e.optimizer == *opt).unwrap();
        assert_eq!(e.status, *status, "{vqa} {opt}");
        assert_eq!(e.n_calls, Some(table::CALLS));
        if let Some(v) = value {
            assert_eq!(e.worst_hypothesis, Some(Hypothesis::Exponential));
            let l = e.worst_case_log10.unwrap();
            assert!((l - v.log10()).abs() < 1e-6, "{vqa} {opt}: {l}");
            assert_eq!(format_log10(l), format_log10(v.log10()));
        }
    }
    match &a.recommendation {
        Recommendation::Combination { vqa, optimizer, .. } => assert_eq!((vqa.as_str(), optimizer.as_str()), ("vqe", "ngd")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn table_renders_grouped_by_vqa() {
    let text = table_assessment().render_table();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[2].starts_with("vqe (layers=2)") && lines[2].contains("ngd") && lines[2].contains("1.9x10^6"));
    assert!(lines[2].ends_with("feasible"));
    assert!(lines[3].contains("powell") && lines[3].contains("6.5x10^12"));
    assert!(lines[4].contains("nft") && lines[4].contains("1.9x10^15") && lines[4].ends_with("infeasible"));
    assert!(lines[5].contains("n.c.") && lines[5].ends_with("--"));
    for needle in ["5.8x10^14", "1.4x10^22", "8.3x10^51", "3.6x10^80", "1.6x10^25", "1.3x10^145", "9.1x10^19", "1.5x10^62", "2.6x10^144"] {
        assert!(text.contains(needle), "{needle}\n{text}");
    }
    assert_eq!(text.matches("n.c.").count(), 13);
    assert!(text.contains("recommended: vqe + ngd"));
}

#[test]
fn outputs_are_written_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let a = table_assessment();
    let (json, yaml) = write_outputs(&a, dir.path(), 20).unwrap();
    assert_eq!(json.file_name().unwrap(), ASSESSMENT_FILE);
    assert_eq!(yaml.file_name().unwrap(), RECOMMENDED_CONFIG_FILE);
    let back: Assessment = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, a);
    let cfg = RecommendedConfig::from_yaml(&std::fs::read_to_string(yaml).unwrap()).unwrap();
    assert_eq!(cfg.path.get("algorithm").unwrap(), "classical");
    assert!(!cfg.notes.is_empty());
}

#[test]
fn unimplemented_recommendation_is_substituted() {
    let mut db = table::database();
    for r in db.records.iter_mut().filter(|r| r.vqa == "vqe" && r.optimizer == "spsa") {
        r.never_succeeds.clear();
        if let Some(f) = r.fit.as_mut() {
            if f.hypothesis == Hypothesis::Exponential {
                *f = exact_fit(Hypothesis::Exponential, 1.0, 1e8f64.ln() / 120.0);
            }
        }
    }
    let a = assess(&table::qubo(), Some("maxcut"), None, &db, &BuilderRegistry::default(), None).unwrap();
    let cfg = recommended_config(&a, 64);
    assert_eq!(cfg.path.get("algorithm").unwrap(), "vqe");
    assert_eq!(cfg.path.get("optimizer").unwrap(), "spsa");
    // ceil of a value that is 1e8 up to rounding
    let shots = cfg.path.get("shots").unwrap().as_u64().unwrap();
    assert!((100_000_000..=100_000_001).contains(&shots), "{shots}");
    assert!(cfg.notes.iter().any(|n| n.contains("vqe + ngd is not implemented")));
}

#[test]
fn nothing_feasible_falls_back_to_classical() {
    let mut db = table::database();
    db.records.retain(|r| r.vqa != "vqe");
    let a = assess(&table::qubo(), Some("maxcut"), None, &db, &BuilderRegistry::default(), None).unwrap();
    assert!(matches!(a.recommendation, Recommendation::ClassicalFallback { .. }));
    assert_eq!(recommended_config(&a, 64).path.get("algorithm").unwrap(), "classical");
}

#[test]
fn density_snaps_to_nearest_grid_point() {
    let mut db = table::database();
    let extra: Vec<_> = db.records.iter().cloned().map(|mut r| {
        r.density = 0.6;
        r
    }).collect();
    db.records.extend(extra);
    let analysis = analyze_qubo(&table::qubo(), Some("maxcut"), None, &db).unwrap();
    assert_eq!(analysis.characteristics.grid_density, 0.4);
    let empty = QuboMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    assert!(analyze_qubo(&empty, None, None, &db).is_err());
    assert!(analyze_qubo(&table::qubo(), None, None, &db).is_err());
}

#[test]
fn database_round_trips_and_merges() {
    let db = table::database();
    let back = ScalingDatabase::from_json(&db.to_json()).unwrap();
    assert_eq!(back.records.len(), db.records.len());
    let mut merged = back.clone();
    assert_eq!(merged.merge(db.clone()), 0);
    let mut other = table::database();
    for r in other.records.iter_mut() {
        r.density = 0.8;
    }
    assert_eq!(merged.merge(other), db.records.len());
    assert!(ScalingDatabase::from_json(r#"{"schema":"other","records":[]}"#).is_err());
}
