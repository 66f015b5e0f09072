use approx::assert_relative_eq;
use dirvr::instances::{gen_boundary_instance, gen_interior_instance, GeneratorConfig};
use dirvr::linalg::log_det_spd;
use dirvr::maximizer::*;
use dirvr::objectives::{KlObjective, LdaInstance};
use dirvr::simplex::SimplexPoint;
use nalgebra::DMatrix;

fn interior(seed: u64, k: usize) -> (LdaInstance, SimplexPoint) {
    let cfg = GeneratorConfig {
        k,
        v: 500,
        seed,
        ..Default::default()
    };
    let p = gen_interior_instance(&cfg, cfg.stream()).unwrap();
    (p.instance, p.theta_star)
}

#[test]
fn cover_trace_is_monotone() {
    for seed in 0..20 {
        let (inst, _) = interior(seed, 5);
        let run = cover_maximize(&inst, &CoverConfig::default(), &SimplexPoint::uniform(5)).unwrap();
        for w in run.trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-13, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn cover_recovers_planted_interior_maximizer() {
    for seed in 0..100 {
        let k = 2 + seed as usize % 4;
        let (inst, truth) = interior(seed, k);
        let (run, report) = maximize(&inst, &CoverConfig::default()).unwrap();
        assert!(run.iterations <= 10_000);
        assert_eq!(report.m, 0);
        assert!(report.kkt_residual < 1e-6);
        let err = truth.iter().zip(report.theta_star.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn k2_maximizer_agrees_with_grid_search() {
    let (inst, _) = interior(77, 2);
    let (_, report) = maximize(&inst, &CoverConfig::default()).unwrap();
    let best = (1..100_000)
        .map(|i| i as f64 / 100_000.0)
        .max_by(|a, b| inst.value(&[*a, 1.0 - a]).total_cmp(&inst.value(&[*b, 1.0 - b])))
        .unwrap();
    assert!((best - report.theta_star[0]).abs() < 2e-5);
}

#[test]
fn boundary_plant_and_recover() {
    for m in [1, 2] {
        for seed in 0..100 {
            let cfg = GeneratorConfig {
                k: 5,
                v: 1000,
                m,
                seed,
                ..Default::default()
            };
            let planted = gen_boundary_instance(&cfg, cfg.stream()).unwrap();
            let (_, report) = maximize(&planted.instance, &CoverConfig::default()).unwrap();
            assert_eq!(report.active_set, planted.active_set, "m {m} seed {seed}");
            for (got, want) in report.lambda.iter().zip(&planted.lambda) {
                assert!((got - want).abs() < 1e-4, "m {m} seed {seed}: {got} vs {want}");
            }
            for (&i, &l) in report.active_set.iter().zip(&report.lambda) {
                assert!(l >= 0.0);
                assert!(l * report.theta_star[i] <= 1e-8);
            }
        }
    }
}

#[test]
fn basis_examples() {
    let u = critical_cone_basis(3, 0).unwrap();
    assert_eq!(u, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]));
    let u = critical_cone_basis(3, 1).unwrap();
    assert_eq!(u, DMatrix::from_row_slice(3, 1, &[0.0, 1.0, -1.0]));
    assert_eq!(critical_cone_basis(3, 2).unwrap().ncols(), 0);
    for k in 2..7 {
        for m in 0..k - 1 {
            let u = critical_cone_basis(k, m).unwrap();
            for c in 0..u.ncols() {
                assert_eq!(u.column(c).sum(), 0.0);
                assert!((0..m).all(|r| u[(r, c)] == 0.0));
            }
        }
    }
}

#[test]
fn reduced_hessian_examples() {
    let u = critical_cone_basis(3, 0).unwrap();
    let (r, definite) = reduced_hessian(&-DMatrix::<f64>::identity(3, 3), &u);
    assert_eq!(r, DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, -1.0, -2.0]));
    assert!(definite);
    let (_, definite) = reduced_hessian(&DMatrix::zeros(3, 3), &u);
    assert!(!definite);
}

#[test]
fn reduced_kl_determinant_is_inverse_product() {
    let star = SimplexPoint::normalized(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let obj = KlObjective::new(star.clone(), 0.0);
    let report = kl_report(&obj).unwrap();
    let expect: f64 = star.iter().map(|t| -t.ln()).sum();
    assert_relative_eq!(report.log_abs_det_reduced().unwrap(), expect, max_relative = 1e-10);
}

#[test]
fn reduced_and_full_determinants_agree_in_the_interior() {
    for seed in 0..20 {
        let (inst, _) = interior(seed, 4);
        let (_, report) = maximize(&inst, &CoverConfig::default()).unwrap();
        let full = log_det_spd(&-report.hessian_matrix()).unwrap();
        let reduced = report.log_abs_det_reduced().unwrap();
        assert!(((full - reduced).exp() - 1.0).abs() < 1e-8, "seed {seed}");
    }
}

#[test]
fn kkt_report_flags_non_stationary_points() {
    let (inst, _) = interior(1, 3);
    let err = kkt_report(&inst, &SimplexPoint::vertex(3, 0), &CoverConfig::default());
    assert!(err.is_err());
}
