use std::f64::consts::PI;

use esd_core::elliptic::*;
use esd_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

/// Double-sine series for `−Δu = 1` on the unit square with zero boundary values.
fn poisson_series(x: f64, y: f64, terms: usize) -> f64 {
    let mut sum = 0.0;
    for m in (1..terms).step_by(2) {
        for n in (1..terms).step_by(2) {
            let (mf, nf) = (m as f64, n as f64);
            sum += 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf)) * (mf * PI * x).sin() * (nf * PI * y).sin();
        }
    }
    sum
}

fn zero_b() -> PermeabilityCoefficients {
    PermeabilityCoefficients::zeros(2, 2).unwrap()
}

#[test]
fn poisson_center_matches_series() {
    let oracle = poisson_series(0.5, 0.5, 801);
    assert!((oracle - 0.07367).abs() < 1e-5, "series gives {oracle}");
    let (u, stats) = solve_elliptic_with_stats(&zero_b(), 64).unwrap();
    assert!(stats.relative_residual < 1e-10);
    assert!((u.node(32, 32) - oracle).abs() < 1e-3);
}

#[test]
fn poisson_center_converges_at_second_order() {
    let center = |n: usize| solve_elliptic(&zero_b(), n).unwrap().node(n / 2, n / 2);
    let reference = center(256);
    let errs: Vec<f64> = [16, 32, 64].iter().map(|&n| (center(n) - reference).abs()).collect();
    for pair in errs.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!((1.7..=2.3).contains(&order), "observed order {order}");
    }
}

#[test]
fn poisson_solution_is_symmetric() {
    let u = solve_elliptic(&zero_b(), 32).unwrap();
    for j in 0..=32 {
        for i in 0..=32 {
            assert!((u.node(i, j) - u.node(j, i)).abs() < 1e-12);
        }
    }
}

#[test]
fn transposed_coefficients_reflect_the_solution() {
    let b = PermeabilityCoefficients::new(2, 2, vec![0.7, -0.3, 0.5, 0.2]).unwrap();
    let u = solve_elliptic(&b, 32).unwrap();
    let ut = solve_elliptic(&b.transposed(), 32).unwrap();
    for j in 0..=32 {
        for i in 0..=32 {
            assert!((u.node(i, j) - ut.node(j, i)).abs() < 1e-9);
        }
    }
}

#[test]
fn field_landmarks() {
    let b = PermeabilityCoefficients::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!((log_permeability(&b, 0.25, 0.25) - 1.0).abs() < 1e-15);
    let b = PermeabilityCoefficients::new(2, 2, vec![0.4, -1.1, 2.0, 0.3]).unwrap();
    assert_eq!(b.get(1, 2), -1.1);
    assert_eq!(b.get(2, 1), 2.0);
    for t in [0.0, 0.3, 0.77] {
        assert!(log_permeability(&b, 0.0, t).abs() < 1e-15);
        assert!(log_permeability(&b, t, 0.0).abs() < 1e-15);
    }
}

#[test]
fn coefficient_moments() {
    let draws = sample_coefficients(2, 2, 100_000, 5).unwrap();
    let n = draws.len() as f64;
    let expected = [0.5, 1.0 / 3.0, 1.0 / 3.0, 0.25];
    for (j, var) in expected.iter().enumerate() {
        let est = draws.iter().map(|b| b.as_slice()[j].powi(2)).sum::<f64>() / n;
        let se = var * (2.0 / n).sqrt();
        assert!((est - var).abs() < 3.0 * se, "coefficient {j}: variance {est}");
    }
    let cov = draws.iter().map(|b| b.as_slice()[0] * b.as_slice()[3]).sum::<f64>() / n;
    assert!(cov.abs() < 3.0 * (0.5f64 * 0.25 / n).sqrt());
    assert_eq!(sample_coefficients(2, 2, 3, 9).unwrap(), sample_coefficients(2, 2, 3, 9).unwrap());
}

#[test]
fn observation_noise_has_requested_spread() {
    let u = solve_elliptic(&zero_b(), 16).unwrap();
    let spec = ObservationSpec::new(vec![[0.5, 0.5]], 0.01, 4).unwrap();
    let clean = observe_clean(&u, &spec.locations).unwrap()[0];
    assert_eq!(clean, u.node(8, 8));
    let ratios: Vec<f64> = (0..10_000)
        .map(|i| observe_solution(&u, &spec, i).unwrap()[0] / clean - 1.0)
        .collect();
    let mean = ratios.iter().sum::<f64>() / 1e4;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 9999.0).sqrt();
    assert!((sd - 0.1).abs() < 3.0 * 0.1 / (2.0f64 * 1e4).sqrt(), "sd {sd}");
    let quiet = ObservationSpec::new(vec![[0.3, 0.6]], 0.0, 4).unwrap();
    assert_eq!(
        observe_solution(&u, &quiet, 0).unwrap()[0],
        u.interpolate(0.3, 0.6).unwrap()
    );
}

#[test]
fn dataset_shape_and_replay() {
    let spec = ObservationSpec::random(10, 0.01, 3).unwrap();
    let data = build_pde_dataset(40, 2, 2, &spec, 16, 8).unwrap();
    let joint = data.joint().unwrap();
    assert_eq!((joint.k(), joint.d_u(), joint.d_v()), (40, 4, 10));
    for k in [0, 17, 39] {
        let replay = data.replay(k).unwrap();
        assert_eq!(replay, data.observations.row(k).to_vec());
    }
    assert_eq!(build_pde_dataset(40, 2, 2, &spec, 16, 8).unwrap(), data);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pde.json");
    data.write_json(&path).unwrap();
    assert_eq!(PdeDataset::read_json(&path).unwrap(), data);
}

#[test]
fn truth_scores_zero_error() {
    let b = sample_coefficients(2, 2, 1, 12).unwrap().remove(0);
    let spec = ObservationSpec::random(10, 0.01, 3).unwrap();
    let report = recovery_metrics(&b, &[b.clone()], &spec.locations, 16).unwrap();
    assert!(report.signed_relative_error.iter().all(|e| *e == 0.0));
    assert_eq!(report.permeability_rel_mse, vec![0.0]);
    assert_eq!(report.solution_rel_mse, vec![0.0]);
}

#[test]
fn quantile_helpers() {
    let v = [4.0, 1.0, 3.0, 2.0, 5.0];
    assert_eq!(median(&v), 3.0);
    assert_eq!(interquartile_range(&v), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interior_solution_is_positive(seed in 0u64..10_000) {
        let mut rng = stream(seed, 0);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = PermeabilityCoefficients::new(2, 2, b).unwrap();
        let (u, stats) = solve_elliptic_with_stats(&b, 16).unwrap();
        prop_assert!(stats.relative_residual < 1e-10);
        for j in 1..16 {
            for i in 1..16 {
                prop_assert!(u.node(i, j) > 0.0);
            }
        }
        for i in 0..=16 {
            prop_assert_eq!(u.node(i, 0), 0.0);
            prop_assert_eq!(u.node(0, i), 0.0);
            prop_assert_eq!(u.node(i, 16), 0.0);
            prop_assert_eq!(u.node(16, i), 0.0);
        }
    }
}
