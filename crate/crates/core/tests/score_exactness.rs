mod common;

use common::{dense_pair, finite_difference, oracle_log_density, random_spherical, relative_error};
use esd_core::gmm_prior::{DenseGmmPrior, ObservationModel, ObservationNoise};
use esd_core::score::{
    component_weights_general, component_weights_spherical, exact_score_general,
    exact_score_spherical, ConditionalScore, SphericalScore,
};
use nalgebra::{DMatrix, DVector};

const TIMES: [f64; 4] = [0.01, 0.3, 0.7, 0.99];

#[test]
fn spherical_and_dense_paths_agree() {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let inst = random_spherical(7, i, TIMES[i as usize % 4]);
        let (dense, obs) = dense_pair(&inst);
        let fast = exact_score_spherical(&inst.z, &inst.y, inst.t, &inst.prior, inst.sigma_y2).unwrap();
        let oracle = exact_score_general(&inst.z, &inst.y, inst.t, &dense, &obs).unwrap();
        worst = worst.max(relative_error(&fast, &oracle));
    }
    assert!(worst < 1e-9, "worst relative disagreement {worst:e}");
}

#[test]
fn spherical_weights_match_dense_weights() {
    for i in 0..50 {
        let inst = random_spherical(11, i, TIMES[i as usize % 4]);
        let (dense, obs) = dense_pair(&inst);
        let a = component_weights_spherical(&inst.z, &inst.y, inst.t, &inst.prior, inst.sigma_y2).unwrap();
        let b = component_weights_general(&inst.z, &inst.y, inst.t, &dense, &obs).unwrap();
        let total: f64 = a.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn both_paths_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let inst = random_spherical(13, i, TIMES[i as usize % 4]);
        let (dense, obs) = dense_pair(&inst);
        let logp = oracle_log_density(&dense, &obs, &inst.y, inst.t);
        let fd = finite_difference(&logp, &inst.z, 1e-5);
        let fast = exact_score_spherical(&inst.z, &inst.y, inst.t, &inst.prior, inst.sigma_y2).unwrap();
        let oracle = exact_score_general(&inst.z, &inst.y, inst.t, &dense, &obs).unwrap();
        worst = worst.max(relative_error(&fast, &fd)).max(relative_error(&oracle, &fd));
    }
    assert!(worst < 1e-5, "worst finite-difference error {worst:e}");
}

#[test]
fn batched_kernel_matches_reference_formula() {
    for truncate in [false, true] {
        for i in 0..60 {
            let inst = random_spherical(17, i, TIMES[i as usize % 4]);
            let kernel = SphericalScore::new(&inst.prior, inst.sigma_y2).unwrap().with_truncation(truncate);
            let mut out = vec![0.0; inst.z.len()];
            kernel.score(&inst.z, &inst.y, inst.t, &mut out).unwrap();
            let reference =
                exact_score_spherical(&inst.z, &inst.y, inst.t, &inst.prior, inst.sigma_y2).unwrap();
            assert!(relative_error(&out, &reference) < 1e-10);
        }
    }
}

#[test]
fn single_gaussian_matches_conjugate_closed_form() {
    // One component: the diffused posterior is Gaussian with mean α m and
    // covariance β² I + α² C, where (m, C) is the Kalman update.
    let inst = random_spherical(19, 3, 0.3);
    let du = inst.prior.d_u();
    let dv = inst.prior.d_v();
    let mu: Vec<f64> = inst.prior.means().row(0).to_vec();
    let prior = esd_core::gmm_prior::build_spherical_prior(
        &esd_core::gmm_prior::JointDataset::new(
            ndarray::Array2::from_shape_vec((1, du), mu[..du].to_vec()).unwrap(),
            ndarray::Array2::from_shape_vec((1, dv), mu[du..].to_vec()).unwrap(),
        )
        .unwrap(),
        inst.prior.sigma_u2(),
        inst.prior.sigma_v2(),
    )
    .unwrap();
    for t in TIMES {
        let (a, b2) = (1.0 - t, t);
        let s = exact_score_spherical(&inst.z, &inst.y, t, &prior, inst.sigma_y2).unwrap();
        for j in 0..du + dv {
            let (m, c) = if j < du {
                (mu[j], prior.sigma_u2())
            } else {
                let sv = prior.sigma_v2();
                let gain = sv / (sv + inst.sigma_y2);
                (mu[j] + gain * (inst.y[j - du] - mu[j]), sv * (1.0 - gain))
            };
            let expected = -(inst.z[j] - a * m) / (b2 + a * a * c);
            assert!((s[j] - expected).abs() < 1e-10 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn general_operator_matches_finite_differences() {
    let prior = DenseGmmPrior::new(
        vec![0.35, 0.65],
        vec![DVector::from_vec(vec![0.5, -1.0, 0.2]), DVector::from_vec(vec![-0.7, 0.4, 1.1])],
        vec![
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 0.8, -0.2, 0.1, -0.2, 0.5]),
            DMatrix::from_row_slice(3, 3, &[0.6, -0.1, 0.0, -0.1, 1.2, 0.25, 0.0, 0.25, 0.9]),
        ],
    )
    .unwrap();
    let obs = ObservationModel::new(
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -1.0]),
        ObservationNoise::Full(DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.3])),
    )
    .unwrap();
    let y = [0.3, -0.8];
    for t in TIMES {
        let z = [0.2, -0.5, 0.9];
        let logp = oracle_log_density(&prior, &obs, &y, t);
        let fd = finite_difference(&logp, &z, 1e-5);
        let s = exact_score_general(&z, &y, t, &prior, &obs).unwrap();
        assert!(relative_error(&s, &fd) < 1e-5, "t = {t}");
    }
}
