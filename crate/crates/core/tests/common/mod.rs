#![allow(dead_code)]

use esd_core::gmm_prior::{build_spherical_prior, JointDataset, SphericalGmmPrior};
use esd_core::rng::stream;
use esd_core::score::{bayes_gmm_posterior, propagate_mixture_to_time};
use esd_core::gmm_prior::{to_dense_prior, DenseGmmPrior, ObservationModel};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct SphericalInstance {
    pub prior: SphericalGmmPrior,
    pub sigma_y2: f64,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
}

pub fn random_spherical(seed: u64, index: u64, t: f64) -> SphericalInstance {
    let mut rng = stream(seed, index);
    let k = rng.random_range(1..=100usize);
    let dx = rng.random_range(2..=10usize);
    let du = rng.random_range(1..dx);
    let dv = dx - du;
    let u = Array2::from_shape_fn((k, du), |_| rng.sample::<f64, _>(StandardNormal));
    let v = Array2::from_shape_fn((k, dv), |_| rng.sample::<f64, _>(StandardNormal));
    let data = JointDataset::new(u, v).unwrap();
    let sigma_u2 = rng.random_range(0.05..1.0);
    let sigma_v2 = rng.random_range(0.05..1.0);
    let prior = build_spherical_prior(&data, sigma_u2, sigma_v2).unwrap();
    let sigma_y2 = rng.random_range(0.01..1.0);
    let (alpha, beta) = (1.0 - t, t.sqrt());
    let pick = rng.random_range(0..k);
    let z = (0..dx)
        .map(|j| alpha * prior.means()[[pick, j]] + beta * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y = (0..dv)
        .map(|j| prior.means()[[pick, du + j]] + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SphericalInstance {
        prior,
        sigma_y2,
        z,
        y,
        t,
    }
}

/// `log p_{Z_t|Y}(z | y)` from the exact posterior mixture propagated to time `t`.
pub fn oracle_log_density(
    prior: &DenseGmmPrior,
    obs: &ObservationModel,
    y: &[f64],
    t: f64,
) -> impl Fn(&[f64]) -> f64 {
    let post = bayes_gmm_posterior(prior, obs, y).unwrap();
    let diffused = propagate_mixture_to_time(&post, t).unwrap();
    move |z: &[f64]| diffused.log_density(z)
}

pub fn finite_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn dense_pair(inst: &SphericalInstance) -> (DenseGmmPrior, ObservationModel) {
    (
        to_dense_prior(&inst.prior),
        ObservationModel::conditional(inst.prior.d_u(), inst.prior.d_v(), inst.sigma_y2).unwrap(),
    )
}
