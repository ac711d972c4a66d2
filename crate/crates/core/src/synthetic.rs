//! Joint-sample generators for the bimodal and two-mode Gaussian benchmarks.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{param, positive, Result};
use crate::gmm_prior::JointDataset;
use crate::rng::stream;

/// `U ~ Uniform[-2, 2]`, `V = U² + ε`, `ε ~ N(0, σ²)`; row `k` uses stream `k`.
pub fn bimodal_joint_samples(k: usize, noise_var: f64, seed: u64) -> Result<JointDataset> {
    positive("noise_var", noise_var)?;
    if k == 0 {
        return Err(param("k", "need at least one sample"));
    }
    let sd = noise_var.sqrt();
    let mut u = Array2::zeros((k, 1));
    let mut v = Array2::zeros((k, 1));
    for i in 0..k {
        let mut rng = stream(seed, i as u64);
        let ui: f64 = rng.random_range(-2.0..2.0);
        let e: f64 = rng.sample(StandardNormal);
        u[[i, 0]] = ui;
        v[[i, 0]] = ui * ui + sd * e;
    }
    JointDataset::new(u, v)
}

/// Means `±μ₁` of the 20-D two-mode benchmark: blocks of five entries valued
/// 1.35, 0.5, 0.2, 0.1.
pub fn two_mode_means() -> (Vec<f64>, Vec<f64>) {
    let mu1: Vec<f64> = [1.35, 0.5, 0.2, 0.1]
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, 5))
        .collect();
    let mu2 = mu1.iter().map(|x| -x).collect();
    (mu1, mu2)
}

/// Equal-weight mixture of `N(μ₁, I)` and `N(μ₂, I)`, split after `d_u` coordinates.
pub fn two_mode_joint_samples(
    k: usize,
    mu1: &[f64],
    mu2: &[f64],
    d_u: usize,
    seed: u64,
) -> Result<JointDataset> {
    if mu1.len() != mu2.len() || d_u == 0 || d_u >= mu1.len() {
        return Err(param("d_u", "must split the mean vectors into two nonempty blocks"));
    }
    if k == 0 {
        return Err(param("k", "need at least one sample"));
    }
    let d = mu1.len();
    let mut x = Array2::zeros((k, d));
    for i in 0..k {
        let mut rng = stream(seed, i as u64);
        let mu = if rng.random_bool(0.5) { mu1 } else { mu2 };
        for j in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            x[[i, j]] = mu[j] + e;
        }
    }
    JointDataset::from_joint(x.view(), d_u)
}
