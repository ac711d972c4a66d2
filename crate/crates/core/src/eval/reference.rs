use nalgebra::{DMatrix, DVector};

use crate::error::{param, positive, EsdError, Result};
use crate::gmm_prior::SphericalGmmPrior;
use crate::math::{normal_pdf, softmax_in_place, squared_distance, LN_2PI};
use crate::score::GaussianMixture;

use super::grid::{DensityGrid, GridSpec};

/// One-dimensional Gaussian mixture, the common form of every analytic reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl Mixture1d {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != vars.len() {
            return Err(EsdError::Shape("mixture weights, means and variances differ in length".into()));
        }
        if vars.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(param("vars", "component variances must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(param("weights", format!("must be nonnegative and sum to 1, sum is {total}")));
        }
        Ok(Self { weights, means, vars })
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .filter(|((w, _), _)| **w > 0.0)
            .map(|((w, m), v)| w * normal_pdf(x, *m, *v))
            .sum()
    }

    pub fn density_grid(&self, grid: &GridSpec) -> Result<DensityGrid> {
        DensityGrid::from_fn(*grid, |x| self.density(x))
    }

    /// Law of `scale · X + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| scale * m + shift).collect(),
            vars: self.vars.iter().map(|v| scale * scale * v).collect(),
        }
    }

    /// Interval holding all components with nonnegligible weight, ±6 standard deviations.
    pub fn support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ((w, m), v) in self.weights.iter().zip(&self.means).zip(&self.vars) {
            if *w < 1e-12 {
                continue;
            }
            let r = 6.0 * v.sqrt();
            lo = lo.min(m - r);
            hi = hi.max(m + r);
        }
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }
}

/// Softmax of `log π_k − ½‖x − c_k‖²/var` over the prior rows, where `c_k` is the v-block mean.
fn v_block_weights(prior: &SphericalGmmPrior, x: &[f64], var: f64) -> Result<Vec<f64>> {
    if x.len() != prior.d_v() {
        return Err(EsdError::Shape(format!("conditioning vector has length {}, expected {}", x.len(), prior.d_v())));
    }
    let v_means = prior.v_means();
    let mut lw: Vec<f64> = v_means
        .rows()
        .into_iter()
        .zip(prior.weights())
        .map(|(vk, pi)| pi.ln() - 0.5 * squared_distance(vk.as_slice().expect("standard layout"), x) / var)
        .collect();
    softmax_in_place(&mut lw);
    Ok(lw)
}

fn u_marginal(prior: &SphericalGmmPrior, weights: Vec<f64>, dim: usize) -> Result<Mixture1d> {
    if dim >= prior.d_u() {
        return Err(param("dim", format!("{dim} is not a u coordinate (d_u = {})", prior.d_u())));
    }
    let means = prior.u_means().column(dim).to_vec();
    let vars = vec![prior.sigma_u2(); weights.len()];
    Mixture1d::new(weights, means, vars)
}

/// Marginal along u-coordinate `dim` of `p(u | V = v)` for the block-spherical prior:
/// weights `∝ π_k φ(v; v_k, σ_V² I)`, components `N(u_k, σ_U²)`.
pub fn gmm_conditional_mixture(prior: &SphericalGmmPrior, v: &[f64], dim: usize) -> Result<Mixture1d> {
    let w = v_block_weights(prior, v, prior.sigma_v2())?;
    u_marginal(prior, w, dim)
}

/// Marginal along u-coordinate `dim` of `p(u | Y = y)` with `Y = V + N(0, σ_Y² I)`.
/// The u-block is untouched by the observation, so only the weights change:
/// `∝ π_k φ(y; v_k, (σ_V² + σ_Y²) I)`.
pub fn bayes_posterior_mixture(prior: &SphericalGmmPrior, y: &[f64], sigma_y2: f64, dim: usize) -> Result<Mixture1d> {
    positive("sigma_y2", sigma_y2)?;
    let w = v_block_weights(prior, y, prior.sigma_v2() + sigma_y2)?;
    u_marginal(prior, w, dim)
}

pub fn gmm_conditional_density(prior: &SphericalGmmPrior, v: &[f64], dim: usize, grid: &GridSpec) -> Result<DensityGrid> {
    gmm_conditional_mixture(prior, v, dim)?.density_grid(grid)
}

pub fn bayes_posterior_density(
    prior: &SphericalGmmPrior,
    y: &[f64],
    sigma_y2: f64,
    dim: usize,
    grid: &GridSpec,
) -> Result<DensityGrid> {
    bayes_posterior_mixture(prior, y, sigma_y2, dim)?.density_grid(grid)
}

/// Posterior of `U ~ Uniform[-2, 2]` given `V = U² + ε = v`, normalized by the
/// grid Riemann sum so that it integrates to one on `grid`.
pub fn exact_bimodal_posterior(v: f64, sigma_true2: f64, grid: &GridSpec) -> Result<DensityGrid> {
    positive("sigma_true2", sigma_true2)?;
    let log_kernel = |u: f64| -(v - u * u).powi(2) / (2.0 * sigma_true2);
    let pts = grid.points();
    let peak = pts
        .iter()
        .filter(|u| u.abs() <= 2.0)
        .map(|&u| log_kernel(u))
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(param("grid", "does not intersect the prior support [-2, 2]"));
    }
    let mut values: Vec<f64> = pts
        .iter()
        .map(|&u| if u.abs() <= 2.0 { (log_kernel(u) - peak).exp() } else { 0.0 })
        .collect();
    let mass = grid.step() * values.iter().sum::<f64>();
    values.iter_mut().for_each(|p| *p /= mass);
    DensityGrid::new(*grid, values)
}

/// `p(u | v = y)` for the equal-weight two-mode Gaussian with identity
/// covariances, split after `d_u` coordinates.
pub fn true_20d_conditional(mu1: &[f64], mu2: &[f64], d_u: usize, y: &[f64]) -> Result<GaussianMixture> {
    let d = mu1.len();
    if mu2.len() != d || d_u == 0 || d_u >= d || y.len() != d - d_u {
        return Err(EsdError::Shape(format!(
            "means of length {}/{}, split {d_u}, observation of length {}",
            d,
            mu2.len(),
            y.len()
        )));
    }
    let d_v = d - d_u;
    let mut lw: Vec<f64> = [mu1, mu2]
        .iter()
        .map(|mu| (0.5f64).ln() - 0.5 * d_v as f64 * LN_2PI - 0.5 * squared_distance(&mu[d_u..], y))
        .collect();
    softmax_in_place(&mut lw);
    let means = vec![DVector::from_column_slice(&mu1[..d_u]), DVector::from_column_slice(&mu2[..d_u])];
    let covs = vec![DMatrix::identity(d_u, d_u); 2];
    GaussianMixture::new(lw, means, covs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::two_mode_means;
    use ndarray::array;

    #[test]
    fn single_component_ignores_v() {
        let prior = SphericalGmmPrior::new(array![[0.3, 2.0]], 1, 0.05, 0.1, vec![1.0]).unwrap();
        for v in [-3.0, 0.0, 7.0] {
            let m = gmm_conditional_mixture(&prior, &[v], 0).unwrap();
            assert_eq!(m.means, vec![0.3]);
            assert_eq!(m.vars, vec![0.05]);
            assert_eq!(m.weights, vec![1.0]);
        }
    }

    #[test]
    fn bimodal_posterior_shape() {
        let grid = GridSpec::new(-2.5, 2.5, 10_001).unwrap();
        let p = exact_bimodal_posterior(1.0, 0.1, &grid).unwrap();
        assert!((p.integral() - 1.0).abs() < 1e-6);
        for i in 0..grid.n_points {
            assert!((p.values[i] - p.values[grid.n_points - 1 - i]).abs() < 1e-12);
        }
        let argmax = (0..grid.n_points / 2).max_by(|&a, &b| p.values[a].total_cmp(&p.values[b])).unwrap();
        assert!((grid.point(argmax) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn twenty_d_weights() {
        let (mu1, mu2) = two_mode_means();
        let sym = true_20d_conditional(&mu1, &mu2, 15, &[0.0; 5]).unwrap();
        assert!((sym.weights()[0] - 0.5).abs() < 1e-15);
        let tilted = true_20d_conditional(&mu1, &mu2, 15, &[0.5; 5]).unwrap();
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((tilted.weights()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.6225).abs() < 1e-4);
        assert!((tilted.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
