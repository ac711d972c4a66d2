use nalgebra::DVector;
use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{EsdError, Result};
use crate::score::GaussianMixture;

use super::kde::Bandwidth;
use super::kl::kl_samples_vs_mixture;
use super::reference::Mixture1d;

fn mode_axis(mu1: &[f64], mu2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mu1.len() != mu2.len() {
        return Err(EsdError::Shape("mode means differ in length".into()));
    }
    let diff: Vec<f64> = mu1.iter().zip(mu2).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(EsdError::Degenerate("the two mode means coincide".into()));
    }
    let mid = mu1.iter().zip(mu2).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((mid, diff.into_iter().map(|x| x / norm).collect()))
}

/// Signed coordinate of each row along the unit axis from `μ₂` to `μ₁`,
/// measured from their midpoint.
pub fn project_onto_mode_line(samples: ArrayView2<f64>, mu1: &[f64], mu2: &[f64]) -> Result<Vec<f64>> {
    let (mid, e) = mode_axis(mu1, mu2)?;
    if samples.ncols() != e.len() {
        return Err(EsdError::Shape(format!("samples have {} columns, means {}", samples.ncols(), e.len())));
    }
    Ok(samples
        .rows()
        .into_iter()
        .map(|x| x.iter().zip(&mid).zip(&e).map(|((x, m), e)| (x - m) * e).sum())
        .collect())
}

/// Law of the mode-line projection of a Gaussian mixture: component means
/// `(μ_k − m)·e` and variances `eᵀ Σ_k e`.
pub fn projected_mixture(mix: &GaussianMixture, mu1: &[f64], mu2: &[f64]) -> Result<Mixture1d> {
    let (mid, e) = mode_axis(mu1, mu2)?;
    if mix.dim() != e.len() {
        return Err(EsdError::Shape(format!("mixture has dimension {}, means {}", mix.dim(), e.len())));
    }
    let e = DVector::from_vec(e);
    let mid = DVector::from_vec(mid);
    let means = mix.means().iter().map(|mu| (mu - &mid).dot(&e)).collect();
    let vars = mix.covariances().iter().map(|c| (c * &e).dot(&e)).collect();
    Mixture1d::new(mix.weights().to_vec(), means, vars)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerDimensionKl {
    pub per_dim: Vec<f64>,
    pub mean: f64,
}

/// KDE-vs-analytic KL for each coordinate marginal of `reference`.
pub fn per_dimension_kl(
    samples: ArrayView2<f64>,
    reference: &GaussianMixture,
    bandwidth: Bandwidth,
) -> Result<PerDimensionKl> {
    let d = reference.dim();
    if samples.ncols() != d {
        return Err(EsdError::Shape(format!("samples have {} columns, reference {d}", samples.ncols())));
    }
    let per_dim = (0..d)
        .into_par_iter()
        .map(|j| {
            let marginal = reference.marginal(&[j])?;
            let one_d = Mixture1d::new(
                marginal.weights().to_vec(),
                marginal.means().iter().map(|m| m[0]).collect(),
                marginal.covariances().iter().map(|c| c[(0, 0)]).collect(),
            )?;
            let column = samples.column(j).to_vec();
            kl_samples_vs_mixture(&column, &one_d, bandwidth)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_dim.iter().sum::<f64>() / d as f64;
    Ok(PerDimensionKl { per_dim, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn projection_landmarks() {
        let mu1 = [1.0, 2.0];
        let mu2 = [-1.0, 0.0];
        let x = array![[1.0, 2.0], [0.0, 1.0], [-1.0, 0.0]];
        let s = project_onto_mode_line(x.view(), &mu1, &mu2).unwrap();
        let half = 0.5 * 8f64.sqrt();
        assert!((s[0] - half).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert!((s[2] + half).abs() < 1e-15);
        assert!(project_onto_mode_line(x.view(), &mu1, &mu1).is_err());
    }
}
