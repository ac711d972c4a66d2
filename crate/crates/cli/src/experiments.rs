//! Evaluation routines for the three benchmark problems, shared by the
//! pipeline stages, the ablation and convergence sweeps, and the tests.

use anyhow::{ensure, Result};
use esd_core::elliptic::{interquartile_range, median, recovery_metrics, PermeabilityCoefficients};
use esd_core::eval::{
    bayes_posterior_mixture, default_kl_grid, exact_bimodal_posterior, gmm_conditional_mixture, kde_density,
    kl_riemann, per_dimension_kl, project_onto_mode_line, projected_mixture, true_20d_conditional, Bandwidth,
    DensityGrid, GridSpec, Mixture1d,
};
use esd_core::gmm_prior::{NormalizationStats, SphericalGmmPrior};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// The prior together with the map between data units and the units it was built in.
pub struct Problem {
    pub prior: SphericalGmmPrior,
    pub stats: NormalizationStats,
    pub sigma_y2: f64,
}

impl Problem {
    pub fn normalize_y(&self, y: &[f64]) -> Vec<f64> {
        self.stats.normalize_y(y)
    }

    /// Maps a 1-D mixture over u-coordinate `dim` from prior units to data units.
    pub fn to_data_units(&self, mix: Mixture1d, dim: usize) -> Mixture1d {
        mix.affine(self.stats.std[dim], self.stats.mean[dim])
    }
}

/// Stats that leave data unchanged.
pub fn identity_stats(d_u: usize, d_v: usize) -> NormalizationStats {
    NormalizationStats {
        mean: vec![0.0; d_u + d_v],
        std: vec![1.0; d_u + d_v],
        d_u,
    }
}

/// KL divergences from the three bimodal reference posteriors to the KDE of `samples`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimodalErrors {
    pub e_exact: f64,
    pub e_gmm: f64,
    pub e_bgmm: f64,
}

/// Densities behind [`BimodalErrors`], for plotting.
pub struct BimodalDensities {
    pub grid: GridSpec,
    pub kde: DensityGrid,
    pub bgmm: DensityGrid,
    pub gmm: DensityGrid,
    pub exact: DensityGrid,
}

/// Scores data-unit samples of `u` given the raw observation `y`.
pub fn bimodal_errors(
    problem: &Problem,
    samples: &[f64],
    y: f64,
    noise_var: f64,
    bandwidth: Bandwidth,
) -> Result<(BimodalErrors, BimodalDensities)> {
    let y_norm = problem.normalize_y(&[y]);
    let bgmm = problem.to_data_units(bayes_posterior_mixture(&problem.prior, &y_norm, problem.sigma_y2, 0)?, 0);
    let gmm = problem.to_data_units(gmm_conditional_mixture(&problem.prior, &y_norm, 0)?, 0);
    let grid = default_kl_grid(samples, bgmm.support())?;
    let kde = kde_density(samples, &grid, bandwidth)?;
    let bgmm = bgmm.density_grid(&grid)?;
    let gmm = gmm.density_grid(&grid)?;
    let exact = exact_bimodal_posterior(y, noise_var, &grid)?;
    let errors = BimodalErrors {
        e_exact: kl_riemann(&exact, &kde)?,
        e_gmm: kl_riemann(&gmm, &kde)?,
        e_bgmm: kl_riemann(&bgmm, &kde)?,
    };
    Ok((
        errors,
        BimodalDensities {
            grid,
            kde,
            bgmm,
            gmm,
            exact,
        },
    ))
}

pub fn write_bimodal_densities(path: &std::path::Path, d: &BimodalDensities) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "u,kde,bgmm,gmm,exact")?;
    for i in 0..d.grid.n_points {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?}",
            d.grid.point(i),
            d.kde.values[i],
            d.bgmm.values[i],
            d.gmm.values[i],
            d.exact.values[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln e` against `ln n`.
pub fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Projected and per-dimension KL of data-unit `u` samples against the true
/// two-mode conditional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeErrors {
    pub projected_kl: f64,
    pub per_dim_kl: Vec<f64>,
    pub mean_per_dim_kl: f64,
}

pub fn two_mode_errors(
    samples: ArrayView2<f64>,
    mu1: &[f64],
    d_u: usize,
    y: &[f64],
    projection_bandwidth: f64,
    marginal_bandwidth: Bandwidth,
) -> Result<TwoModeErrors> {
    let mu2: Vec<f64> = mu1.iter().map(|m| -m).collect();
    let truth = true_20d_conditional(mu1, &mu2, d_u, y)?;
    let line = projected_mixture(&truth, &mu1[..d_u], &mu2[..d_u])?;
    let proj = project_onto_mode_line(samples, &mu1[..d_u], &mu2[..d_u])?;
    let grid = default_kl_grid(&proj, line.support())?;
    let projected_kl = kl_riemann(
        &line.density_grid(&grid)?,
        &kde_density(&proj, &grid, Bandwidth::Fixed(projection_bandwidth))?,
    )?;
    let per_dim = per_dimension_kl(samples, &truth, marginal_bandwidth)?;
    Ok(TwoModeErrors {
        projected_kl,
        per_dim_kl: per_dim.per_dim,
        mean_per_dim_kl: per_dim.mean,
    })
}

/// Spread summaries of a set of recovered coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    /// Interquartile range of the signed relative error at each observed location.
    pub error_iqr: Vec<f64>,
    pub permeability_mse_median: f64,
    pub permeability_mse_iqr: f64,
    pub solution_mse_median: f64,
    pub solution_mse_iqr: f64,
}

pub fn recovery_summary(
    truth: &PermeabilityCoefficients,
    generated: &[PermeabilityCoefficients],
    locations: &[[f64; 2]],
    grid_n: usize,
) -> Result<RecoverySummary> {
    ensure!(!generated.is_empty(), "no samples to score");
    let report = recovery_metrics(truth, generated, locations, grid_n)?;
    let error_iqr = report
        .signed_relative_error
        .columns()
        .into_iter()
        .map(|c| interquartile_range(&c.to_vec()))
        .collect();
    Ok(RecoverySummary {
        error_iqr,
        permeability_mse_median: median(&report.permeability_rel_mse),
        permeability_mse_iqr: interquartile_range(&report.permeability_rel_mse),
        solution_mse_median: median(&report.solution_rel_mse),
        solution_mse_iqr: interquartile_range(&report.solution_rel_mse),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(usize, f64)> = [8usize, 16, 32, 64].iter().map(|&n| (n, 3.0 / n as f64)).collect();
        assert!((log_log_slope(&pts) + 1.0).abs() < 1e-12);
    }
}
