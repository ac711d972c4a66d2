//! Density grids, kernel density estimates, Riemann-sum KL divergences, and
//! the analytic reference densities used to score samplers.

mod grid;
mod kde;
mod kl;
mod projection;
mod reference;

pub use grid::{default_kl_grid, DensityGrid, GridSpec, DEFAULT_GRID_POINTS};
pub use kde::{kde_density, silverman_bandwidth, Bandwidth};
pub use kl::{kl_riemann, kl_samples_vs_mixture, write_kl_reports_csv, KlReport, KL_FLOOR};
pub use projection::{
    per_dimension_kl, project_onto_mode_line, projected_mixture, PerDimensionKl,
};
pub use reference::{
    bayes_posterior_density, bayes_posterior_mixture, exact_bimodal_posterior,
    gmm_conditional_density, gmm_conditional_mixture, true_20d_conditional, Mixture1d,
};
