//! Elliptic permeability-recovery benchmark: random log-permeability fields,
//! a bilinear finite element solver, sparse noisy observations, and the
//! error measures used to judge recovered coefficients.

mod dataset;
mod fem;
mod field;
mod metrics;
mod observe;

pub use dataset::{build_pde_dataset, PdeDataset};
pub use fem::{solve_elliptic, solve_elliptic_with_stats, SolutionField, SolveStats, CG_TOLERANCE};
pub use field::{log_permeability, sample_coefficients, PermeabilityCoefficients};
pub use metrics::{interquartile_range, median, quantile, recovery_metrics, RecoveryReport};
pub use observe::{apply_relative_noise, observe_clean, observe_solution, ObservationSpec};
