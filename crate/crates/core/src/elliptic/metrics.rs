use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EsdError, Result};

use super::fem::solve_elliptic;
use super::field::{log_permeability, PermeabilityCoefficients};
use super::observe::observe_clean;

/// Per-sample recovery errors against a known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// `(u_gen − u_true)/u_true`, one row per generated sample, one column per location.
    pub signed_relative_error: Array2<f64>,
    /// `Σ (e^{k_gen} − e^{k_true})² / Σ e^{2 k_true}` over the grid nodes.
    pub permeability_rel_mse: Vec<f64>,
    /// `Σ (u_gen − u_true)² / Σ u_true²` over the observation locations.
    pub solution_rel_mse: Vec<f64>,
}

fn permeability_nodes(b: &PermeabilityCoefficients, n: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    (0..=n)
        .flat_map(|j| (0..=n).map(move |i| (i, j)))
        .map(|(i, j)| log_permeability(b, i as f64 * h, j as f64 * h).exp())
        .collect()
}

fn relative_mse(a: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(truth).map(|(x, t)| (x - t).powi(2)).sum();
    num / truth.iter().map(|t| t * t).sum::<f64>()
}

/// Solves for every generated coefficient vector and compares its noise-free
/// readings and permeability field with the truth.
pub fn recovery_metrics(
    true_b: &PermeabilityCoefficients,
    generated: &[PermeabilityCoefficients],
    locations: &[[f64; 2]],
    n: usize,
) -> Result<RecoveryReport> {
    if generated.is_empty() {
        return Err(EsdError::InsufficientData("no generated samples to score".into()));
    }
    let u_true = observe_clean(&solve_elliptic(true_b, n)?, locations)?;
    let k_true = permeability_nodes(true_b, n);
    let keep: Vec<usize> = (0..u_true.len()).filter(|&i| u_true[i] != 0.0).collect();
    if keep.len() < u_true.len() {
        log::warn!("{} locations with zero true solution excluded", u_true.len() - keep.len());
    }
    let rows: Vec<(Vec<f64>, f64, f64)> = generated
        .par_iter()
        .map(|b| {
            let u = observe_clean(&solve_elliptic(b, n)?, locations)?;
            let signed = keep.iter().map(|&i| (u[i] - u_true[i]) / u_true[i]).collect();
            let perm = relative_mse(&permeability_nodes(b, n), &k_true);
            Ok((signed, perm, relative_mse(&u, &u_true)))
        })
        .collect::<Result<_>>()?;
    let signed_relative_error = Array2::from_shape_fn((rows.len(), keep.len()), |(s, i)| rows[s].0[i]);
    Ok(RecoveryReport {
        signed_relative_error,
        permeability_rel_mse: rows.iter().map(|r| r.1).collect(),
        solution_rel_mse: rows.iter().map(|r| r.2).collect(),
    })
}

/// Linear-interpolation quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn interquartile_range(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}
