use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};
use crate::gmm_prior::JointDataset;
use crate::rng::derive_seed;

use super::fem::solve_elliptic;
use super::field::{sample_coefficients, PermeabilityCoefficients};
use super::observe::{apply_relative_noise, observe_clean, ObservationSpec};

/// Joint samples `(b_k, û_k)` together with everything needed to replay them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeDataset {
    pub spec: ObservationSpec,
    pub grid_n: usize,
    pub m: usize,
    pub l: usize,
    pub coefficients: Array2<f64>,
    pub noise: Array2<f64>,
    pub observations: Array2<f64>,
}

impl PdeDataset {
    pub fn len(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coefficients(&self, k: usize) -> Result<PermeabilityCoefficients> {
        PermeabilityCoefficients::new(self.m, self.l, self.coefficients.row(k).to_vec())
    }

    /// `u`-block: flattened coefficients; `v`-block: noisy observations.
    pub fn joint(&self) -> Result<JointDataset> {
        JointDataset::new(self.coefficients.clone(), self.observations.clone())
    }

    /// Re-solves sample `k` and applies its stored noise.
    pub fn replay(&self, k: usize) -> Result<Vec<f64>> {
        let u = solve_elliptic(&self.coefficients(k)?, self.grid_n)?;
        apply_relative_noise(&observe_clean(&u, &self.spec.locations)?, &self.noise.row(k).to_vec())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let data: Self = serde_json::from_slice(&fs::read(path)?)?;
        data.spec.validate()?;
        let (k, n_obs) = (data.coefficients.nrows(), data.spec.len());
        if data.coefficients.ncols() != data.m * data.l
            || data.noise.dim() != (k, n_obs)
            || data.observations.dim() != (k, n_obs)
        {
            return Err(EsdError::Schema("PDE dataset arrays have inconsistent shapes".into()));
        }
        Ok(data)
    }
}

/// Samples `k` coefficient vectors, solves on the `n × n` grid, and observes
/// each solution with relative noise. Solves run in parallel; each sample's
/// randomness comes from its own stream, so the result is thread-count independent.
pub fn build_pde_dataset(
    k: usize,
    m: usize,
    l: usize,
    spec: &ObservationSpec,
    n: usize,
    seed: u64,
) -> Result<PdeDataset> {
    spec.validate()?;
    if k == 0 {
        return Err(param("K", "need at least one sample"));
    }
    let coeffs = sample_coefficients(m, l, k, derive_seed(seed, "pde/coefficients"))?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = coeffs
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let u = solve_elliptic(b, n)?;
            let noise = spec.noise(i as u64);
            let obs = apply_relative_noise(&observe_clean(&u, &spec.locations)?, &noise)?;
            Ok((noise, obs))
        })
        .collect::<Result<_>>()?;
    let n_obs = spec.len();
    let coefficients = Array2::from_shape_fn((k, m * l), |(i, j)| coeffs[i].as_slice()[j]);
    let noise = Array2::from_shape_fn((k, n_obs), |(i, j)| rows[i].0[j]);
    let observations = Array2::from_shape_fn((k, n_obs), |(i, j)| rows[i].1[j]);
    Ok(PdeDataset {
        spec: spec.clone(),
        grid_n: n,
        m,
        l,
        coefficients,
        noise,
        observations,
    })
}
